#pragma once

#include <Eigen/Dense>

#include "rsteer/rng.hpp"

namespace rsteer::uncertainty {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Ellipsoidal deterministic uncertainty set
//   U[tau] = { zeta = Gamma z : <S z, z> <= tau },
// with S symmetric positive definite and tau > 0.
class UncertaintySet {
public:
  // Throws std::invalid_argument if S is not SPD or tau <= 0.
  UncertaintySet(MatrixXd Gamma, MatrixXd S, double tau);

  // Gamma = I, S = I in dimension n.
  static UncertaintySet identity(int n, double tau);

  const MatrixXd& Gamma() const { return Gamma_; }
  const MatrixXd& S() const { return S_; }
  double tau() const { return tau_; }
  int n_zeta() const { return static_cast<int>(Gamma_.rows()); }
  int n_bar() const { return static_cast<int>(Gamma_.cols()); }

  // ||v||_{S^-1} via the cached Cholesky factor (no explicit inverse).
  double s_inv_norm(const VectorXd& v) const;
  // R such that ||v||_{S^-1} = ||R v||_2, i.e. R = L^-1 with S = L L^T.
  const MatrixXd& s_inv_sqrt() const { return s_inv_sqrt_; }

private:
  MatrixXd Gamma_, S_;
  double tau_;
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd s_inv_sqrt_;
};

// Gaussian noise model for the stacked vector w = [s_0; w_0; ...; w_{T-1}]:
// covariance sigma_w (PSD) together with a factor phi, phi phi^T = sigma_w.
struct NoiseModel {
  MatrixXd sigma_w;
  MatrixXd phi;

  static NoiseModel from_covariance(const MatrixXd& sigma_w);
};

// sqrt(tau) * ||Mt_a||_{S^-1}: the maximum of a^T M zeta over zeta in the set,
// where the caller supplies Mt_a = Gamma^T M^T a. The minimum is its negation.
double support_value(const UncertaintySet& set, const VectorXd& Mt_a);

// Worst-case z attaining the support value for the direction Mt_a
// (zeta* = Gamma z*). Throws if Mt_a is numerically zero.
VectorXd worst_case_z(const UncertaintySet& set, const VectorXd& Mt_a);

enum class SampleMode { Interior, Boundary };

// Draws count disturbances zeta = Gamma z with <S z, z> <= tau (Interior,
// approximately uniform in the ellipsoid) or = tau (Boundary). Deterministic
// given the seed.
std::vector<VectorXd> sample_disturbance(const UncertaintySet& set, int count,
                                         std::uint64_t seed, SampleMode mode);

// Factor phi with phi phi^T = sigma_w. Uses Cholesky when positive definite
// and falls back to an eigendecomposition factor for PSD-singular input.
// Throws std::invalid_argument on asymmetric input.
MatrixXd factor_noise(const MatrixXd& sigma_w);

// True iff zeta lies in the set: a least-squares preimage z with residual
// below 1e-8 exists and <S z, z> <= tau + 1e-9.
bool membership(const UncertaintySet& set, const VectorXd& zeta);

}  // namespace rsteer::uncertainty
