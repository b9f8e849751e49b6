#include "rsteer/uncertainty.hpp"

#include <cmath>
#include <stdexcept>

namespace rsteer::uncertainty {

UncertaintySet::UncertaintySet(MatrixXd Gamma, MatrixXd S, double tau)
    : Gamma_(std::move(Gamma)), S_(std::move(S)), tau_(tau) {
  if (tau_ <= 0.0) throw std::invalid_argument("tau must be positive");
  if (S_.rows() != S_.cols() || S_.rows() != Gamma_.cols())
    throw std::invalid_argument("S must be n_bar x n_bar");
  if (!S_.isApprox(S_.transpose(), 1e-12))
    throw std::invalid_argument("S must be symmetric");
  llt_.compute(S_);
  if (llt_.info() != Eigen::Success)
    throw std::invalid_argument("S must be positive definite");
  // L^-1 from S = L L^T, so ||v||_{S^-1}^2 = ||L^-1 v||^2.
  const int n = static_cast<int>(S_.rows());
  s_inv_sqrt_ =
      llt_.matrixL().solve(MatrixXd::Identity(n, n));
}

UncertaintySet UncertaintySet::identity(int n, double tau) {
  return UncertaintySet(MatrixXd::Identity(n, n), MatrixXd::Identity(n, n),
                        tau);
}

double UncertaintySet::s_inv_norm(const VectorXd& v) const {
  return llt_.matrixL().solve(v).norm();
}

NoiseModel NoiseModel::from_covariance(const MatrixXd& sigma_w) {
  NoiseModel m;
  m.sigma_w = sigma_w;
  m.phi = factor_noise(sigma_w);
  return m;
}

double support_value(const UncertaintySet& set, const VectorXd& Mt_a) {
  if (Mt_a.size() != set.n_bar())
    throw std::invalid_argument("Mt_a must have dimension n_bar");
  return std::sqrt(set.tau()) * set.s_inv_norm(Mt_a);
}

VectorXd worst_case_z(const UncertaintySet& set, const VectorXd& Mt_a) {
  const double nrm = set.s_inv_norm(Mt_a);
  if (nrm < 1e-14)
    throw std::invalid_argument("direction is numerically zero");
  // z* = sqrt(tau) S^-1 Mt_a / ||Mt_a||_{S^-1}; attains <S z, z> = tau.
  const VectorXd s_inv_v = set.S().llt().solve(Mt_a);
  return std::sqrt(set.tau()) / nrm * s_inv_v;
}

std::vector<VectorXd> sample_disturbance(const UncertaintySet& set, int count,
                                         std::uint64_t seed, SampleMode mode) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  const int n = set.n_bar();
  // <S z, z> = tau on the boundary; with S = L L^T, z = sqrt(tau) L^-T y for
  // unit y. Interior points additionally scale by U^(1/n).
  Eigen::LLT<MatrixXd> llt(set.S());
  Rng rng(seed);
  std::vector<VectorXd> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    VectorXd y = rng.sphere(n);
    double r = std::sqrt(set.tau());
    if (mode == SampleMode::Interior)
      r *= std::pow(rng.uniform(), 1.0 / static_cast<double>(n));
    VectorXd z = r * llt.matrixL().transpose().solve(y);
    out.push_back(set.Gamma() * z);
  }
  return out;
}

MatrixXd factor_noise(const MatrixXd& sigma_w) {
  if (sigma_w.rows() != sigma_w.cols())
    throw std::invalid_argument("sigma_w must be square");
  if (!sigma_w.isApprox(sigma_w.transpose(), 1e-10))
    throw std::invalid_argument("sigma_w must be symmetric");
  Eigen::LLT<MatrixXd> llt(sigma_w);
  if (llt.info() == Eigen::Success) {
    MatrixXd phi = llt.matrixL();
    if ((phi * phi.transpose() - sigma_w).cwiseAbs().maxCoeff() < 1e-10)
      return phi;
  }
  // PSD-but-singular input: eigendecomposition factor with clipped spectrum.
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sigma_w);
  VectorXd lam = eig.eigenvalues();
  if (lam.minCoeff() < -1e-9)
    throw std::invalid_argument("sigma_w must be positive semidefinite");
  return eig.eigenvectors() * lam.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

bool membership(const UncertaintySet& set, const VectorXd& zeta) {
  if (zeta.size() != set.n_zeta())
    throw std::invalid_argument("zeta has wrong dimension");
  VectorXd z = set.Gamma().colPivHouseholderQr().solve(zeta);
  if ((set.Gamma() * z - zeta).norm() > 1e-8) return false;
  return z.dot(set.S() * z) <= set.tau() + 1e-9;
}

}  // namespace rsteer::uncertainty
