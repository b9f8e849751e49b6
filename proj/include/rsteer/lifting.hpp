#pragma once

#include <Eigen/Dense>
#include <vector>

namespace rsteer::lifting {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Discrete-time LTV dynamics of one agent,
//   x_{k+1} = A_k x_k + B_k u_k + C_k d_k + D_k w_k,  k = 0..T-1,
// with x_0 = x0_bar + d0_bar + s0. The deterministic disturbance sequence is
// zeta = [d0_bar; d_0; ...; d_{T-1}] and the stochastic one is
// w = [s_0; w_0; ...; w_{T-1}].
struct AgentDynamics {
  std::vector<MatrixXd> A;  // n_x x n_x, length T
  std::vector<MatrixXd> B;  // n_x x n_u
  std::vector<MatrixXd> C;  // n_x x n_d
  std::vector<MatrixXd> D;  // n_x x n_w
  VectorXd x0_bar;          // known part of the initial state
  int T = 0;                // horizon
  int gamma_h = 0;          // feedback history window, 1 <= gamma_h <= T

  int nx() const { return static_cast<int>(x0_bar.size()); }
  int nu() const { return static_cast<int>(B.at(0).cols()); }
  int nd() const { return static_cast<int>(C.at(0).cols()); }
  int nw() const { return static_cast<int>(D.at(0).cols()); }
  int n_zeta() const { return nx() + T * nd(); }
  int n_noise() const { return nx() + T * nw(); }

  // Throws std::invalid_argument on inconsistent dimensions or horizon.
  void validate() const;
};

// Stacked-horizon form of the dynamics:
//   x_seq = G0 x0_bar + Gu u_seq + Gw w + Gzeta zeta,
// with x_seq = [x_0; ...; x_T].
struct LiftedDynamics {
  MatrixXd G0;     // (T+1)n_x x n_x
  MatrixXd Gu;     // (T+1)n_x x T n_u
  MatrixXd Gw;     // (T+1)n_x x (n_x + T n_w)
  MatrixXd Gzeta;  // (T+1)n_x x (n_x + T n_d)
  int T = 0;
  int nx = 0, nu = 0, nd = 0, nw = 0;

  int n_states() const { return (T + 1) * nx; }
  int n_zeta() const { return nx + T * nd; }
  int n_noise() const { return nx + T * nw; }

  // Selector P_k with x_k = P_k x_seq.
  MatrixXd selector(int k) const;
  // Rows of a stacked matrix/vector belonging to time step k (P_k applied).
  Eigen::Block<const MatrixXd> state_rows(const MatrixXd& m, int k) const;
  VectorXd state_at(const VectorXd& x_seq, int k) const;
};

// Affine purified-state feedback policy u_k = u_bar_k + sum_l K_{k,l} delta_l,
// stored in stacked form. The gain is lower block triangular with a history
// window: block (k, l) may be nonzero only for max(0, k - gamma_h + 1) <= l <= k.
class Policy {
public:
  Policy(int T, int nx, int nu, int gamma_h);

  static Policy zero(const AgentDynamics& dyn) {
    return Policy(dyn.T, dyn.nx(), dyn.nu(), dyn.gamma_h);
  }

  int T() const { return T_; }
  int nx() const { return nx_; }
  int nu() const { return nu_; }
  int gamma_h() const { return gamma_h_; }

  bool block_allowed(int k, int l) const {
    return k >= 0 && k < T_ && l >= 0 && l <= k && l >= k - gamma_h_ + 1;
  }

  const VectorXd& u_bar() const { return u_bar_; }
  VectorXd& u_bar() { return u_bar_; }

  // Full T n_u x (T+1) n_x gain matrix; forbidden blocks are exactly zero.
  const MatrixXd& K() const { return K_; }

  MatrixXd gain_block(int k, int l) const;
  // Throws std::invalid_argument when (k, l) is outside the allowed window.
  void set_gain_block(int k, int l, const MatrixXd& value);

private:
  int T_, nx_, nu_, gamma_h_;
  VectorXd u_bar_;
  MatrixXd K_;
};

// State transition product Phi(k1, k2) = A_{k1-1} ... A_{k2}, Phi(k, k) = I.
MatrixXd transition(const AgentDynamics& dyn, int k1, int k2);

// Builds the stacked block matrices from the step dynamics.
LiftedDynamics build_lifted(const AgentDynamics& dyn);

// Exact mean of the state sequence for a fixed deterministic disturbance:
//   G0 x0_bar + Gu u_bar + (Gu K + I) Gzeta zeta.
VectorXd state_mean(const LiftedDynamics& lift, const VectorXd& x0_bar,
                    const Policy& pol, const VectorXd& zeta);

// Exact covariance of the state sequence:
//   (Gu K + I) Gw Sigma_w Gw^T (Gu K + I)^T.
// Depends on neither zeta nor u_bar.
MatrixXd state_covariance(const LiftedDynamics& lift, const Policy& pol,
                          const MatrixXd& sigma_w);

struct RolloutResult {
  MatrixXd states;    // n_x x (T+1)
  MatrixXd controls;  // n_u x T
};

// Simulates the closed loop step by step, maintaining the purified state
// delta_k = x_k - xhat_k and applying the windowed feedback law.
RolloutResult rollout(const AgentDynamics& dyn, const Policy& pol,
                      const VectorXd& zeta, const VectorXd& w);

}  // namespace rsteer::lifting
