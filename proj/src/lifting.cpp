#include "rsteer/lifting.hpp"

#include <stdexcept>
#include <string>

namespace rsteer::lifting {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

void AgentDynamics::validate() const {
  require(T >= 1, "horizon T must be at least 1");
  require(x0_bar.size() >= 1, "x0_bar must be nonempty");
  const auto n = static_cast<Eigen::Index>(T);
  require(A.size() == static_cast<size_t>(n) && B.size() == A.size() &&
              C.size() == A.size() && D.size() == A.size(),
          "A/B/C/D sequences must all have length T");
  require(gamma_h >= 1 && gamma_h <= T, "gamma_h must satisfy 1 <= gamma_h <= T");
  const int n_x = nx();
  for (int k = 0; k < T; ++k) {
    require(A[k].rows() == n_x && A[k].cols() == n_x,
            "A[" + std::to_string(k) + "] must be n_x x n_x");
    require(B[k].rows() == n_x && B[k].cols() == B[0].cols(),
            "B[" + std::to_string(k) + "] has inconsistent dimensions");
    require(C[k].rows() == n_x && C[k].cols() == C[0].cols(),
            "C[" + std::to_string(k) + "] has inconsistent dimensions");
    require(D[k].rows() == n_x && D[k].cols() == D[0].cols(),
            "D[" + std::to_string(k) + "] has inconsistent dimensions");
  }
}

MatrixXd LiftedDynamics::selector(int k) const {
  MatrixXd P = MatrixXd::Zero(nx, n_states());
  P.block(0, k * nx, nx, nx).setIdentity();
  return P;
}

Eigen::Block<const MatrixXd> LiftedDynamics::state_rows(const MatrixXd& m,
                                                        int k) const {
  return m.block(k * nx, 0, nx, m.cols());
}

VectorXd LiftedDynamics::state_at(const VectorXd& x_seq, int k) const {
  return x_seq.segment(k * nx, nx);
}

Policy::Policy(int T, int nx, int nu, int gamma_h)
    : T_(T), nx_(nx), nu_(nu), gamma_h_(gamma_h) {
  if (gamma_h < 1 || gamma_h > T)
    throw std::invalid_argument("gamma_h must satisfy 1 <= gamma_h <= T");
  u_bar_ = VectorXd::Zero(static_cast<Eigen::Index>(T) * nu);
  K_ = MatrixXd::Zero(static_cast<Eigen::Index>(T) * nu,
                      static_cast<Eigen::Index>(T + 1) * nx);
}

MatrixXd Policy::gain_block(int k, int l) const {
  return K_.block(k * nu_, l * nx_, nu_, nx_);
}

void Policy::set_gain_block(int k, int l, const MatrixXd& value) {
  if (!block_allowed(k, l))
    throw std::invalid_argument("gain block (" + std::to_string(k) + "," +
                                std::to_string(l) +
                                ") is outside the feedback window");
  if (value.rows() != nu_ || value.cols() != nx_)
    throw std::invalid_argument("gain block must be n_u x n_x");
  K_.block(k * nu_, l * nx_, nu_, nx_) = value;
}

MatrixXd transition(const AgentDynamics& dyn, int k1, int k2) {
  const int n_x = dyn.nx();
  MatrixXd phi = MatrixXd::Identity(n_x, n_x);
  for (int k = k2; k < k1; ++k) phi = dyn.A[k] * phi;
  return phi;
}

LiftedDynamics build_lifted(const AgentDynamics& dyn) {
  dyn.validate();
  const int T = dyn.T;
  const int n_x = dyn.nx(), n_u = dyn.nu(), n_d = dyn.nd(), n_w = dyn.nw();

  LiftedDynamics lift;
  lift.T = T;
  lift.nx = n_x;
  lift.nu = n_u;
  lift.nd = n_d;
  lift.nw = n_w;
  lift.G0 = MatrixXd::Zero((T + 1) * n_x, n_x);
  lift.Gu = MatrixXd::Zero((T + 1) * n_x, T * n_u);
  lift.Gw = MatrixXd::Zero((T + 1) * n_x, n_x + T * n_w);
  lift.Gzeta = MatrixXd::Zero((T + 1) * n_x, n_x + T * n_d);

  // Row block k is filled from row block k-1 by one propagation step, which
  // realizes Phi(k, j+1) B_j etc. without recomputing products.
  lift.G0.topRows(n_x).setIdentity();
  lift.Gw.topLeftCorner(n_x, n_x).setIdentity();
  lift.Gzeta.topLeftCorner(n_x, n_x).setIdentity();

  for (int k = 1; k <= T; ++k) {
    const auto& Ak = dyn.A[k - 1];
    lift.G0.middleRows(k * n_x, n_x) =
        Ak * lift.G0.middleRows((k - 1) * n_x, n_x);
    lift.Gu.middleRows(k * n_x, n_x) =
        Ak * lift.Gu.middleRows((k - 1) * n_x, n_x);
    lift.Gw.middleRows(k * n_x, n_x) =
        Ak * lift.Gw.middleRows((k - 1) * n_x, n_x);
    lift.Gzeta.middleRows(k * n_x, n_x) =
        Ak * lift.Gzeta.middleRows((k - 1) * n_x, n_x);
    lift.Gu.block(k * n_x, (k - 1) * n_u, n_x, n_u) = dyn.B[k - 1];
    lift.Gw.block(k * n_x, n_x + (k - 1) * n_w, n_x, n_w) = dyn.D[k - 1];
    lift.Gzeta.block(k * n_x, n_x + (k - 1) * n_d, n_x, n_d) = dyn.C[k - 1];
  }
  return lift;
}

VectorXd state_mean(const LiftedDynamics& lift, const VectorXd& x0_bar,
                    const Policy& pol, const VectorXd& zeta) {
  if (x0_bar.size() != lift.nx)
    throw std::invalid_argument("x0_bar has wrong dimension");
  if (zeta.size() != lift.n_zeta())
    throw std::invalid_argument("zeta must have dimension n_x + T n_d");
  if (pol.u_bar().size() != lift.Gu.cols())
    throw std::invalid_argument("policy horizon inconsistent with lift");
  const VectorXd gz = lift.Gzeta * zeta;
  return lift.G0 * x0_bar + lift.Gu * pol.u_bar() + lift.Gu * (pol.K() * gz) +
         gz;
}

MatrixXd state_covariance(const LiftedDynamics& lift, const Policy& pol,
                          const MatrixXd& sigma_w) {
  if (sigma_w.rows() != lift.n_noise() || sigma_w.cols() != lift.n_noise())
    throw std::invalid_argument("sigma_w must be (n_x + T n_w) square");
  if (!sigma_w.isApprox(sigma_w.transpose(), 1e-12))
    throw std::invalid_argument("sigma_w must be symmetric");
  // (Gu K + I) Gw Sigma Gw^T (Gu K + I)^T, built as F Sigma F^T.
  MatrixXd F = lift.Gw + lift.Gu * (pol.K() * lift.Gw);
  MatrixXd cov = F * sigma_w * F.transpose();
  return 0.5 * (cov + cov.transpose());
}

RolloutResult rollout(const AgentDynamics& dyn, const Policy& pol,
                      const VectorXd& zeta, const VectorXd& w) {
  if (zeta.size() != dyn.n_zeta())
    throw std::invalid_argument("zeta must have dimension n_x + T n_d");
  if (w.size() != dyn.n_noise())
    throw std::invalid_argument("w must have dimension n_x + T n_w");
  const int T = dyn.T;
  const int n_x = dyn.nx(), n_u = dyn.nu(), n_d = dyn.nd(), n_w = dyn.nw();

  RolloutResult out;
  out.states.resize(n_x, T + 1);
  out.controls.resize(n_u, T);

  // Purified-state history; delta_0 = d0_bar + s_0.
  MatrixXd delta(n_x, T + 1);
  delta.col(0) = zeta.head(n_x) + w.head(n_x);
  out.states.col(0) = dyn.x0_bar + delta.col(0);

  for (int k = 0; k < T; ++k) {
    VectorXd u = pol.u_bar().segment(k * n_u, n_u);
    const int l0 = std::max(0, k - dyn.gamma_h + 1);
    for (int l = l0; l <= k; ++l)
      u += pol.gain_block(k, l) * delta.col(l);
    out.controls.col(k) = u;

    const VectorXd dk = zeta.segment(n_x + k * n_d, n_d);
    const VectorXd wk = w.segment(n_x + k * n_w, n_w);
    delta.col(k + 1) = dyn.A[k] * delta.col(k) + dyn.C[k] * dk + dyn.D[k] * wk;
    out.states.col(k + 1) = dyn.A[k] * out.states.col(k) + dyn.B[k] * u +
                            dyn.C[k] * dk + dyn.D[k] * wk;
  }
  return out;
}

}  // namespace rsteer::lifting
