#include "rsteer/constraints.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace rsteer::constraints {

using conic::LinExpr;

double gaussian_quantile(double p) {
  if (!(p > 0.0 && p < 0.5))
    throw std::invalid_argument("probability threshold must lie in (0, 0.5)");
  // Rational approximation of the standard normal inverse CDF at p (lower
  // tail), then Newton steps on 0.5 erfc(-x / sqrt 2) = p. eta = -Phi^-1(p).
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double qq = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * qq + c[1]) * qq + c[2]) * qq + c[3]) * qq + c[4]) * qq +
         c[5]) /
        ((((d[0] * qq + d[1]) * qq + d[2]) * qq + d[3]) * qq + 1.0);
  } else {
    const double qq = p - 0.5;
    const double r = qq * qq;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        qq /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
    const double pdf =
        std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
    x -= (cdf - p) / pdf;
  }
  return -x;
}

HalfSpace linearize_norm_lower_bound(const VectorXd& center,
                                     const VectorXd& b) {
  VectorXd diff = center - b;
  const double nrm = diff.norm();
  if (nrm <= 1e-9)
    throw std::invalid_argument(
        "linearization point coincides with the excluded center");
  HalfSpace hs;
  hs.g = diff / nrm;
  hs.offset = hs.g.dot(b);
  return hs;
}

AgentVars::AgentVars(conic::ConicProgram& prog,
                     const lifting::AgentDynamics& dyn,
                     const lifting::LiftedDynamics& lift,
                     const uncertainty::UncertaintySet& set,
                     const uncertainty::NoiseModel* noise,
                     const MatrixXd& h_pos, std::string prefix, bool margins)
    : prog_(&prog),
      dyn_(&dyn),
      lift_(&lift),
      set_(&set),
      noise_(noise),
      h_pos_(h_pos),
      prefix_(std::move(prefix)),
      margins_(margins) {
  const int T = lift.T, nx = lift.nx, nu = lift.nu;
  ubar_ = prog_->add_block(prefix_ + "ubar", T * nu);

  // Feedback gain with the history-window sparsity as a structural mask.
  std::vector<std::uint8_t> mask(static_cast<size_t>(T * nu) * (T + 1) * nx, 0);
  for (int k = 0; k < T; ++k)
    for (int l = std::max(0, k - dyn.gamma_h + 1); l <= k; ++l)
      for (int r = 0; r < nu; ++r)
        for (int c = 0; c < nx; ++c)
          mask[static_cast<size_t>(k * nu + r) * ((T + 1) * nx) + l * nx + c] =
              1;
  gain_ = prog_->add_block(prefix_ + "K", T * nu, (T + 1) * nx, mask);

  mu_d_bounded_.assign(T + 1, false);

  s_inv_sqrt_gamma_t_ =
      std::sqrt(set.tau()) * set.s_inv_sqrt() * set.Gamma().transpose();
  identity_margin_ =
      (s_inv_sqrt_gamma_t_.rows() == s_inv_sqrt_gamma_t_.cols()) &&
      s_inv_sqrt_gamma_t_.isApprox(
          std::sqrt(set.tau()) * MatrixXd::Identity(set.n_bar(), set.n_bar()),
          1e-14);
}

void AgentVars::add_policy_cost(double r_u, double r_k) {
  const auto& ub = prog_->block(ubar_);
  for (int i = 0; i < ub.rows; ++i)
    prog_->obj_add_quad(prog_->var(ubar_, i), prog_->var(ubar_, i), r_u);
  const auto& kb = prog_->block(gain_);
  for (int r = 0; r < kb.rows; ++r)
    for (int c = 0; c < kb.cols; ++c) {
      const int v = prog_->var(gain_, r, c);
      if (v >= 0) prog_->obj_add_quad(v, v, r_k * r_k);
    }
}

int AgentVars::mu_hat_block() {
  if (mu_hat_ >= 0) return mu_hat_;
  const int T = lift_->T, nx = lift_->nx;
  const int mm = m();
  mu_hat_ = prog_->add_block(prefix_ + "mu_hat", (T + 1) * mm);
  // mu_hat_k = H (P_k G0 x0 + P_k Gu ubar)
  const VectorXd g0x = lift_->G0 * dyn_->x0_bar;
  for (int k = 0; k <= T; ++k) {
    const MatrixXd hpgu = h_pos_ * lift_->Gu.middleRows(k * nx, nx);
    const VectorXd hg0 = h_pos_ * g0x.segment(k * nx, nx);
    for (int r = 0; r < mm; ++r) {
      LinExpr e;
      e.add(prog_->var(mu_hat_, k * mm + r), -1.0);
      for (int j = 0; j < hpgu.cols(); ++j)
        if (hpgu(r, j) != 0.0) e.add(prog_->var(ubar_, j), hpgu(r, j));
      e.add_constant(hg0[r]);
      prog_->add_equality(e, prefix_ + "mu_hat_def");
    }
  }
  return mu_hat_;
}

int AgentVars::mu_d_block() {
  if (mu_d_ >= 0) return mu_d_;
  mu_d_ = prog_->add_block(prefix_ + "mu_d", (T() + 1) * m());
  return mu_d_;
}

int AgentVars::mu_hat_var(int k, int row) {
  return prog_->var(mu_hat_block(), k * m() + row);
}

int AgentVars::mu_d_var(int k, int row) {
  return prog_->var(mu_d_block(), k * m() + row);
}

conic::LinExpr AgentVars::mu_hat_expr(int k, int row) {
  LinExpr e;
  e.add(mu_hat_var(k, row), 1.0);
  return e;
}

conic::LinExpr AgentVars::mean_expr(const VectorXd& a_stacked) {
  if (a_stacked.size() != lift_->n_states())
    throw std::invalid_argument("mean row has wrong dimension");
  LinExpr e(a_stacked.dot(lift_->G0 * dyn_->x0_bar));
  const VectorXd gu_a = lift_->Gu.transpose() * a_stacked;
  for (int j = 0; j < gu_a.size(); ++j)
    if (gu_a[j] != 0.0) e.add(prog_->var(ubar_, j), gu_a[j]);
  return e;
}

void AgentVars::ensure_zeta_response() {
  if (!zeta_resp_.empty()) return;
  const int T = lift_->T, nx = lift_->nx, nu = lift_->nu;
  const int nz = lift_->n_zeta();
  zeta_resp_.reserve(T);
  for (int k = 1; k <= T; ++k)
    zeta_resp_.push_back(
        prog_->add_block(prefix_ + "zresp" + std::to_string(k), nx, nz));

  // Z_{k+1} = A_k Z_k + B_k sum_l K_{k,l} (P_l Gzeta) + injection, with
  // Z_0 = P_0 Gzeta constant.
  for (int k = 0; k < T; ++k) {
    const MatrixXd& Ak = dyn_->A[k];
    const MatrixXd& Bk = dyn_->B[k];
    const MatrixXd inj = lift_->Gzeta.middleRows((k + 1) * nx, nx) -
                         Ak * lift_->Gzeta.middleRows(k * nx, nx);
    const int l0 = std::max(0, k - dyn_->gamma_h + 1);
    for (int aa = 0; aa < nx; ++aa)
      for (int c = 0; c < nz; ++c) {
        LinExpr e;
        e.add(prog_->var(zeta_resp_[k], aa, c), -1.0);
        double rhs_const = inj(aa, c);
        if (k == 0) {
          rhs_const += (Ak * lift_->Gzeta.topRows(nx))(aa, c);
        } else {
          for (int bb = 0; bb < nx; ++bb)
            if (Ak(aa, bb) != 0.0)
              e.add(prog_->var(zeta_resp_[k - 1], bb, c), Ak(aa, bb));
        }
        for (int l = l0; l <= k; ++l)
          for (int dd = 0; dd < nu; ++dd) {
            if (Bk(aa, dd) == 0.0) continue;
            for (int ee = 0; ee < nx; ++ee) {
              const double coef = Bk(aa, dd) * lift_->Gzeta(l * nx + ee, c);
              if (coef != 0.0)
                e.add(prog_->var(gain_, k * nu + dd, l * nx + ee), coef);
            }
          }
        e.add_constant(rhs_const);
        prog_->add_equality(e, prefix_ + "zresp_def");
      }
  }
}

void AgentVars::ensure_noise_response() {
  if (!noise_resp_.empty()) return;
  const int T = lift_->T, nx = lift_->nx, nu = lift_->nu;
  const int nw = lift_->n_noise();
  noise_resp_.reserve(T);
  for (int k = 1; k <= T; ++k)
    noise_resp_.push_back(
        prog_->add_block(prefix_ + "wresp" + std::to_string(k), nx, nw));
  for (int k = 0; k < T; ++k) {
    const MatrixXd& Ak = dyn_->A[k];
    const MatrixXd& Bk = dyn_->B[k];
    const MatrixXd inj = lift_->Gw.middleRows((k + 1) * nx, nx) -
                         Ak * lift_->Gw.middleRows(k * nx, nx);
    const int l0 = std::max(0, k - dyn_->gamma_h + 1);
    for (int aa = 0; aa < nx; ++aa)
      for (int c = 0; c < nw; ++c) {
        LinExpr e;
        e.add(prog_->var(noise_resp_[k], aa, c), -1.0);
        double rhs_const = inj(aa, c);
        if (k == 0) {
          rhs_const += (Ak * lift_->Gw.topRows(nx))(aa, c);
        } else {
          for (int bb = 0; bb < nx; ++bb)
            if (Ak(aa, bb) != 0.0)
              e.add(prog_->var(noise_resp_[k - 1], bb, c), Ak(aa, bb));
        }
        for (int l = l0; l <= k; ++l)
          for (int dd = 0; dd < nu; ++dd) {
            if (Bk(aa, dd) == 0.0) continue;
            for (int ee = 0; ee < nx; ++ee) {
              const double coef = Bk(aa, dd) * lift_->Gw(l * nx + ee, c);
              if (coef != 0.0)
                e.add(prog_->var(gain_, k * nu + dd, l * nx + ee), coef);
            }
          }
        e.add_constant(rhs_const);
        prog_->add_equality(e, prefix_ + "wresp_def");
      }
  }
}

conic::LinExpr AgentVars::zeta_response_expr(int k, int r, int c) {
  if (k == 0) return LinExpr(lift_->Gzeta(r, c));
  ensure_zeta_response();
  LinExpr e;
  e.add(prog_->var(zeta_resp_[k - 1], r, c), 1.0);
  return e;
}

conic::LinExpr AgentVars::noise_response_expr(int k, int r, int c) {
  if (k == 0) return LinExpr(lift_->Gw(r, c));
  ensure_noise_response();
  LinExpr e;
  e.add(prog_->var(noise_resp_[k - 1], r, c), 1.0);
  return e;
}

std::vector<conic::LinExpr> AgentVars::robust_margin_rows(
    const VectorXd& a_stacked) {
  const int T = lift_->T, nx = lift_->nx;
  const int nz = lift_->n_zeta();
  ensure_zeta_response();
  // v_c = (M' a)_c = sum_k (Z_k' a_k)_c with Z_0 constant.
  std::vector<LinExpr> v(nz);
  for (int c = 0; c < nz; ++c) {
    double cst = 0.0;
    for (int r = 0; r < nx; ++r)
      if (a_stacked[r] != 0.0) cst += a_stacked[r] * lift_->Gzeta(r, c);
    v[c].add_constant(cst);
  }
  for (int k = 1; k <= T; ++k)
    for (int r = 0; r < nx; ++r) {
      const double ar = a_stacked[k * nx + r];
      if (ar == 0.0) continue;
      for (int c = 0; c < nz; ++c)
        v[c].add(prog_->var(zeta_resp_[k - 1], r, c), ar);
    }
  if (identity_margin_) {
    const double scal = std::sqrt(set_->tau());
    for (auto& e : v) e *= scal;
    return v;
  }
  // rows = sqrt(tau) R Gamma' v with R the S^-1/2 factor.
  const MatrixXd& W = s_inv_sqrt_gamma_t_;
  std::vector<LinExpr> rows(W.rows());
  for (int dd = 0; dd < W.rows(); ++dd) {
    LinExpr e;
    for (int c = 0; c < nz; ++c) {
      const double w = W(dd, c);
      if (w == 0.0) continue;
      for (const auto& [var, coef] : v[c].terms()) e.add(var, w * coef);
      e.add_constant(w * v[c].constant());
    }
    rows[dd] = std::move(e);
  }
  return rows;
}

std::vector<conic::LinExpr> AgentVars::noise_margin_rows(
    const VectorXd& a_stacked) {
  if (noise_ == nullptr)
    throw std::invalid_argument("agent has no stochastic noise model");
  const int T = lift_->T, nx = lift_->nx;
  const int nw = lift_->n_noise();
  ensure_noise_response();
  std::vector<LinExpr> v(nw);
  for (int c = 0; c < nw; ++c) {
    double cst = 0.0;
    for (int r = 0; r < nx; ++r)
      if (a_stacked[r] != 0.0) cst += a_stacked[r] * lift_->Gw(r, c);
    v[c].add_constant(cst);
  }
  for (int k = 1; k <= T; ++k)
    for (int r = 0; r < nx; ++r) {
      const double ar = a_stacked[k * nx + r];
      if (ar == 0.0) continue;
      for (int c = 0; c < nw; ++c)
        v[c].add(prog_->var(noise_resp_[k - 1], r, c), ar);
    }
  const MatrixXd phit = noise_->phi.transpose();
  std::vector<LinExpr> rows(phit.rows());
  for (int dd = 0; dd < phit.rows(); ++dd) {
    LinExpr e;
    for (int c = 0; c < nw; ++c) {
      const double w = phit(dd, c);
      if (w == 0.0) continue;
      for (const auto& [var, coef] : v[c].terms()) e.add(var, w * coef);
      e.add_constant(w * v[c].constant());
    }
    rows[dd] = std::move(e);
  }
  return rows;
}

int AgentVars::ensure_mu_d_bounds(int k) {
  if (mu_d_bounded_.at(k)) return 0;
  mu_d_bounded_[k] = true;
  mu_d_block();
  const int nx = lift_->nx;
  int added = 0;
  if (!margins_) {
    for (int mm = 0; mm < m(); ++mm) {
      prog_->add_nonneg(LinExpr().add(mu_d_var(k, mm), 1.0),
                        prefix_ + "mu_d_nonneg[" + std::to_string(k) + "," +
                            std::to_string(mm) + "]");
      ++added;
    }
    return added;
  }
  for (int mm = 0; mm < m(); ++mm) {
    VectorXd a = VectorXd::Zero(lift_->n_states());
    a.segment(k * nx, nx) = h_pos_.row(mm).transpose();
    std::vector<LinExpr> rows;
    rows.push_back(LinExpr().add(mu_d_var(k, mm), 1.0));
    for (auto& r : robust_margin_rows(a)) rows.push_back(std::move(r));
    prog_->add_soc(rows, prefix_ + "mu_d_bound[" + std::to_string(k) + "," +
                             std::to_string(mm) + "]");
    ++added;
  }
  return added;
}

int AgentVars::add_scalar(const std::string& name) {
  const int b = prog_->add_block(prefix_ + name, 1);
  return prog_->var(b, 0);
}

VectorXd AgentVars::open_loop_mu_d() const {
  const int T = lift_->T, nx = lift_->nx;
  VectorXd out((T + 1) * m());
  for (int k = 0; k <= T; ++k)
    for (int mm = 0; mm < m(); ++mm) {
      const VectorXd h = h_pos_.row(mm).transpose();
      const VectorXd mt = lift_->Gzeta.middleRows(k * nx, nx).transpose() * h;
      out[k * m() + mm] =
          uncertainty::support_value(*set_, set_->Gamma().transpose() * mt);
    }
  return out;
}

void reformulate_linear_mean(AgentVars& vars, const LinearMean& spec) {
  LinExpr mean = vars.mean_expr(spec.a);
  mean *= -1.0;
  mean.add_constant(spec.b);  // b - a.mu
  std::vector<LinExpr> rows;
  rows.push_back(std::move(mean));
  for (auto& r : vars.robust_margin_rows(spec.a)) rows.push_back(std::move(r));
  vars.prog().add_soc(rows, vars.prefix() + "linear_mean");
}

void reformulate_mean_target(AgentVars& vars, const MeanTargetBox& spec) {
  LinExpr eq = vars.mean_expr(spec.a_bar);
  eq.add_constant(-spec.b_bar);
  vars.prog().add_equality(eq, vars.prefix() + "mean_target_eq");
  if (!std::isfinite(spec.epsilon)) return;
  std::vector<LinExpr> rows;
  rows.push_back(LinExpr(spec.epsilon));
  for (auto& r : vars.robust_margin_rows(spec.a_bar))
    rows.push_back(std::move(r));
  vars.prog().add_soc(rows, vars.prefix() + "mean_target_spread");
}

void reformulate_obstacle_socp(AgentVars& vars, const ObstacleAvoid& spec,
                               const VectorXd& nominal_pos,
                               const std::string& tag) {
  const int mm = vars.m();
  VectorXd center = nominal_pos.segment(spec.k * mm, mm);
  if ((center - spec.b).norm() <= 1e-9) {
    std::cerr << "warning: nominal trajectory at obstacle center (step "
              << spec.k << "); perturbing linearization point\n";
    center[0] += 1e-3;
  }
  const HalfSpace hs = linearize_norm_lower_bound(center, spec.b);
  const int ctilde = vars.add_scalar("ct_obs[" + tag + "]");

  LinExpr half;
  for (int r = 0; r < mm; ++r)
    if (hs.g[r] != 0.0) half.add(vars.mu_hat_var(spec.k, r), hs.g[r]);
  half.add(ctilde, -1.0);
  half.add_constant(-hs.offset);
  vars.prog().add_nonneg(half, vars.prefix() + "obstacle_lin[" + tag + "]");

  std::vector<LinExpr> soc;
  soc.push_back(LinExpr(-spec.c).add(ctilde, 1.0));
  for (int r = 0; r < mm; ++r)
    soc.push_back(LinExpr().add(vars.mu_d_var(spec.k, r), 1.0));
  vars.prog().add_soc(soc, vars.prefix() + "obstacle_soc[" + tag + "]");

  vars.ensure_mu_d_bounds(spec.k);
}

void reformulate_interagent_socp(AgentVars& vars, const InterAgentAvoid& spec,
                                 AgentVars* neighbor_vars,
                                 const NeighborCopies* copies,
                                 const VectorXd& nominal_pos_i,
                                 const VectorXd& nominal_pos_j,
                                 const std::string& tag) {
  if ((neighbor_vars == nullptr) == (copies == nullptr))
    throw std::invalid_argument(
        "exactly one of neighbor_vars / copies must be provided");
  const int mm = vars.m();
  VectorXd pi = nominal_pos_i.segment(spec.k * mm, mm);
  VectorXd pj = nominal_pos_j.segment(spec.k * mm, mm);
  if ((pi - pj).norm() <= 1e-9) {
    std::cerr << "warning: coincident nominal positions (step " << spec.k
              << "); perturbing linearization point\n";
    pi[0] += 1e-3;
  }
  const HalfSpace hs = linearize_norm_lower_bound(pi, pj);
  const int ctilde = vars.add_scalar("ct_pair[" + tag + "]");

  auto neighbor_mu_hat = [&](int r) {
    return copies ? vars.prog().var(copies->mu_hat_block, spec.k * mm + r)
                  : neighbor_vars->mu_hat_var(spec.k, r);
  };
  auto neighbor_mu_d = [&](int r) {
    return copies ? vars.prog().var(copies->mu_d_block, spec.k * mm + r)
                  : neighbor_vars->mu_d_var(spec.k, r);
  };

  // g . (mu_hat_i - mu_hat_j) >= c_tilde, the linearized separation row.
  LinExpr half;
  for (int r = 0; r < mm; ++r)
    if (hs.g[r] != 0.0) {
      half.add(vars.mu_hat_var(spec.k, r), hs.g[r]);
      half.add(neighbor_mu_hat(r), -hs.g[r]);
    }
  half.add(ctilde, -1.0);
  vars.prog().add_nonneg(half, vars.prefix() + "interagent_lin[" + tag + "]");

  std::vector<LinExpr> soc;
  soc.push_back(LinExpr(-spec.c_ij).add(ctilde, 1.0));
  for (int r = 0; r < mm; ++r) {
    LinExpr e;
    e.add(vars.mu_d_var(spec.k, r), 1.0);
    e.add(neighbor_mu_d(r), 1.0);
    soc.push_back(std::move(e));
  }
  vars.prog().add_soc(soc, vars.prefix() + "interagent_soc[" + tag + "]");

  vars.ensure_mu_d_bounds(spec.k);
  if (neighbor_vars != nullptr) neighbor_vars->ensure_mu_d_bounds(spec.k);
}

void reformulate_obstacle_sdp_baseline(AgentVars& vars,
                                       const ObstacleAvoid& spec,
                                       const VectorXd& nominal_u_bar,
                                       const lifting::Policy& nominal_policy,
                                       const std::string& tag) {
  const auto& lift = vars.lift();
  const auto& set = vars.set();
  const int nx = lift.nx, mm = vars.m();
  const int nbar = set.n_bar();
  const int k = spec.k;

  // Nominal closed-loop response and nominal position at step k.
  const MatrixXd Ml = lift.Gzeta + lift.Gu * (nominal_policy.K() * lift.Gzeta);
  const MatrixXd R0 = vars.h_pos() * Ml.middleRows(k * nx, nx);
  const VectorXd mul = lift.G0 * vars.dyn().x0_bar + lift.Gu * nominal_u_bar;
  const VectorXd pl = vars.h_pos() * mul.segment(k * nx, nx);

  const MatrixXd RG = R0 * set.Gamma();  // m x nbar
  // ZG[r][j]: expressions for (H Z_k Gamma)(r, j).
  std::vector<std::vector<LinExpr>> ZG(mm, std::vector<LinExpr>(nbar));
  for (int r = 0; r < mm; ++r)
    for (int j = 0; j < nbar; ++j) {
      LinExpr e;
      for (int c = 0; c < lift.n_zeta(); ++c) {
        const double gc = set.Gamma()(c, j);
        if (gc == 0.0) continue;
        for (int aa = 0; aa < nx; ++aa) {
          const double h = vars.h_pos()(r, aa);
          if (h == 0.0) continue;
          LinExpr z = vars.zeta_response_expr(k, aa, c);
          for (const auto& [var, coef] : z.terms()) e.add(var, h * gc * coef);
          e.add_constant(h * gc * z.constant());
        }
      }
      ZG[r][j] = std::move(e);
    }

  const int beta = vars.add_scalar("beta[" + tag + "]");
  vars.prog().add_nonneg(LinExpr().add(beta, 1.0),
                         vars.prefix() + "beta_nonneg[" + tag + "]");

  const MatrixXd RGtRG = RG.transpose() * RG;
  // LMI [Gamma'QGamma + beta S, (Qbar Gamma)'; Qbar Gamma, q - c^2 - beta tau]
  // with Q, Qbar, q linear in the response and mu_hat variables.
  std::vector<std::vector<LinExpr>> upper(nbar + 1);
  for (int i = 0; i < nbar; ++i) {
    upper[i].resize(static_cast<size_t>(nbar) - i);
    for (int j = i; j < nbar; ++j) {
      LinExpr e(-RGtRG(i, j));
      for (int r = 0; r < mm; ++r) {
        for (const auto& [var, coef] : ZG[r][j].terms())
          e.add(var, RG(r, i) * coef);
        e.add_constant(RG(r, i) * ZG[r][j].constant());
        for (const auto& [var, coef] : ZG[r][i].terms())
          e.add(var, RG(r, j) * coef);
        e.add_constant(RG(r, j) * ZG[r][i].constant());
      }
      e.add(beta, set.S()(i, j));
      upper[i][static_cast<size_t>(j) - i] = std::move(e);
    }
    LinExpr qbar;
    for (int r = 0; r < mm; ++r) {
      const double w = pl[r] - spec.b[r];
      for (const auto& [var, coef] : ZG[r][i].terms()) qbar.add(var, w * coef);
      qbar.add_constant(w * ZG[r][i].constant());
      qbar.add(vars.mu_hat_var(k, r), RG(r, i));
      qbar.add_constant(-pl[r] * RG(r, i));
    }
    upper[i].push_back(std::move(qbar));
  }
  LinExpr corner(-spec.c * spec.c);
  for (int r = 0; r < mm; ++r) {
    const double w = pl[r] - spec.b[r];
    corner.add(vars.mu_hat_var(k, r), 2.0 * w);
    corner.add_constant(-w * (pl[r] + spec.b[r]));
  }
  corner.add(beta, -set.tau());
  upper[nbar] = {std::move(corner)};

  vars.prog().add_psd(nbar + 1, upper,
                      vars.prefix() + "obstacle_sdp[" + tag + "]");
}

void reformulate_chance(AgentVars& vars, const ChanceLinear& spec,
                        const std::string& tag) {
  if (!(spec.p > 0.0 && spec.p < 0.5))
    throw std::invalid_argument(
        "chance threshold p must lie strictly inside (0, 0.5)");
  const double eta = gaussian_quantile(spec.p);
  const int alpha = vars.add_scalar("alpha[" + tag + "]");

  LinExpr mean = vars.mean_expr(spec.a);
  mean *= -1.0;
  mean.add_constant(spec.b);
  mean.add(alpha, -1.0);  // b - alpha - a.mu
  std::vector<LinExpr> rows;
  rows.push_back(std::move(mean));
  for (auto& r : vars.robust_margin_rows(spec.a)) rows.push_back(std::move(r));
  vars.prog().add_soc(rows, vars.prefix() + "chance_mean[" + tag + "]");

  std::vector<LinExpr> noise_rows;
  noise_rows.push_back(LinExpr().add(alpha, 1.0));
  for (auto& r : vars.noise_margin_rows(spec.a)) {
    r *= eta;
    noise_rows.push_back(std::move(r));
  }
  vars.prog().add_soc(noise_rows, vars.prefix() + "chance_noise[" + tag + "]");
}

void reformulate_covariance(AgentVars& vars, const CovarianceBound& spec,
                            const std::string& tag) {
  const auto& lift = vars.lift();
  const int nx = lift.nx;
  const int nw = lift.n_noise();
  const int n1 = spec.k >= 0 ? nx : lift.n_states();

  if (spec.sigma.rows() != n1 || spec.sigma.cols() != n1)
    throw std::invalid_argument("covariance bound has wrong dimension");
  Eigen::LLT<MatrixXd> llt(spec.sigma);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("covariance bound must be positive definite");
  if (vars.noise() == nullptr)
    throw std::invalid_argument("agent has no stochastic noise model");

  const MatrixXd& phi = vars.noise()->phi;
  auto resp = [&](int row, int c) -> LinExpr {
    const int k = spec.k >= 0 ? spec.k : row / nx;
    const int r = spec.k >= 0 ? row : row % nx;
    return vars.noise_response_expr(k, r, c);
  };

  // [[Sigma, Y phi]; [(Y phi)', I]] with Y the noise-response rows.
  const int side = n1 + nw;
  std::vector<std::vector<LinExpr>> upper(side);
  for (int i = 0; i < n1; ++i) {
    upper[i].resize(static_cast<size_t>(side) - i);
    for (int j = i; j < n1; ++j)
      upper[i][static_cast<size_t>(j) - i] = LinExpr(spec.sigma(i, j));
    for (int j = 0; j < nw; ++j) {
      LinExpr e;
      for (int c = 0; c < nw; ++c) {
        const double pc = phi(c, j);
        if (pc == 0.0) continue;
        LinExpr z = resp(i, c);
        for (const auto& [var, coef] : z.terms()) e.add(var, pc * coef);
        e.add_constant(pc * z.constant());
      }
      upper[i][static_cast<size_t>(n1) - i + j] = std::move(e);
    }
  }
  for (int i = 0; i < nw; ++i) {
    upper[n1 + i].assign(static_cast<size_t>(nw) - i, LinExpr(0.0));
    upper[n1 + i][0] = LinExpr(1.0);
  }
  vars.prog().add_psd(side, upper, vars.prefix() + "covariance[" + tag + "]");
}

}  // namespace rsteer::constraints
