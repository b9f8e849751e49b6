#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "rsteer/conic/solver.hpp"
#include "rsteer/constraints.hpp"
#include "rsteer/lifting.hpp"
#include "rsteer/rng.hpp"
#include "rsteer/uncertainty.hpp"

using namespace rsteer;
using namespace rsteer::constraints;
using namespace rsteer::lifting;
using namespace rsteer::uncertainty;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

AgentDynamics small_integrator(int T, double dt = 0.2) {
  AgentDynamics dyn;
  dyn.T = T;
  dyn.gamma_h = T;
  dyn.x0_bar = VectorXd::Zero(4);
  MatrixXd A = MatrixXd::Identity(4, 4);
  A(0, 2) = dt;
  A(1, 3) = dt;
  MatrixXd B = MatrixXd::Zero(4, 2);
  B(0, 0) = 0.5 * dt * dt;
  B(1, 1) = 0.5 * dt * dt;
  B(2, 0) = dt;
  B(3, 1) = dt;
  MatrixXd C = MatrixXd::Zero(4, 2);
  C(0, 0) = 0.6;
  C(1, 1) = 0.4;
  C(2, 0) = 0.4;
  C(3, 1) = 0.6;
  C /= C.norm();
  for (int k = 0; k < T; ++k) {
    dyn.A.push_back(A);
    dyn.B.push_back(B);
    dyn.C.push_back(C);
    dyn.D.push_back(MatrixXd::Identity(4, 4));
  }
  return dyn;
}

MatrixXd h_pos2() {
  MatrixXd h = MatrixXd::Zero(2, 4);
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  return h;
}

Policy extract_policy(const conic::ConicProgram& prog, const AgentVars& vars_c,
                      AgentVars& vars, const AgentDynamics& dyn,
                      const VectorXd& x) {
  Policy pol = Policy::zero(dyn);
  MatrixXd u = prog.block_value(x, vars.ubar_block());
  pol.u_bar() = u.col(0);
  MatrixXd K = prog.block_value(x, vars.gain_block());
  for (int k = 0; k < dyn.T; ++k)
    for (int l = std::max(0, k - dyn.gamma_h + 1); l <= k; ++l)
      pol.set_gain_block(k, l,
                         K.block(k * dyn.nu(), l * dyn.nx(), dyn.nu(), dyn.nx()));
  (void)vars_c;
  return pol;
}

}  // namespace

TEST_CASE("gaussian quantile") {
  CHECK(gaussian_quantile(0.5 - 1e-12) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::abs(gaussian_quantile(0.05) - 1.6448536269514722) < 1e-8);
  CHECK(std::abs(gaussian_quantile(0.01) - 2.3263478740408408) < 1e-8);
  CHECK_THROWS_AS(gaussian_quantile(0.5), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_quantile(0.7), std::invalid_argument);
  // Inverse-CDF property at random thresholds.
  for (double p : {0.2, 0.1, 0.02, 0.001, 1e-6}) {
    const double eta = gaussian_quantile(p);
    const double tail = 0.5 * std::erfc(eta / std::sqrt(2.0));
    CHECK(std::abs(tail - p) <= 1e-8 * std::max(1.0, 1.0 / p * p));
  }
}

TEST_CASE("norm lower bound linearization") {
  VectorXd center(2), b(2);
  center << 3.0, 4.0;
  b << 0.0, 0.0;
  HalfSpace hs = linearize_norm_lower_bound(center, b);
  CHECK(hs.g[0] == doctest::Approx(0.6));
  CHECK(hs.g[1] == doctest::Approx(0.8));
  // First-order tightness at the center.
  CHECK(hs.g.dot(center) - hs.offset == doctest::Approx(5.0));
  CHECK_THROWS_AS(linearize_norm_lower_bound(b, b), std::invalid_argument);

  // Supporting-hyperplane property: points satisfying the half space satisfy
  // the norm bound (Cauchy-Schwarz).
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    VectorXd c = rng.normal_vector(2), bb = rng.normal_vector(2);
    if ((c - bb).norm() < 1e-6) continue;
    HalfSpace h = linearize_norm_lower_bound(c, bb);
    const double rhs = 0.3 * (c - bb).norm();
    for (int i = 0; i < 10; ++i) {
      VectorXd y = c + rng.normal_vector(2);
      if (h.g.dot(y) - h.offset >= rhs) CHECK((y - bb).norm() >= rhs - 1e-12);
    }
  }
}

TEST_CASE("response recursion reproduces the closed-loop map") {
  Rng rng(5);
  AgentDynamics dyn = small_integrator(4);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.1);

  conic::ConicProgram prog;
  AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
  vars.add_policy_cost(0.05, 0.05);
  // Touch the response blocks and pin K to random allowed values through
  // equalities, then check Z_k = P_k (Gu K + I) Gzeta at the solution.
  Policy pol = Policy::zero(dyn);
  for (int k = 0; k < dyn.T; ++k)
    for (int l = 0; l <= k; ++l) {
      MatrixXd Kb(2, 4);
      for (int i = 0; i < 8; ++i) Kb(i / 4, i % 4) = 0.3 * rng.normal();
      pol.set_gain_block(k, l, Kb);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) {
          conic::LinExpr e(-Kb(r, c));
          e.add(prog.var(vars.gain_block(), k * 2 + r, l * 4 + c), 1.0);
          prog.add_equality(e, "pin");
        }
    }
  VectorXd a = VectorXd::Zero(lift.n_states());
  a[lift.n_states() - 4] = 1.0;
  auto rows = vars.robust_margin_rows(a);  // forces the response blocks
  (void)rows;
  conic::SolveResult res = conic::solve(prog);
  REQUIRE(res.status == conic::SolveStatus::Optimal);

  MatrixXd M = lift.Gzeta + lift.Gu * (pol.K() * lift.Gzeta);
  for (int k = 1; k <= dyn.T; ++k)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < lift.n_zeta(); ++c) {
        conic::LinExpr z = vars.zeta_response_expr(k, r, c);
        CHECK(z.eval(res.x) == doctest::Approx(M(k * 4 + r, c)).epsilon(1e-6));
      }
}

TEST_CASE("linear mean reformulation") {
  AgentDynamics dyn = small_integrator(4);
  LiftedDynamics lift = build_lifted(dyn);

  SUBCASE("vanishing tau reduces to the nominal constraint") {
    UncertaintySet tiny = UncertaintySet::identity(dyn.n_zeta(), 1e-18);
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, tiny, nullptr, h_pos2(), "a0.");
    vars.add_policy_cost(0.05, 0.05);
    // Require terminal x-position >= 1 via -x <= -1, then minimize effort.
    LinearMean lm;
    lm.a = VectorXd::Zero(lift.n_states());
    lm.a[4 * 4] = -1.0;
    lm.b = -1.0;
    reformulate_linear_mean(vars, lm);
    conic::SolveResult res = conic::solve(prog);
    REQUIRE(res.status == conic::SolveStatus::Optimal);
    AgentVars vx = vars;
    Policy pol = extract_policy(prog, vars, vx, dyn, res.x);
    VectorXd mean =
        state_mean(lift, dyn.x0_bar, pol, VectorXd::Zero(dyn.n_zeta()));
    CHECK(mean[16] >= 1.0 - 1e-6);
    CHECK(mean[16] <= 1.0 + 1e-4);  // active at the bound
  }

  SUBCASE("fixed K = 0 margin matches hand computation and samples verify") {
    UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.04);
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
    vars.add_policy_cost(0.05, 0.05);
    LinearMean lm;
    lm.a = VectorXd::Zero(lift.n_states());
    lm.a[4 * 4] = 1.0;  // terminal x-position <= b
    lm.b = 0.4;
    reformulate_linear_mean(vars, lm);
    // Pin K to zero so the margin is a constant.
    const auto& kb = prog.block(vars.gain_block());
    for (int r = 0; r < kb.rows; ++r)
      for (int c = 0; c < kb.cols; ++c) {
        const int v = prog.var(vars.gain_block(), r, c);
        if (v >= 0)
          prog.add_equality(conic::LinExpr().add(v, 1.0), "pin_zero");
      }
    // Also require terminal position >= as large as possible: maximize via
    // linear objective -x_T.
    prog.obj_add_linear(prog.var(vars.ubar_block(), 0), 0.0);
    LinearMean push;
    push.a = VectorXd::Zero(lift.n_states());
    push.a[4 * 4] = -1.0;
    push.b = 10.0;  // inactive
    reformulate_linear_mean(vars, push);
    conic::SolveResult res = conic::solve(prog);
    REQUIRE(res.status == conic::SolveStatus::Optimal);

    const double margin =
        support_value(set, set.Gamma().transpose() *
                               (lift.Gzeta.transpose() * lm.a));
    AgentVars vx = vars;
    Policy pol = extract_policy(prog, vars, vx, dyn, res.x);
    VectorXd mean0 =
        state_mean(lift, dyn.x0_bar, pol, VectorXd::Zero(dyn.n_zeta()));
    // Nominal value + constant margin <= b must hold.
    CHECK(lm.a.dot(mean0) + margin <= lm.b + 1e-6);

    // Sampling verifier on the original semi-infinite constraint.
    auto zs = sample_disturbance(set, 10000, 99, SampleMode::Interior);
    double worst = -1e300;
    for (const auto& z : zs) {
      VectorXd mean = state_mean(lift, dyn.x0_bar, pol, z);
      worst = std::max(worst, lm.a.dot(mean));
    }
    CHECK(worst <= lm.b + 1e-6);
  }

  SUBCASE("worst-case direction attains the bound (exactness)") {
    UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.09);
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
    vars.add_policy_cost(0.05, 0.05);
    LinearMean lm;
    lm.a = VectorXd::Zero(lift.n_states());
    lm.a[16] = 1.0;
    lm.a[17] = 0.5;
    lm.b = 0.3;
    reformulate_linear_mean(vars, lm);
    // Drive the state up so the row is active.
    LinearMean push;
    push.a = -lm.a;
    push.b = 100.0;
    reformulate_linear_mean(vars, push);
    prog.obj_add_linear(prog.var(vars.ubar_block(), 0), 0.0);
    // Maximize a.mu by pushing with the objective.
    conic::LinExpr obj = vars.mean_expr(lm.a);
    for (const auto& [v, cc] : obj.terms()) prog.obj_add_linear(v, -cc);
    conic::SolveResult res = conic::solve(prog);
    REQUIRE(res.status == conic::SolveStatus::Optimal);
    AgentVars vx = vars;
    Policy pol = extract_policy(prog, vars, vx, dyn, res.x);

    MatrixXd M = lift.Gzeta + lift.Gu * (pol.K() * lift.Gzeta);
    VectorXd mta = set.Gamma().transpose() * (M.transpose() * lm.a);
    VectorXd zstar = set.Gamma() * worst_case_z(set, mta);
    VectorXd mean = state_mean(lift, dyn.x0_bar, pol, zstar);
    // At the worst-case disturbance the robust row is tight (row active).
    CHECK(lm.a.dot(mean) == doctest::Approx(lm.b).epsilon(1e-5));
  }
}

TEST_CASE("mean target reformulation") {
  AgentDynamics dyn = small_integrator(5);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.02);

  conic::ConicProgram prog;
  AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
  vars.add_policy_cost(0.05, 0.05);
  const int nT = lift.n_states() - 4;
  MeanTargetBox tx{VectorXd::Zero(lift.n_states()), 1.0, 0.2};
  tx.a_bar[nT] = 1.0;
  MeanTargetBox ty{VectorXd::Zero(lift.n_states()), -0.5, 0.2};
  ty.a_bar[nT + 1] = 1.0;
  reformulate_mean_target(vars, tx);
  reformulate_mean_target(vars, ty);
  conic::SolveResult res = conic::solve(prog);
  REQUIRE(res.status == conic::SolveStatus::Optimal);
  AgentVars vx = vars;
  Policy pol = extract_policy(prog, vars, vx, dyn, res.x);

  // Disturbance-free terminal mean hits the target exactly.
  VectorXd mean0 =
      state_mean(lift, dyn.x0_bar, pol, VectorXd::Zero(dyn.n_zeta()));
  CHECK(mean0[nT] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(mean0[nT + 1] == doctest::Approx(-0.5).epsilon(1e-6));

  // |a.E[x] - b| <= eps over sampled disturbances.
  auto zs = sample_disturbance(set, 10000, 7, SampleMode::Interior);
  for (const auto& z : zs) {
    VectorXd mean = state_mean(lift, dyn.x0_bar, pol, z);
    CHECK(std::abs(mean[nT] - 1.0) <= 0.2 + 1e-6);
    CHECK(std::abs(mean[nT + 1] + 0.5) <= 0.2 + 1e-6);
  }

  SUBCASE("infinite epsilon emits only the equality") {
    conic::ConicProgram p2;
    AgentVars v2(p2, dyn, lift, set, nullptr, h_pos2(), "a0.");
    MeanTargetBox t{VectorXd::Zero(lift.n_states()), 1.0,
                    std::numeric_limits<double>::infinity()};
    t.a_bar[nT] = 1.0;
    reformulate_mean_target(v2, t);
    CHECK(p2.num_cones() == 0);
    CHECK(p2.num_eq_rows() == 1);
  }
}

TEST_CASE("obstacle reformulation is conservative") {
  AgentDynamics dyn = small_integrator(5);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.05);

  conic::ConicProgram prog;
  AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
  vars.add_policy_cost(0.05, 0.05);
  // Steer toward (1, 0) while avoiding a disk at (0.5, 0).
  const int nT = lift.n_states() - 4;
  MeanTargetBox tx{VectorXd::Zero(lift.n_states()), 1.0, 0.3};
  tx.a_bar[nT] = 1.0;
  MeanTargetBox ty{VectorXd::Zero(lift.n_states()), 0.0, 0.3};
  ty.a_bar[nT + 1] = 1.0;
  reformulate_mean_target(vars, tx);
  reformulate_mean_target(vars, ty);

  VectorXd nominal_pos = VectorXd::Zero((dyn.T + 1) * 2);
  for (int k = 0; k <= dyn.T; ++k) {
    nominal_pos[k * 2] = k / double(dyn.T);
    nominal_pos[k * 2 + 1] = 0.25;  // nominal passes above
  }
  ObstacleAvoid obs;
  obs.b = VectorXd::Zero(2);
  obs.b << 0.5, 0.0;
  obs.c = 0.2;
  std::vector<ObstacleAvoid> all;
  for (int k = 1; k <= dyn.T; ++k) {
    obs.k = k;
    reformulate_obstacle_socp(vars, obs, nominal_pos, "o0k" + std::to_string(k));
  }
  conic::SolveResult res = conic::solve(prog);
  REQUIRE(res.status == conic::SolveStatus::Optimal);
  CHECK(conic::verify(prog, res.x).ok(1e-6));
  AgentVars vx = vars;
  Policy pol = extract_policy(prog, vars, vx, dyn, res.x);

  // Original semi-infinite constraint on sampled disturbances: never violated.
  auto zs = sample_disturbance(set, 10000, 21, SampleMode::Interior);
  for (const auto& z : zs) {
    VectorXd mean = state_mean(lift, dyn.x0_bar, pol, z);
    for (int k = 1; k <= dyn.T; ++k) {
      const double dx = mean[k * 4] - 0.5;
      const double dy = mean[k * 4 + 1] - 0.0;
      CHECK(std::sqrt(dx * dx + dy * dy) >= obs.c - 1e-6);
    }
  }
}

TEST_CASE("deviation bound rows are emitted once per time step") {
  AgentDynamics dyn = small_integrator(4);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.05);
  conic::ConicProgram prog;
  AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");

  VectorXd nominal_pos = VectorXd::Zero((dyn.T + 1) * 2);
  for (int k = 0; k <= dyn.T; ++k) nominal_pos[k * 2] = 0.3 * k + 1.0;

  ObstacleAvoid obs;
  obs.b = VectorXd::Zero(2);
  obs.c = 0.1;
  // Five obstacles and two neighbours, all at the same step.
  for (int o = 0; o < 5; ++o) {
    obs.k = 2;
    obs.b << -1.0 - o, 0.0;
    reformulate_obstacle_socp(vars, obs, nominal_pos, "o" + std::to_string(o));
  }
  conic::ConicProgram dummy;
  NeighborCopies copies;
  copies.mu_hat_block = prog.add_block("cp.mu_hat", (dyn.T + 1) * 2);
  copies.mu_d_block = prog.add_block("cp.mu_d", (dyn.T + 1) * 2);
  InterAgentAvoid ia;
  ia.c_ij = 0.1;
  ia.k = 2;
  VectorXd nominal_j = nominal_pos;
  nominal_j.array() += 2.0;
  for (int j = 0; j < 2; ++j) {
    ia.neighbor = j;
    reformulate_interagent_socp(vars, ia, nullptr, &copies, nominal_pos,
                                nominal_j, "n" + std::to_string(j));
  }
  // Exactly m = 2 deviation-bound cones at step 2, independent of the number
  // of obstacle and neighbour constraints.
  CHECK(prog.count_cones(conic::ConeKind::SecondOrder, "a0.mu_d_bound[2") == 2);
}

TEST_CASE("interagent reformulation with joint sampling") {
  AgentDynamics dyn = small_integrator(4);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.03);

  // Two agents in one program (direct coupling path).
  conic::ConicProgram prog;
  AgentVars va(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
  AgentDynamics dyn_b = dyn;
  dyn_b.x0_bar = VectorXd::Zero(4);
  dyn_b.x0_bar[0] = 1.0;
  LiftedDynamics lift_b = build_lifted(dyn_b);
  AgentVars vb(prog, dyn_b, lift_b, set, nullptr, h_pos2(), "a1.");
  va.add_policy_cost(0.05, 0.05);
  vb.add_policy_cost(0.05, 0.05);

  const int nT = lift.n_states() - 4;
  // Swap targets so the straight-line plans collide head-on.
  MeanTargetBox ta{VectorXd::Zero(lift.n_states()), 1.0, 0.3};
  ta.a_bar[nT] = 1.0;
  reformulate_mean_target(va, ta);
  MeanTargetBox tb{VectorXd::Zero(lift.n_states()), 0.0, 0.3};
  tb.a_bar[nT] = 1.0;
  reformulate_mean_target(vb, tb);

  VectorXd nom_a = VectorXd::Zero((dyn.T + 1) * 2);
  VectorXd nom_b = VectorXd::Zero((dyn.T + 1) * 2);
  for (int k = 0; k <= dyn.T; ++k) {
    nom_a[k * 2] = k / double(dyn.T);
    nom_a[k * 2 + 1] = 0.05;
    nom_b[k * 2] = 1.0 - k / double(dyn.T);
    nom_b[k * 2 + 1] = -0.05;
  }
  InterAgentAvoid ia;
  ia.c_ij = 0.25;
  ia.neighbor = 1;
  for (int k = 1; k <= dyn.T; ++k) {
    ia.k = k;
    reformulate_interagent_socp(va, ia, &vb, nullptr, nom_a, nom_b,
                                "p" + std::to_string(k));
  }
  conic::SolveResult res = conic::solve(prog);
  REQUIRE(res.status == conic::SolveStatus::Optimal);
  AgentVars vxa = va, vxb = vb;
  Policy pa = extract_policy(prog, va, vxa, dyn, res.x);
  Policy pb = extract_policy(prog, vb, vxb, dyn_b, res.x);

  auto za = sample_disturbance(set, 100, 31, SampleMode::Interior);
  auto zb = sample_disturbance(set, 100, 32, SampleMode::Interior);
  for (const auto& zi : za)
    for (const auto& zj : zb) {
      VectorXd ma = state_mean(lift, dyn.x0_bar, pa, zi);
      VectorXd mb = state_mean(lift_b, dyn_b.x0_bar, pb, zj);
      for (int k = 1; k <= dyn.T; ++k) {
        const double dx = ma[k * 4] - mb[k * 4];
        const double dy = ma[k * 4 + 1] - mb[k * 4 + 1];
        CHECK(std::sqrt(dx * dx + dy * dy) >= ia.c_ij - 1e-6);
      }
    }
}

TEST_CASE("sdp baseline solves and satisfies the linearized constraint") {
  AgentDynamics dyn = small_integrator(4);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.02);

  // Stage one: a targets-only solve provides the nominal for linearization.
  const int nT = lift.n_states() - 4;
  MeanTargetBox tx{VectorXd::Zero(lift.n_states()), 1.0, 0.3};
  tx.a_bar[nT] = 1.0;
  MeanTargetBox ty{VectorXd::Zero(lift.n_states()), 0.0, 0.3};
  ty.a_bar[nT + 1] = 1.0;
  VectorXd nominal_u;
  {
    conic::ConicProgram warm;
    AgentVars wv(warm, dyn, lift, set, nullptr, h_pos2(), "a0.");
    wv.add_policy_cost(0.05, 0.05);
    reformulate_mean_target(wv, tx);
    reformulate_mean_target(wv, ty);
    conic::SolveResult wres = conic::solve(warm);
    REQUIRE(wres.status == conic::SolveStatus::Optimal);
    nominal_u = warm.block_value(wres.x, wv.ubar_block()).col(0);
  }
  Policy nominal = Policy::zero(dyn);
  nominal.u_bar() = nominal_u;

  conic::ConicProgram prog;
  AgentVars vars(prog, dyn, lift, set, nullptr, h_pos2(), "a0.");
  vars.add_policy_cost(0.05, 0.05);
  reformulate_mean_target(vars, tx);
  reformulate_mean_target(vars, ty);

  ObstacleAvoid obs;
  obs.b = VectorXd::Zero(2);
  obs.b << 0.5, -0.4;
  obs.c = 0.2;
  for (int k = 1; k <= dyn.T; ++k) {
    obs.k = k;
    reformulate_obstacle_sdp_baseline(vars, obs, nominal_u, nominal,
                                      "o0k" + std::to_string(k));
  }
  conic::SolveResult res = conic::solve(prog);
  REQUIRE(res.status == conic::SolveStatus::Optimal);
  CHECK(conic::verify(prog, res.x).ok(1e-6));
  AgentVars vx = vars;
  Policy pol = extract_policy(prog, vars, vx, dyn, res.x);

  // The feasible point satisfies the linearized robust constraint on sampled
  // disturbances: zeta' Q zeta + 2 Qbar zeta + q >= c^2.
  MatrixXd Ml = lift.Gzeta;  // nominal K = 0
  MatrixXd M = lift.Gzeta + lift.Gu * (pol.K() * lift.Gzeta);
  VectorXd mu_l = lift.G0 * dyn.x0_bar + lift.Gu * nominal_u;
  VectorXd mu = lift.G0 * dyn.x0_bar + lift.Gu * pol.u_bar();
  MatrixXd H = h_pos2();
  auto zs = sample_disturbance(set, 10000, 77, SampleMode::Interior);
  for (int k = 1; k <= dyn.T; ++k) {
    MatrixXd R0 = H * Ml.middleRows(k * 4, 4);
    MatrixXd Rv = H * M.middleRows(k * 4, 4);
    VectorXd pl = H * mu_l.segment(k * 4, 4);
    VectorXd pv = H * mu.segment(k * 4, 4);
    MatrixXd Q = R0.transpose() * Rv + (Rv - R0).transpose() * R0;
    VectorXd qbar =
        (R0.transpose() * (pv - pl) + Rv.transpose() * (pl - obs.b));
    const double qc = (pl - obs.b).dot(2.0 * pv - pl - obs.b);
    for (const auto& z : zs) {
      const double lhs = z.dot(Q * z) + 2.0 * qbar.dot(z) + qc;
      CHECK(lhs >= obs.c * obs.c - 1e-6);
    }
  }
}

TEST_CASE("chance constraint reformulation") {
  AgentDynamics dyn = small_integrator(4);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.02);
  MatrixXd sig = 4e-4 * MatrixXd::Identity(dyn.n_noise(), dyn.n_noise());
  NoiseModel noise = NoiseModel::from_covariance(sig);

  SUBCASE("p at the boundary is rejected") {
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, &noise, h_pos2(), "a0.");
    ChanceLinear cl;
    cl.a = VectorXd::Zero(lift.n_states());
    cl.a[16] = 1.0;
    cl.b = 1.0;
    cl.p = 0.5;
    CHECK_THROWS_AS(reformulate_chance(vars, cl, "c0"), std::invalid_argument);
  }

  SUBCASE("solved instance calibrates empirically") {
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, &noise, h_pos2(), "a0.");
    vars.add_policy_cost(0.05, 0.05);
    const int nT = lift.n_states() - 4;
    MeanTargetBox tx{VectorXd::Zero(lift.n_states()), 0.6, 0.2};
    tx.a_bar[nT] = 1.0;
    reformulate_mean_target(vars, tx);
    ChanceLinear cl;
    cl.a = VectorXd::Zero(lift.n_states());
    cl.a[nT] = 1.0;  // terminal x-position exceeds b rarely
    cl.b = 0.8;
    cl.p = 0.05;
    reformulate_chance(vars, cl, "c0");
    conic::SolveResult res = conic::solve(prog);
    REQUIRE(res.status == conic::SolveStatus::Optimal);
    AgentVars vx = vars;
    Policy pol = extract_policy(prog, vars, vx, dyn, res.x);

    // Worst sampled zeta for the mean part, then noise rollouts at it.
    auto zs = sample_disturbance(set, 200, 5, SampleMode::Boundary);
    VectorXd worst_z = zs[0];
    double worst_mean = -1e300;
    for (const auto& z : zs) {
      VectorXd mean = state_mean(lift, dyn.x0_bar, pol, z);
      if (cl.a.dot(mean) > worst_mean) {
        worst_mean = cl.a.dot(mean);
        worst_z = z;
      }
    }
    Rng rng(400);
    int violations = 0;
    const int n_roll = 10000;
    MatrixXd phi = noise.phi;
    for (int i = 0; i < n_roll; ++i) {
      VectorXd w = phi * rng.normal_vector(dyn.n_noise());
      RolloutResult rr = rollout(dyn, pol, worst_z, w);
      VectorXd flat(lift.n_states());
      for (int k = 0; k <= dyn.T; ++k) flat.segment(k * 4, 4) = rr.states.col(k);
      if (cl.a.dot(flat) > cl.b) ++violations;
    }
    const double rate = violations / double(n_roll);
    CHECK(rate <= 0.05 + 2.0 * std::sqrt(0.05 * 0.95 / n_roll));
  }
}

TEST_CASE("covariance reformulation") {
  AgentDynamics dyn = small_integrator(3);
  LiftedDynamics lift = build_lifted(dyn);
  UncertaintySet set = UncertaintySet::identity(dyn.n_zeta(), 0.02);
  MatrixXd sig = 0.02 * MatrixXd::Identity(dyn.n_noise(), dyn.n_noise());
  NoiseModel noise = NoiseModel::from_covariance(sig);

  SUBCASE("K = 0 with slack bound is feasible") {
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, &noise, h_pos2(), "a0.");
    vars.add_policy_cost(0.05, 0.05);
    Policy zero = Policy::zero(dyn);
    CovarianceBound cb;
    cb.k = -1;
    cb.sigma = state_covariance(lift, zero, sig) +
               MatrixXd::Identity(lift.n_states(), lift.n_states());
    reformulate_covariance(vars, cb, "cv");
    conic::SolveResult res = conic::solve(prog);
    CHECK(res.status == conic::SolveStatus::Optimal);
  }

  SUBCASE("feasible K dominates: eigenvalue oracle agreement") {
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, &noise, h_pos2(), "a0.");
    vars.add_policy_cost(0.05, 0.05);
    Policy zero = Policy::zero(dyn);
    MatrixXd open_cov = state_covariance(lift, zero, sig);
    CovarianceBound cb;
    cb.k = dyn.T;  // terminal block
    cb.sigma = open_cov.bottomRightCorner(4, 4) * 0.6 +
               0.001 * MatrixXd::Identity(4, 4);
    reformulate_covariance(vars, cb, "cv");
    conic::SolveResult res = conic::solve(prog);
    REQUIRE(res.status == conic::SolveStatus::Optimal);
    AgentVars vx = vars;
    Policy pol = extract_policy(prog, vars, vx, dyn, res.x);
    MatrixXd cov = state_covariance(lift, pol, sig);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(
        cb.sigma - cov.bottomRightCorner(4, 4));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-7);
  }

  SUBCASE("non-PD bound is rejected") {
    conic::ConicProgram prog;
    AgentVars vars(prog, dyn, lift, set, &noise, h_pos2(), "a0.");
    CovarianceBound cb;
    cb.k = dyn.T;
    cb.sigma = MatrixXd::Zero(4, 4);
    CHECK_THROWS_AS(reformulate_covariance(vars, cb, "cv"),
                    std::invalid_argument);
  }
}
