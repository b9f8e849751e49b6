#include <doctest.h>

#include <Eigen/Dense>

#include "rsteer/admm/admm.hpp"
#include "rsteer/rng.hpp"

using namespace rsteer;
using namespace rsteer::admm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

lifting::AgentDynamics integrator(int T, const VectorXd& x0, double dt = 0.2) {
  lifting::AgentDynamics dyn;
  dyn.T = T;
  dyn.gamma_h = T;
  dyn.x0_bar = x0;
  MatrixXd A = MatrixXd::Identity(4, 4);
  A(0, 2) = dt;
  A(1, 3) = dt;
  MatrixXd B = MatrixXd::Zero(4, 2);
  B(0, 0) = 0.5 * dt * dt;
  B(1, 1) = 0.5 * dt * dt;
  B(2, 0) = dt;
  B(3, 1) = dt;
  MatrixXd C = MatrixXd::Zero(4, 2);
  C(0, 0) = 0.7;
  C(1, 1) = 0.3;
  C(2, 0) = 0.3;
  C(3, 1) = 0.7;
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

AgentProblem make_agent(int T, const VectorXd& x0, const VectorXd& goal,
                        double tau, double eps = 0.25) {
  lifting::AgentDynamics dyn = integrator(T, x0);
  AgentProblem ag(uncertainty::UncertaintySet::identity(dyn.n_zeta(), tau));
  ag.dyn = dyn;
  ag.lift = lifting::build_lifted(dyn);
  const int ns = ag.lift.n_states();
  for (int c = 0; c < 2; ++c) {
    constraints::MeanTargetBox t{VectorXd::Zero(ns), goal[c], eps};
    t.a_bar[ns - 4 + c] = 1.0;
    ag.targets.push_back(t);
  }
  ag.target_pos = goal;
  return ag;
}

MultiAgentProblem two_agent_crossing(int T, double tau) {
  MultiAgentProblem prob;
  VectorXd xa = VectorXd::Zero(4), xb = VectorXd::Zero(4);
  xb[0] = 1.0;
  xb[1] = 0.02;  // slight offset breaks the symmetry
  VectorXd ga(2), gb(2);
  ga << 1.0, 0.0;
  gb << 0.0, 0.02;
  prob.agents.push_back(make_agent(T, xa, ga, tau));
  prob.agents.push_back(make_agent(T, xb, gb, tau));
  prob.neighbors = {{1}, {0}};
  prob.h_pos = h_pos2();
  prob.c_interagent = 0.25;
  return prob;
}

}  // namespace

TEST_CASE("global update closed form") {
  AdmmConfig cfg;
  cfg.rho_u = 100.0;
  cfg.rho_d = 1.0;

  SUBCASE("no owners, zero dual: nu equals own trajectory") {
    VectorXd mu = VectorXd::Random(6), mud = VectorXd::Random(6);
    VectorXd nu_u, nu_d;
    global_update(VectorXd::Zero(6), VectorXd::Zero(6), mu, mud, {}, cfg, nu_u,
                  nu_d);
    CHECK((nu_u - mu).cwiseAbs().maxCoeff() == 0.0);
    CHECK((nu_d - mud).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identical contributors with zero duals average to the value") {
    VectorXd v = VectorXd::Constant(4, 1.7);
    std::vector<CopyPayload> rec(2, CopyPayload{v, v});
    VectorXd nu_u, nu_d;
    global_update(VectorXd::Zero(4), VectorXd::Zero(4), v, v, rec, cfg, nu_u,
                  nu_d);
    CHECK((nu_u - v).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((nu_d - v).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("matches quadratic minimization oracle") {
    // nu* = argmin -lam'nu + rho/2||mu - nu||^2 + sum_j (-lamj'nu +
    // rho/2||muj - nu||^2), solved by generic least squares.
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 5;
      VectorXd lam = rng.normal_vector(n), mu = rng.normal_vector(n);
      VectorXd lam1 = rng.normal_vector(n), mu1 = rng.normal_vector(n);
      VectorXd lam2 = rng.normal_vector(n), mu2 = rng.normal_vector(n);
      std::vector<CopyPayload> rec;
      rec.push_back({lam1 / cfg.rho_u + mu1, lam1 / cfg.rho_d + mu1});
      rec.push_back({lam2 / cfg.rho_u + mu2, lam2 / cfg.rho_d + mu2});
      VectorXd nu_u, nu_d;
      global_update(lam, lam, mu, mu, rec, cfg, nu_u, nu_d);

      // Stack sqrt(rho/2)(nu - mu_j) rows and the linear term, minimize.
      MatrixXd A(3 * n, n);
      VectorXd b(3 * n);
      std::vector<VectorXd> mus = {mu, mu1, mu2};
      for (int j = 0; j < 3; ++j) {
        A.middleRows(j * n, n) =
            std::sqrt(cfg.rho_u / 2.0) * MatrixXd::Identity(n, n);
        b.segment(j * n, n) = std::sqrt(cfg.rho_u / 2.0) * mus[j];
      }
      VectorXd lin = -(lam + lam1 + lam2);
      // min ||A nu - b||^2 + lin'nu  =>  (2A'A) nu = 2A'b - lin
      VectorXd oracle =
          (2.0 * A.transpose() * A)
              .ldlt()
              .solve(2.0 * A.transpose() * b - lin);
      CHECK((nu_u - oracle).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("dual update arithmetic") {
  AdmmConfig cfg;
  cfg.rho_u = 100.0;
  cfg.rho_d = 1.0;
  AgentLocalState st;
  st.mu_hat = VectorXd::Zero(3);
  st.mu_d = VectorXd::Zero(3);
  st.lam_u = VectorXd::Zero(3);
  st.lam_d = VectorXd::Zero(3);

  SUBCASE("stationary at consensus") {
    dual_update(st, VectorXd::Zero(3), VectorXd::Zero(3), {}, cfg);
    CHECK(st.lam_u.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("increment is rho times the gap") {
    st.mu_hat[0] = 0.01;
    dual_update(st, VectorXd::Zero(3), VectorXd::Zero(3), {}, cfg);
    CHECK(st.lam_u[0] == doctest::Approx(1.0));
    CHECK(st.lam_u[1] == 0.0);
  }
  SUBCASE("telescoping under a constant gap") {
    st.mu_hat = VectorXd::Constant(3, 0.5);
    for (int k = 0; k < 7; ++k)
      dual_update(st, VectorXd::Zero(3), VectorXd::Zero(3), {}, cfg);
    CHECK(st.lam_u[2] == doctest::Approx(7.0 * 100.0 * 0.5));
  }
}

TEST_CASE("residual formulas") {
  AdmmConfig cfg;
  cfg.rho_u = 100.0;
  cfg.rho_d = 1.0;

  SUBCASE("exact consensus gives zero") {
    std::vector<AgentLocalState> locals(1);
    locals[0].mu_hat = VectorXd::Ones(4);
    locals[0].mu_d = VectorXd::Ones(4);
    GlobalState g;
    g.nu_u = {VectorXd::Ones(4)};
    g.nu_d = {VectorXd::Ones(4)};
    auto [p, d] = residuals(locals, g, g, {{}}, cfg);
    CHECK(p == 0.0);
    CHECK(d == 0.0);
  }
  SUBCASE("single agent gap in the trajectory family only") {
    std::vector<AgentLocalState> locals(1);
    VectorXd gvec(3);
    gvec << 0.3, -0.4, 0.0;
    locals[0].mu_hat = gvec;
    locals[0].mu_d = VectorXd::Zero(3);
    GlobalState g;
    g.nu_u = {VectorXd::Zero(3)};
    g.nu_d = {VectorXd::Zero(3)};
    auto [p, d] = residuals(locals, g, g, {{}}, cfg);
    CHECK(p == doctest::Approx(0.5));  // ||g|| / sqrt(1)
    CHECK(d == 0.0);
  }
  SUBCASE("matches an independent re-implementation on random state") {
    Rng rng(17);
    const int N = 3, n = 4;
    std::vector<std::vector<int>> nb = {{1, 2}, {0}, {1}};
    std::vector<AgentLocalState> locals(N);
    GlobalState now, prev;
    for (int i = 0; i < N; ++i) {
      locals[i].mu_hat = rng.normal_vector(n);
      locals[i].mu_d = rng.normal_vector(n);
      now.nu_u.push_back(rng.normal_vector(n));
      now.nu_d.push_back(rng.normal_vector(n));
      prev.nu_u.push_back(rng.normal_vector(n));
      prev.nu_d.push_back(rng.normal_vector(n));
    }
    for (int i = 0; i < N; ++i)
      for (int j : nb[i]) {
        locals[i].copy_mu_hat[j] = rng.normal_vector(n);
        locals[i].copy_mu_d[j] = rng.normal_vector(n);
      }
    auto [p, d] = residuals(locals, now, prev, nb, cfg);

    double num = 0.0, cnt = N;
    for (int i = 0; i < N; ++i) {
      num += (locals[i].mu_hat - now.nu_u[i]).squaredNorm() +
             (locals[i].mu_d - now.nu_d[i]).squaredNorm();
      for (int j : nb[i]) {
        num += (locals[i].copy_mu_hat[j] - now.nu_u[j]).squaredNorm() +
               (locals[i].copy_mu_d[j] - now.nu_d[j]).squaredNorm();
        cnt += 1.0;
      }
    }
    CHECK(p == doctest::Approx(std::sqrt(num / cnt)).epsilon(1e-12));
    double ds = 0.0;
    for (int i = 0; i < N; ++i)
      ds += 1e4 * (now.nu_u[i] - prev.nu_u[i]).squaredNorm() +
            (now.nu_d[i] - prev.nu_d[i]).squaredNorm();
    CHECK(d == doctest::Approx(std::sqrt(ds) / N).epsilon(1e-12));
  }
}

TEST_CASE("subproblem layout audit") {
  // Single agent, one obstacle: exactly T slack cones and (T+1) m deviation
  // bound cones, plus one copy block pair per neighbour when present.
  const int T = 6;
  MultiAgentProblem prob;
  VectorXd x0 = VectorXd::Zero(4);
  VectorXd goal(2);
  goal << 1.0, 0.0;
  prob.agents.push_back(make_agent(T, x0, goal, 0.01));
  prob.neighbors = {{}};
  prob.h_pos = h_pos2();
  prob.obstacles.push_back({(VectorXd(2) << 0.5, 0.0).finished(), 0.2});

  AdmmConfig cfg;
  AgentLocalState st;
  st.mu_hat = warm_start_line(prob, 0);
  st.mu_d = VectorXd::Zero((T + 1) * 2);
  st.lam_u = VectorXd::Zero((T + 1) * 2);
  st.lam_d = VectorXd::Zero((T + 1) * 2);
  LocalProgram lp = assemble_local_subproblem(prob, 0, st, st.mu_hat, st.mu_d,
                                              {}, st.mu_hat, {}, cfg);
  CHECK(lp.prog.count_cones(conic::ConeKind::SecondOrder, "a0.obstacle_soc") ==
        T);
  CHECK(lp.prog.count_cones(conic::ConeKind::SecondOrder, "a0.mu_d_bound") ==
        (T + 1) * 2);
  CHECK(lp.copies.empty());

  SUBCASE("two agents carry one copy block per family per neighbour") {
    MultiAgentProblem pair = two_agent_crossing(T, 0.01);
    AgentLocalState s2;
    s2.mu_hat = warm_start_line(pair, 0);
    s2.mu_d = VectorXd::Zero((T + 1) * 2);
    s2.lam_u = VectorXd::Zero((T + 1) * 2);
    s2.lam_d = VectorXd::Zero((T + 1) * 2);
    s2.lam_u_copy[1] = VectorXd::Zero((T + 1) * 2);
    s2.lam_d_copy[1] = VectorXd::Zero((T + 1) * 2);
    std::map<int, GlobalPayload> globals;
    globals[1] = {warm_start_line(pair, 1),
                  VectorXd::Zero((T + 1) * 2)};
    std::map<int, VectorXd> nom;
    nom[1] = warm_start_line(pair, 1);
    LocalProgram lp2 = assemble_local_subproblem(
        pair, 0, s2, s2.mu_hat, s2.mu_d, globals, s2.mu_hat, nom, cfg);
    CHECK(lp2.copies.size() == 1);
    CHECK(lp2.prog.block(lp2.copies[1].mu_hat_block).rows == (T + 1) * 2);
    CHECK(lp2.prog.block(lp2.copies[1].mu_d_block).rows == (T + 1) * 2);
  }
}

TEST_CASE("trivial single-agent run converges immediately") {
  MultiAgentProblem prob;
  VectorXd x0 = VectorXd::Zero(4);
  VectorXd goal(2);
  goal << 0.8, -0.3;
  prob.agents.push_back(make_agent(5, x0, goal, 0.01));
  prob.neighbors = {{}};
  prob.h_pos = h_pos2();

  AdmmConfig cfg;
  cfg.rho_u = 100.0;
  cfg.rho_d = 1.0;
  cfg.eps_primal = 0.1;
  cfg.eps_dual = 0.1;
  RunResult res = run(prob, cfg, 7);
  REQUIRE(res.error.empty());
  CHECK(res.converged);
  // No neighbours: consensus is immediate, so the primal residual is zero
  // from the first iteration and only the global-value settling remains.
  CHECK(res.trace.front().primal < 1e-9);
  CHECK(res.iterations <= 25);
  CHECK(res.trace.size() == static_cast<size_t>(res.iterations));

  // Disturbance-free terminal mean hits the target.
  VectorXd mean = lifting::state_mean(
      prob.agents[0].lift, prob.agents[0].dyn.x0_bar, res.policies[0],
      VectorXd::Zero(prob.agents[0].dyn.n_zeta()));
  CHECK(mean[mean.size() - 4] == doctest::Approx(0.8).epsilon(1e-5));
  CHECK(mean[mean.size() - 3] == doctest::Approx(-0.3).epsilon(1e-5));
}

TEST_CASE("two-agent crossing converges and separates") {
  MultiAgentProblem prob = two_agent_crossing(8, 0.005);
  AdmmConfig cfg;
  cfg.rho_u = 100.0;
  cfg.rho_d = 1.0;
  cfg.eps_primal = 0.1;
  cfg.eps_dual = 0.1;
  RunResult res = run(prob, cfg, 3);
  REQUIRE(res.error.empty());
  CHECK(res.converged);
  CHECK(res.iterations <= 200);

  // After convergence the planned means respect separation against the
  // neighbour's trajectory (consensus ties copies to owners at ~eps_primal).
  for (int k = 1; k <= 8; ++k) {
    VectorXd pa = res.final_mu_hat[0].segment(k * 2, 2);
    VectorXd pb = res.final_mu_hat[1].segment(k * 2, 2);
    CHECK((pa - pb).norm() >= prob.c_interagent - 2.5 * cfg.eps_primal);
  }

  SUBCASE("identical runs produce identical traces") {
    RunResult res2 = run(prob, cfg, 3);
    REQUIRE(res2.trace.size() == res.trace.size());
    for (size_t i = 0; i < res.trace.size(); ++i) {
      CHECK(res.trace[i].primal == res2.trace[i].primal);
      CHECK(res.trace[i].dual == res2.trace[i].dual);
    }
    for (int a = 0; a < 2; ++a)
      CHECK((res.policies[a].u_bar() - res2.policies[a].u_bar())
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
}

TEST_CASE("information locality audit") {
  MultiAgentProblem prob = two_agent_crossing(5, 0.005);
  // A third agent nobody talks to.
  VectorXd x0 = VectorXd::Zero(4);
  x0[1] = 3.0;
  VectorXd goal(2);
  goal << 1.0, 3.0;
  prob.agents.push_back(make_agent(5, x0, goal, 0.005));
  prob.neighbors = {{1}, {0}, {}};

  AdmmConfig cfg;
  RunResult res = run(prob, cfg, 1);
  REQUIRE(res.error.empty());
  CHECK_FALSE(res.audit.empty());
  for (const auto& rec : res.audit) {
    const bool copy = rec.kind == ExchangeKind::CopyToOwner;
    const auto& nb = prob.neighbors[copy ? rec.from : rec.to];
    // Copies flow from a neighbour to the owner; globals flow from the owner
    // to agents that neighbour it.
    const int other = copy ? rec.to : rec.from;
    CHECK(std::find(nb.begin(), nb.end(), other) != nb.end());
    CHECK(rec.from != 2);
    CHECK(rec.to != 2);
  }
}

TEST_CASE("solver failure is attributed to the agent") {
  MultiAgentProblem prob;
  VectorXd x0 = VectorXd::Zero(4);
  VectorXd goal(2);
  goal << 0.5, 0.0;
  AgentProblem ag = make_agent(4, x0, goal, 0.5);
  // Impossible spread bound: epsilon far below the open-loop disturbance
  // response that no gain can cancel (the initial disturbance enters x_0
  // directly).
  ag.targets[0].epsilon = 1e-9;
  ag.targets[1].epsilon = 1e-9;
  prob.agents.push_back(std::move(ag));
  prob.neighbors = {{}};
  prob.h_pos = h_pos2();

  AdmmConfig cfg;
  RunResult res = run(prob, cfg, 1);
  CHECK_FALSE(res.error.empty());
  CHECK(res.failed_agent == 0);
}

TEST_CASE("centralized agrees with distributed on decoupled problems") {
  MultiAgentProblem prob;
  VectorXd x0 = VectorXd::Zero(4);
  VectorXd goal(2);
  goal << 0.9, 0.4;
  prob.agents.push_back(make_agent(6, x0, goal, 0.01));
  prob.neighbors = {{}};
  prob.h_pos = h_pos2();

  AdmmConfig cfg;
  cfg.eps_primal = 1e-5;
  cfg.eps_dual = 5e-5;
  cfg.max_iters = 500;
  cfg.solver_tol = 1e-9;
  RunResult dist = run(prob, cfg, 1);
  REQUIRE(dist.error.empty());
  REQUIRE(dist.converged);
  CentralizedConfig ccfg;
  RunResult cent = run_centralized(prob, ccfg);
  REQUIRE(cent.error.empty());
  CHECK((dist.final_mu_hat[0] - cent.final_mu_hat[0]).cwiseAbs().maxCoeff() <
        1e-5);

  SUBCASE("two-agent objectives within five percent") {
    MultiAgentProblem pair = two_agent_crossing(6, 0.005);
    AdmmConfig acfg;
    RunResult d = run(pair, acfg, 1);
    REQUIRE(d.error.empty());
    REQUIRE(d.converged);
    RunResult c = run_centralized(pair, CentralizedConfig{});
    REQUIRE(c.error.empty());
    CHECK(std::abs(d.objective - c.objective) <=
          0.05 * std::max(c.objective, 1e-6));
  }
}
