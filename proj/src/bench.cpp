#include "rsteer/bench.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <ostream>

#include "rsteer/conic/solver.hpp"
#include "rsteer/constraints.hpp"

namespace rsteer::bench {

using constraints::AgentVars;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

json agent_doc(double x0, double y0, double x1, double y1, double tau) {
  json a;
  a["dynamics"] = "double_integrator_2d";
  a["x0"] = {x0, y0, 0.0, 0.0};
  a["uncertainty"] = {{"tau", tau}};
  a["target"] = {{"mean", {x1, y1, 0.0, 0.0}},
                 {"epsilon", {0.25, 0.25, 1.0, 1.0}}};
  return a;
}

double now_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

scenario::Scenario obstacles_scenario(int n_obstacles) {
  json doc;
  doc["name"] = "bench_vertical6_obs" + std::to_string(n_obstacles);
  doc["horizon"] = 12;
  doc["seed"] = 91;
  doc["thresholds"] = {{"interagent", 0.25}, {"obstacle", 0.2}};
  doc["neighbors"] = {{"k_nearest", 4}};
  json agents = json::array();
  for (int i = 0; i < 6; ++i) {
    const double y = -2.0 + 0.8 * i;
    agents.push_back(agent_doc(0.0, y, 4.0, y, 0.01));
  }
  doc["agents"] = agents;
  // Obstacles of varying radii staggered across the corridor.
  const double radii[] = {0.20, 0.15, 0.25, 0.18, 0.22,
                          0.15, 0.20, 0.17, 0.23, 0.19};
  json obstacles = json::array();
  for (int o = 0; o < n_obstacles; ++o) {
    const double x = 1.4 + 1.2 * ((o * 7) % 3) / 2.0;
    const double y = -2.2 + 4.4 * ((o * 3) % 10) / 9.0;
    obstacles.push_back({{"center", {x, y}}, {"radius", radii[o % 10]}});
  }
  doc["obstacles"] = obstacles;
  return scenario::parse_scenario(doc);
}

scenario::Scenario agents_scenario(int n_agents) {
  json doc;
  doc["name"] = "bench_rect" + std::to_string(n_agents);
  doc["horizon"] = 10;
  doc["seed"] = 17;
  doc["thresholds"] = {{"interagent", 0.25}, {"obstacle", 0.2}};
  doc["neighbors"] = {{"k_nearest", std::min(4, n_agents - 1)}};
  json agents = json::array();
  const int rows = 4;
  const int cols = (n_agents + rows - 1) / rows;
  for (int i = 0; i < n_agents; ++i) {
    const int r = i % rows, c = i / rows;
    const double y = -1.8 + 1.2 * r;
    const double x = -3.0 - 0.9 * c;
    agents.push_back(agent_doc(x, y, -x, y, 0.01));
  }
  doc["agents"] = agents;
  json obstacles = json::array();
  for (int o = 0; o < 5; ++o)
    obstacles.push_back(
        {{"center", {0.0, -2.2 + 1.1 * o}}, {"radius", 0.18}});
  doc["obstacles"] = obstacles;
  return scenario::parse_scenario(doc);
}

scenario::Scenario reformulation_scenario(int n_obstacles) {
  json doc;
  doc["name"] = "bench_reform" + std::to_string(n_obstacles);
  doc["horizon"] = 20;
  doc["seed"] = 23;
  doc["thresholds"] = {{"interagent", 0.25}, {"obstacle", 0.3}};
  doc["neighbors"] = {{"adjacency", json::array({json::array()})}};
  doc["agents"] = json::array({agent_doc(-2.0, 0.0, 2.0, 0.0, 0.01)});
  json obstacles = json::array();
  const double xs[] = {-0.7, 0.0, 0.7};
  for (int o = 0; o < n_obstacles; ++o)
    obstacles.push_back({{"center", {xs[o], 0.25 * ((o % 2) ? 1.0 : -1.0)}},
                         {"radius", 0.2}});
  doc["obstacles"] = obstacles;
  return scenario::parse_scenario(doc);
}

SingleAgentRun solve_single_agent(const admm::MultiAgentProblem& prob,
                                  Route route, double time_budget_ms) {
  SingleAgentRun out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& ag = prob.agents.at(0);
  const int T = ag.dyn.T;

  auto budget_left = [&]() {
    return time_budget_ms <= 0.0 ? 0.0
                                 : std::max(1.0, time_budget_ms - now_ms(t0));
  };
  auto expired = [&]() {
    return time_budget_ms > 0.0 && now_ms(t0) > time_budget_ms;
  };

  // Warm solve without obstacle rows provides the first nominal.
  VectorXd nominal_u = VectorXd::Zero(T * ag.dyn.nu());
  lifting::Policy nominal_pol = lifting::Policy::zero(ag.dyn);
  VectorXd nominal_pos = admm::warm_start_line(prob, 0);
  {
    conic::ConicProgram prog;
    AgentVars vars(prog, ag.dyn, ag.lift, ag.set,
                   ag.noise.has_value() ? &*ag.noise : nullptr, prob.h_pos,
                   "a0.", prob.robust_margins);
    vars.add_policy_cost(prob.r_u, prob.r_k);
    vars.mu_hat_block();
    for (const auto& c : ag.targets) constraints::reformulate_mean_target(vars, c);
    conic::SolveOptions opts;
    opts.time_budget_ms = budget_left();
    conic::SolveResult res = conic::solve(prog, opts);
    if (res.status != conic::SolveStatus::Optimal) {
      out.message = std::string("warm solve: ") + conic::to_string(res.status);
      out.wall_ms = now_ms(t0);
      return out;
    }
    nominal_u = prog.block_value(res.x, vars.ubar_block()).col(0);
    nominal_pol.u_bar() = nominal_u;
    nominal_pos = prog.block_value(res.x, vars.mu_hat_block()).col(0);
  }

  for (int outer = 0; outer < 6; ++outer) {
    if (expired()) {
      out.message = "time budget exceeded";
      out.wall_ms = now_ms(t0);
      return out;
    }
    conic::ConicProgram prog;
    AgentVars vars(prog, ag.dyn, ag.lift, ag.set,
                   ag.noise.has_value() ? &*ag.noise : nullptr, prob.h_pos,
                   "a0.", prob.robust_margins);
    vars.add_policy_cost(prob.r_u, prob.r_k);
    vars.mu_hat_block();
    for (const auto& c : ag.targets) constraints::reformulate_mean_target(vars, c);
    for (size_t o = 0; o < prob.obstacles.size(); ++o)
      for (int k = 1; k <= T; ++k) {
        constraints::ObstacleAvoid spec;
        spec.b = prob.obstacles[o].center;
        spec.c = prob.obstacles[o].clearance;
        spec.k = k;
        const std::string tag = std::to_string(o) + "," + std::to_string(k);
        if (route == Route::Socp)
          constraints::reformulate_obstacle_socp(vars, spec, nominal_pos, tag);
        else
          constraints::reformulate_obstacle_sdp_baseline(vars, spec, nominal_u,
                                                         nominal_pol, tag);
      }
    if (route == Route::Socp)
      for (int k = 0; k <= T; ++k) vars.ensure_mu_d_bounds(k);

    conic::SolveOptions opts;
    opts.time_budget_ms = budget_left();
    conic::SolveResult res = conic::solve(prog, opts);
    out.outer_iterations = outer + 1;
    if (res.status != conic::SolveStatus::Optimal) {
      out.message = std::string("outer solve: ") + conic::to_string(res.status) +
                    (res.message.empty() ? "" : " (" + res.message + ")");
      out.wall_ms = now_ms(t0);
      return out;
    }
    VectorXd pos = prog.block_value(res.x, vars.mu_hat_block()).col(0);
    const double move = (pos - nominal_pos).lpNorm<Eigen::Infinity>();
    nominal_pos = pos;
    nominal_u = prog.block_value(res.x, vars.ubar_block()).col(0);
    MatrixXd K = prog.block_value(res.x, vars.gain_block());
    nominal_pol = lifting::Policy::zero(ag.dyn);
    nominal_pol.u_bar() = nominal_u;
    for (int k = 0; k < T; ++k)
      for (int l = std::max(0, k - ag.dyn.gamma_h + 1); l <= k; ++l)
        nominal_pol.set_gain_block(
            k, l,
            K.block(k * ag.dyn.nu(), l * ag.dyn.nx(), ag.dyn.nu(),
                    ag.dyn.nx()));
    if (move < 1e-4) break;
  }
  out.solved = true;
  out.policies.push_back(nominal_pol);
  out.wall_ms = now_ms(t0);
  return out;
}

BenchResult run_obstacles_suite(int threads) {
  BenchResult out;
  for (int n_obs : {1, 2, 3, 5, 10}) {
    scenario::Scenario sc = obstacles_scenario(n_obs);
    admm::AdmmConfig cfg;
    cfg.rho_u = 100.0;
    cfg.rho_d = 10.0;
    cfg.eps_primal = 1.0;
    cfg.eps_dual = 1.0;
    cfg.threads = threads;
    admm::RunResult res = admm::run(sc.problem, cfg, 5);
    BenchRow row;
    row.suite = "obstacles";
    row.case_name = sc.name;
    row.mode = "distributed";
    row.n_agents = sc.problem.n_agents();
    row.n_obstacles = n_obs;
    row.converged = res.converged;
    row.dnf = !res.error.empty();
    row.iterations = res.iterations;
    row.wall_ms = res.wall_ms;
    row.per_iter_ms =
        res.iterations > 0 ? res.time_metric_ms / res.iterations : 0.0;
    out.rows.push_back(row);
  }
  return out;
}

BenchResult run_agents_suite(int threads) {
  BenchResult out;
  out.extra["min_distances"] = json::object();
  for (int n : {4, 8, 16}) {
    scenario::Scenario sc = agents_scenario(n);
    admm::AdmmConfig cfg;
    cfg.rho_u = 100.0;
    cfg.rho_d = 10.0;
    cfg.eps_primal = 1.0;
    cfg.eps_dual = 1.0;
    cfg.threads = threads;
    admm::RunResult dist = admm::run(sc.problem, cfg, 5);
    BenchRow row;
    row.suite = "agents";
    row.case_name = sc.name;
    row.mode = "distributed";
    row.n_agents = n;
    row.n_obstacles = static_cast<int>(sc.problem.obstacles.size());
    row.converged = dist.converged;
    row.dnf = !dist.error.empty();
    row.iterations = dist.iterations;
    row.wall_ms = dist.wall_ms;
    row.per_iter_ms =
        dist.iterations > 0 ? dist.time_metric_ms / dist.iterations : 0.0;
    out.rows.push_back(row);
    if (dist.error.empty())
      out.extra["policies_" + std::to_string(n)] =
          scenario::policies_to_json(dist.policies);

    admm::CentralizedConfig ccfg;
    admm::RunResult cent = admm::run_centralized(sc.problem, ccfg);
    BenchRow crow;
    crow.suite = "agents";
    crow.case_name = sc.name;
    crow.mode = "centralized";
    crow.n_agents = n;
    crow.n_obstacles = row.n_obstacles;
    crow.converged = cent.converged;
    crow.dnf = !cent.error.empty();
    crow.iterations = cent.iterations;
    crow.wall_ms = cent.wall_ms;
    crow.per_iter_ms = cent.iterations > 0 ? cent.wall_ms / cent.iterations : 0;
    out.rows.push_back(crow);
  }
  return out;
}

BenchResult run_reformulation_suite() {
  BenchResult out;
  for (int n_obs : {1, 2, 3}) {
    scenario::Scenario sc = reformulation_scenario(n_obs);
    SingleAgentRun socp = solve_single_agent(sc.problem, Route::Socp);
    BenchRow srow;
    srow.suite = "reformulation";
    srow.case_name = sc.name;
    srow.mode = "socp";
    srow.n_agents = 1;
    srow.n_obstacles = n_obs;
    srow.converged = socp.solved;
    srow.dnf = !socp.solved;
    srow.iterations = socp.outer_iterations;
    srow.wall_ms = socp.wall_ms;
    out.rows.push_back(srow);

    const double budget = std::max(10.0 * socp.wall_ms, 1000.0);
    SingleAgentRun sdp =
        solve_single_agent(sc.problem, Route::SdpBaseline, budget);
    BenchRow drow;
    drow.suite = "reformulation";
    drow.case_name = sc.name;
    drow.mode = "sdp";
    drow.n_agents = 1;
    drow.n_obstacles = n_obs;
    drow.converged = sdp.solved;
    drow.dnf = !sdp.solved;
    drow.iterations = sdp.outer_iterations;
    drow.wall_ms = sdp.wall_ms;
    out.rows.push_back(drow);
    out.extra["budget_ms_" + std::to_string(n_obs)] = budget;
    if (!sdp.solved)
      out.extra["sdp_message_" + std::to_string(n_obs)] = sdp.message;
  }
  return out;
}

void write_timing_csv(const std::vector<BenchRow>& rows, std::ostream& os) {
  os << "suite,case,mode,agents,obstacles,converged,dnf,iterations,wall_ms,"
        "per_iter_ms\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.suite << "," << r.case_name << "," << r.mode << "," << r.n_agents
       << "," << r.n_obstacles << "," << (r.converged ? 1 : 0) << ","
       << (r.dnf ? 1 : 0) << "," << r.iterations << "," << r.wall_ms << ","
       << r.per_iter_ms << "\n";
}

}  // namespace rsteer::bench
