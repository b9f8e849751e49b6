#include "rsteer/admm/admm.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <thread>

namespace rsteer::admm {

using conic::LinExpr;
using constraints::AgentVars;

std::vector<int> MultiAgentProblem::owners_of(int i) const {
  std::vector<int> owners;
  for (int j = 0; j < n_agents(); ++j)
    if (j != i &&
        std::find(neighbors[j].begin(), neighbors[j].end(), i) !=
            neighbors[j].end())
      owners.push_back(j);
  return owners;
}

void MultiAgentProblem::validate() const {
  if (agents.empty()) throw std::invalid_argument("no agents");
  if (neighbors.size() != agents.size())
    throw std::invalid_argument("neighbor list size mismatch");
  for (size_t i = 0; i < neighbors.size(); ++i)
    for (int j : neighbors[i])
      if (j < 0 || j >= n_agents() || j == static_cast<int>(i))
        throw std::invalid_argument("invalid neighbor id");
  for (const auto& o : obstacles)
    if (o.clearance <= 0.0)
      throw std::invalid_argument("obstacle clearance must be positive");
  if (c_interagent <= 0.0)
    throw std::invalid_argument("inter-agent threshold must be positive");
}

void MessageBus::post_copy(int iter, int from, int owner, CopyPayload p) {
  audit_.push_back({iter, from, owner, ExchangeKind::CopyToOwner});
  copies_[owner][from] = std::move(p);
}

void MessageBus::post_global(int iter, int owner, int to, GlobalPayload p) {
  audit_.push_back({iter, owner, to, ExchangeKind::GlobalBroadcast});
  globals_[to][owner] = std::move(p);
}

std::vector<std::pair<int, CopyPayload>> MessageBus::take_copies(int owner) {
  std::vector<std::pair<int, CopyPayload>> out(copies_[owner].begin(),
                                               copies_[owner].end());
  copies_[owner].clear();
  return out;
}

std::map<int, GlobalPayload> MessageBus::take_globals(int to) {
  std::map<int, GlobalPayload> out = std::move(globals_[to]);
  globals_[to].clear();
  return out;
}

VectorXd warm_start_line(const MultiAgentProblem& prob, int i) {
  const auto& ag = prob.agents[i];
  const int T = ag.dyn.T;
  const int m = static_cast<int>(prob.h_pos.rows());
  const VectorXd p0 = prob.h_pos * ag.dyn.x0_bar;
  VectorXd pT = ag.target_pos.size() == m ? ag.target_pos : p0;
  VectorXd line((T + 1) * m);
  for (int k = 0; k <= T; ++k)
    line.segment(k * m, m) = p0 + (pT - p0) * (double(k) / T);
  return line;
}

namespace {

// lambda^T v + (rho/2) ||v - t||^2 accumulated onto a whole block.
void add_al_terms(conic::ConicProgram& prog, int block, const VectorXd& lam,
                  const VectorXd& target, double rho) {
  const auto& b = prog.block(block);
  for (int r = 0; r < b.rows; ++r) {
    const int v = prog.var(block, r, 0);
    prog.obj_add_quad(v, v, 0.5 * rho);
    prog.obj_add_linear(v, lam[r] - rho * target[r]);
  }
}

lifting::Policy extract_policy(const conic::ConicProgram& prog,
                               const AgentVars& vars, const VectorXd& x) {
  const auto& dyn = vars.dyn();
  lifting::Policy pol = lifting::Policy::zero(dyn);
  pol.u_bar() = prog.block_value(x, vars.ubar_block()).col(0);
  MatrixXd K = prog.block_value(x, vars.gain_block());
  for (int k = 0; k < dyn.T; ++k)
    for (int l = std::max(0, k - dyn.gamma_h + 1); l <= k; ++l)
      pol.set_gain_block(
          k, l, K.block(k * dyn.nu(), l * dyn.nx(), dyn.nu(), dyn.nx()));
  return pol;
}

void run_parallel(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

LocalProgram assemble_local_subproblem(
    const MultiAgentProblem& prob, int i, const AgentLocalState& state,
    const VectorXd& nu_u_own, const VectorXd& nu_d_own,
    const std::map<int, GlobalPayload>& neighbor_globals,
    const VectorXd& nominal_mu_hat,
    const std::map<int, VectorXd>& nominal_copies, const AdmmConfig& cfg) {
  const auto& ag = prob.agents[i];
  const int T = ag.dyn.T;
  const int m = static_cast<int>(prob.h_pos.rows());

  LocalProgram lp;
  lp.vars = std::make_unique<AgentVars>(
      lp.prog, ag.dyn, ag.lift, ag.set,
      ag.noise.has_value() ? &*ag.noise : nullptr, prob.h_pos,
      "a" + std::to_string(i) + ".", prob.robust_margins);
  AgentVars& vars = *lp.vars;
  vars.add_policy_cost(prob.r_u, prob.r_k);
  vars.mu_hat_block();
  vars.mu_d_block();

  for (const auto& c : ag.linear_means)
    constraints::reformulate_linear_mean(vars, c);
  for (const auto& c : ag.targets)
    constraints::reformulate_mean_target(vars, c);
  int tag = 0;
  for (const auto& c : ag.chance)
    constraints::reformulate_chance(vars, c, std::to_string(tag++));
  tag = 0;
  for (const auto& c : ag.covariance)
    constraints::reformulate_covariance(vars, c, std::to_string(tag++));

  for (size_t o = 0; o < prob.obstacles.size(); ++o)
    for (int k = 1; k <= T; ++k) {
      constraints::ObstacleAvoid spec;
      spec.b = prob.obstacles[o].center;
      spec.c = prob.obstacles[o].clearance;
      spec.k = k;
      constraints::reformulate_obstacle_socp(
          vars, spec, nominal_mu_hat,
          std::to_string(o) + "," + std::to_string(k));
    }

  for (int j : prob.neighbors[i]) {
    constraints::NeighborCopies cp;
    cp.mu_hat_block = lp.prog.add_block(
        "a" + std::to_string(i) + ".copy_mu_hat[" + std::to_string(j) + "]",
        (T + 1) * m);
    cp.mu_d_block = lp.prog.add_block(
        "a" + std::to_string(i) + ".copy_mu_d[" + std::to_string(j) + "]",
        (T + 1) * m);
    lp.copies[j] = cp;
    const VectorXd& nominal_j = nominal_copies.at(j);
    for (int k = 1; k <= T; ++k) {
      constraints::InterAgentAvoid spec;
      spec.c_ij = prob.c_interagent;
      spec.neighbor = j;
      spec.k = k;
      constraints::reformulate_interagent_socp(
          vars, spec, nullptr, &lp.copies[j], nominal_mu_hat, nominal_j,
          std::to_string(j) + "," + std::to_string(k));
    }
  }

  // Deviation-bound rows at every step, shared across all collision rows.
  for (int k = 0; k <= T; ++k) vars.ensure_mu_d_bounds(k);

  // Augmented-Lagrangian coupling toward the consensus values.
  add_al_terms(lp.prog, vars.mu_hat_block(), state.lam_u, nu_u_own, cfg.rho_u);
  add_al_terms(lp.prog, vars.mu_d_block(), state.lam_d, nu_d_own, cfg.rho_d);
  for (int j : prob.neighbors[i]) {
    const auto& gl = neighbor_globals.at(j);
    add_al_terms(lp.prog, lp.copies[j].mu_hat_block, state.lam_u_copy.at(j),
                 gl.nu_u, cfg.rho_u);
    add_al_terms(lp.prog, lp.copies[j].mu_d_block, state.lam_d_copy.at(j),
                 gl.nu_d, cfg.rho_d);
  }
  return lp;
}

void global_update(const VectorXd& lam_u_own, const VectorXd& lam_d_own,
                   const VectorXd& mu_hat_own, const VectorXd& mu_d_own,
                   const std::vector<CopyPayload>& received,
                   const AdmmConfig& cfg, VectorXd& nu_u, VectorXd& nu_d) {
  const double m_i = 1.0 + static_cast<double>(received.size());
  nu_u = lam_u_own / cfg.rho_u + mu_hat_own;
  nu_d = lam_d_own / cfg.rho_d + mu_d_own;
  for (const auto& p : received) {
    nu_u += p.mu_hat_term;
    nu_d += p.mu_d_term;
  }
  nu_u /= m_i;
  nu_d /= m_i;
}

void dual_update(AgentLocalState& state, const VectorXd& nu_u_own,
                 const VectorXd& nu_d_own,
                 const std::map<int, GlobalPayload>& neighbor_globals,
                 const AdmmConfig& cfg) {
  state.lam_u += cfg.rho_u * (state.mu_hat - nu_u_own);
  state.lam_d += cfg.rho_d * (state.mu_d - nu_d_own);
  for (auto& [j, lam] : state.lam_u_copy)
    lam += cfg.rho_u * (state.copy_mu_hat.at(j) - neighbor_globals.at(j).nu_u);
  for (auto& [j, lam] : state.lam_d_copy)
    lam += cfg.rho_d * (state.copy_mu_d.at(j) - neighbor_globals.at(j).nu_d);
}

std::pair<double, double> residuals(
    const std::vector<AgentLocalState>& locals, const GlobalState& now,
    const GlobalState& prev, const std::vector<std::vector<int>>& neighbors,
    const AdmmConfig& cfg) {
  const int N = static_cast<int>(locals.size());
  double num = 0.0;
  double denom = N;
  for (int i = 0; i < N; ++i) {
    num += (locals[i].mu_hat - now.nu_u[i]).squaredNorm() +
           (locals[i].mu_d - now.nu_d[i]).squaredNorm();
    for (int j : neighbors[i]) {
      num += (locals[i].copy_mu_hat.at(j) - now.nu_u[j]).squaredNorm() +
             (locals[i].copy_mu_d.at(j) - now.nu_d[j]).squaredNorm();
      denom += 1.0;
    }
  }
  const double primal = std::sqrt(num / denom);
  double dual_sq = 0.0;
  for (int i = 0; i < N; ++i) {
    dual_sq +=
        cfg.rho_u * cfg.rho_u * (now.nu_u[i] - prev.nu_u[i]).squaredNorm() +
        cfg.rho_d * cfg.rho_d * (now.nu_d[i] - prev.nu_d[i]).squaredNorm();
  }
  const double dual = std::sqrt(dual_sq) / N;
  return {primal, dual};
}

RunResult run(const MultiAgentProblem& prob, const AdmmConfig& cfg,
              std::uint64_t seed) {
  (void)seed;  // the run itself is deterministic; seeds key downstream sampling
  prob.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int N = prob.n_agents();
  const int m = static_cast<int>(prob.h_pos.rows());

  RunResult out;
  MessageBus bus(N);

  int threads = cfg.threads;
  if (threads <= 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, N);

  // Warm start: straight-line position trajectories and open-loop deviation
  // bounds; globals start at the warm-start values, duals at zero.
  std::vector<AgentLocalState> locals(N);
  GlobalState globals;
  globals.nu_u.resize(N);
  globals.nu_d.resize(N);
  for (int i = 0; i < N; ++i) {
    const auto& ag = prob.agents[i];
    conic::ConicProgram scratch;
    AgentVars vs(scratch, ag.dyn, ag.lift, ag.set, nullptr, prob.h_pos, "s.");
    const int n_traj = (ag.dyn.T + 1) * m;
    locals[i].mu_hat = warm_start_line(prob, i);
    locals[i].mu_d = vs.open_loop_mu_d();
    locals[i].lam_u = VectorXd::Zero(n_traj);
    locals[i].lam_d = VectorXd::Zero(n_traj);
    globals.nu_u[i] = locals[i].mu_hat;
    globals.nu_d[i] = locals[i].mu_d;
  }
  // Initial broadcast so copies and copy-duals exist for every neighbour.
  for (int i = 0; i < N; ++i)
    for (int j : prob.neighbors[i])
      bus.post_global(0, j, i, {globals.nu_u[j], globals.nu_d[j]});
  std::vector<std::map<int, GlobalPayload>> received_globals(N);
  for (int i = 0; i < N; ++i) {
    received_globals[i] = bus.take_globals(i);
    for (int j : prob.neighbors[i]) {
      locals[i].copy_mu_hat[j] = received_globals[i].at(j).nu_u;
      locals[i].copy_mu_d[j] = received_globals[i].at(j).nu_d;
      locals[i].lam_u_copy[j] = VectorXd::Zero((prob.agents[j].dyn.T + 1) * m);
      locals[i].lam_d_copy[j] = VectorXd::Zero((prob.agents[j].dyn.T + 1) * m);
    }
  }

  std::vector<VectorXd> nominal_mu_hat(N);
  for (int i = 0; i < N; ++i) nominal_mu_hat[i] = locals[i].mu_hat;

  std::vector<lifting::Policy> policies;
  std::vector<double> objectives(N, 0.0);
  policies.reserve(N);
  for (int i = 0; i < N; ++i)
    policies.push_back(lifting::Policy::zero(prob.agents[i].dyn));

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    // Block I: local updates, embarrassingly parallel across agents.
    std::vector<double> solve_ms(N, 0.0);
    std::vector<std::string> errors(N);
    run_parallel(N, threads, [&](int i) {
      const auto t0 = std::chrono::steady_clock::now();
      std::map<int, VectorXd> nominal_copies;
      for (int j : prob.neighbors[i])
        nominal_copies[j] = locals[i].copy_mu_hat.at(j);
      LocalProgram lp = assemble_local_subproblem(
          prob, i, locals[i], globals.nu_u[i], globals.nu_d[i],
          received_globals[i], nominal_mu_hat[i], nominal_copies, cfg);
      conic::SolveOptions opts;
      opts.tol = cfg.solver_tol;
      conic::SolveResult res = conic::solve(lp.prog, opts);
      if (res.status != conic::SolveStatus::Optimal) {
        errors[i] =
            std::string("local solve failed: ") + conic::to_string(res.status);
        return;
      }
      locals[i].u_bar =
          lp.prog.block_value(res.x, lp.vars->ubar_block()).col(0);
      locals[i].K = lp.prog.block_value(res.x, lp.vars->gain_block());
      locals[i].mu_hat =
          lp.prog.block_value(res.x, lp.vars->mu_hat_block()).col(0);
      locals[i].mu_d = lp.prog.block_value(res.x, lp.vars->mu_d_block()).col(0);
      for (int j : prob.neighbors[i]) {
        locals[i].copy_mu_hat[j] =
            lp.prog.block_value(res.x, lp.copies[j].mu_hat_block).col(0);
        locals[i].copy_mu_d[j] =
            lp.prog.block_value(res.x, lp.copies[j].mu_d_block).col(0);
      }
      policies[i] = extract_policy(lp.prog, *lp.vars, res.x);
      objectives[i] = prob.r_u * locals[i].u_bar.squaredNorm() +
                      prob.r_k * prob.r_k * locals[i].K.squaredNorm();
      solve_ms[i] = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    });
    for (int i = 0; i < N; ++i)
      if (!errors[i].empty()) {
        out.error = "agent " + std::to_string(i) + ": " + errors[i];
        out.failed_agent = i;
        out.iterations = iter;
        out.audit = bus.audit();
        return out;
      }

    // Exchange copies to their owners.
    for (int i = 0; i < N; ++i)
      for (int j : prob.neighbors[i]) {
        CopyPayload p;
        p.mu_hat_term = locals[i].lam_u_copy.at(j) / cfg.rho_u +
                        locals[i].copy_mu_hat.at(j);
        p.mu_d_term =
            locals[i].lam_d_copy.at(j) / cfg.rho_d + locals[i].copy_mu_d.at(j);
        bus.post_copy(iter, i, j, std::move(p));
      }

    // Block II: closed-form global update per agent.
    GlobalState prev = globals;
    for (int i = 0; i < N; ++i) {
      auto received = bus.take_copies(i);
      std::vector<CopyPayload> payloads;
      payloads.reserve(received.size());
      for (auto& [from, p] : received) payloads.push_back(std::move(p));
      global_update(locals[i].lam_u, locals[i].lam_d, locals[i].mu_hat,
                    locals[i].mu_d, payloads, cfg, globals.nu_u[i],
                    globals.nu_d[i]);
      if (cfg.record_global_updates) {
        GlobalUpdateRecord rec;
        rec.iter = iter;
        rec.agent = i;
        rec.rho_u = cfg.rho_u;
        rec.rho_d = cfg.rho_d;
        rec.lam_u_own = locals[i].lam_u;
        rec.lam_d_own = locals[i].lam_d;
        rec.mu_hat_own = locals[i].mu_hat;
        rec.mu_d_own = locals[i].mu_d;
        for (const auto& p : payloads) {
          rec.contrib_u.push_back(p.mu_hat_term);
          rec.contrib_d.push_back(p.mu_d_term);
        }
        rec.nu_u = globals.nu_u[i];
        rec.nu_d = globals.nu_d[i];
        out.global_log.push_back(std::move(rec));
      }
    }

    // Broadcast the fresh globals to the neighbours that use them.
    for (int i = 0; i < N; ++i)
      for (int j : prob.neighbors[i])
        bus.post_global(iter, j, i, {globals.nu_u[j], globals.nu_d[j]});
    for (int i = 0; i < N; ++i) received_globals[i] = bus.take_globals(i);

    // Dual ascent on the consensus gaps.
    for (int i = 0; i < N; ++i)
      dual_update(locals[i], globals.nu_u[i], globals.nu_d[i],
                  received_globals[i], cfg);

    // Next linearization nominal is this iteration's own trajectory.
    for (int i = 0; i < N; ++i) nominal_mu_hat[i] = locals[i].mu_hat;

    auto [primal, dual] = residuals(locals, globals, prev, prob.neighbors, cfg);
    double max_ms = 0.0;
    for (double v : solve_ms) max_ms = std::max(max_ms, v);
    out.time_metric_ms += max_ms;
    out.trace.push_back({iter, primal, dual, max_ms});
    out.iterations = iter;
    out.final_primal = primal;
    out.final_dual = dual;
    if (primal <= cfg.eps_primal && dual <= cfg.eps_dual) {
      out.converged = true;
      break;
    }
  }

  out.policies = std::move(policies);
  for (int i = 0; i < N; ++i) {
    out.final_mu_hat.push_back(locals[i].mu_hat);
    out.final_mu_d.push_back(locals[i].mu_d);
    out.objective += objectives[i];
  }
  out.audit = bus.audit();
  out.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_start)
                    .count();
  return out;
}

}  // namespace rsteer::admm
