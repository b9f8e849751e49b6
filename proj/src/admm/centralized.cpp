#include <chrono>
#include <memory>

#include "rsteer/admm/admm.hpp"

namespace rsteer::admm {

using constraints::AgentVars;

// Reference solver: one conic program over all agents with the inter-agent
// rows written directly between the agents' trajectory variables, re-solved
// in an outer loop that refreshes the linearization nominals.
RunResult run_centralized(const MultiAgentProblem& prob,
                          const CentralizedConfig& cfg) {
  prob.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int N = prob.n_agents();
  const int m = static_cast<int>(prob.h_pos.rows());

  RunResult out;
  std::vector<VectorXd> nominal(N);
  for (int i = 0; i < N; ++i) nominal[i] = warm_start_line(prob, i);

  std::vector<lifting::Policy> policies;
  for (int i = 0; i < N; ++i)
    policies.push_back(lifting::Policy::zero(prob.agents[i].dyn));

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    conic::ConicProgram prog;
    std::vector<std::unique_ptr<AgentVars>> vars;
    vars.reserve(N);
    for (int i = 0; i < N; ++i) {
      const auto& ag = prob.agents[i];
      vars.push_back(std::make_unique<AgentVars>(
          prog, ag.dyn, ag.lift, ag.set,
          ag.noise.has_value() ? &*ag.noise : nullptr, prob.h_pos,
          "a" + std::to_string(i) + ".", prob.robust_margins));
      vars[i]->add_policy_cost(prob.r_u, prob.r_k);
      vars[i]->mu_hat_block();
      vars[i]->mu_d_block();
    }
    for (int i = 0; i < N; ++i) {
      const auto& ag = prob.agents[i];
      for (const auto& c : ag.linear_means)
        constraints::reformulate_linear_mean(*vars[i], c);
      for (const auto& c : ag.targets)
        constraints::reformulate_mean_target(*vars[i], c);
      int tag = 0;
      for (const auto& c : ag.chance)
        constraints::reformulate_chance(*vars[i], c, std::to_string(tag++));
      tag = 0;
      for (const auto& c : ag.covariance)
        constraints::reformulate_covariance(*vars[i], c, std::to_string(tag++));
      for (size_t o = 0; o < prob.obstacles.size(); ++o)
        for (int k = 1; k <= ag.dyn.T; ++k) {
          constraints::ObstacleAvoid spec;
          spec.b = prob.obstacles[o].center;
          spec.c = prob.obstacles[o].clearance;
          spec.k = k;
          constraints::reformulate_obstacle_socp(
              *vars[i], spec, nominal[i],
              std::to_string(o) + "," + std::to_string(k));
        }
      for (int j : prob.neighbors[i])
        for (int k = 1; k <= ag.dyn.T; ++k) {
          constraints::InterAgentAvoid spec;
          spec.c_ij = prob.c_interagent;
          spec.neighbor = j;
          spec.k = k;
          constraints::reformulate_interagent_socp(
              *vars[i], spec, vars[j].get(), nullptr, nominal[i], nominal[j],
              std::to_string(j) + "," + std::to_string(k));
        }
      for (int k = 0; k <= ag.dyn.T; ++k) vars[i]->ensure_mu_d_bounds(k);
    }

    conic::SolveOptions opts;
    opts.tol = cfg.solver_tol;
    conic::SolveResult res = conic::solve(prog, opts);
    out.iterations = outer + 1;
    if (res.status != conic::SolveStatus::Optimal) {
      out.error = std::string("centralized solve failed: ") +
                  conic::to_string(res.status);
      out.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t_start)
                        .count();
      return out;
    }

    double move = 0.0;
    out.objective = 0.0;
    out.final_mu_hat.clear();
    out.final_mu_d.clear();
    for (int i = 0; i < N; ++i) {
      VectorXd mu =
          prog.block_value(res.x, vars[i]->mu_hat_block()).col(0);
      move = std::max(move, (mu - nominal[i]).lpNorm<Eigen::Infinity>());
      nominal[i] = mu;
      out.final_mu_hat.push_back(mu);
      out.final_mu_d.push_back(
          prog.block_value(res.x, vars[i]->mu_d_block()).col(0));
      const auto& dyn = prob.agents[i].dyn;
      lifting::Policy pol = lifting::Policy::zero(dyn);
      pol.u_bar() = prog.block_value(res.x, vars[i]->ubar_block()).col(0);
      MatrixXd K = prog.block_value(res.x, vars[i]->gain_block());
      for (int k = 0; k < dyn.T; ++k)
        for (int l = std::max(0, k - dyn.gamma_h + 1); l <= k; ++l)
          pol.set_gain_block(
              k, l, K.block(k * dyn.nu(), l * dyn.nx(), dyn.nu(), dyn.nx()));
      policies[i] = pol;
      out.objective += prob.r_u * pol.u_bar().squaredNorm() +
                       prob.r_k * prob.r_k * pol.K().squaredNorm();
    }
    (void)m;
    if (move < cfg.move_tol) {
      out.converged = true;
      break;
    }
  }
  out.policies = std::move(policies);
  out.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_start)
                    .count();
  out.converged = out.error.empty();
  return out;
}

}  // namespace rsteer::admm
