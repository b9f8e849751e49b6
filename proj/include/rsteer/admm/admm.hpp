#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rsteer/conic/program.hpp"
#include "rsteer/conic/solver.hpp"
#include "rsteer/constraints.hpp"
#include "rsteer/lifting.hpp"
#include "rsteer/uncertainty.hpp"

namespace rsteer::admm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Obstacle {
  VectorXd center;         // position space
  double clearance = 0.0;  // required distance of the mean from the center
};

// One agent's problem data. The uncertainty set has no default value, so
// construct with the set and fill the rest.
struct AgentProblem {
  explicit AgentProblem(uncertainty::UncertaintySet s) : set(std::move(s)) {}

  lifting::AgentDynamics dyn;
  lifting::LiftedDynamics lift;
  uncertainty::UncertaintySet set;
  std::optional<uncertainty::NoiseModel> noise;

  std::vector<constraints::LinearMean> linear_means;
  std::vector<constraints::MeanTargetBox> targets;
  std::vector<constraints::ChanceLinear> chance;
  std::vector<constraints::CovarianceBound> covariance;

  VectorXd target_pos;  // warm-start terminal position (may be empty)
};

struct MultiAgentProblem {
  std::vector<AgentProblem> agents;
  std::vector<Obstacle> obstacles;          // applied to every agent
  std::vector<std::vector<int>> neighbors;  // N_i per agent
  MatrixXd h_pos;
  double c_interagent = 0.25;
  double r_u = 0.05;  // feed-forward cost weight
  double r_k = 0.05;  // feedback-gain cost weight
  // Disable to solve the nominal-only baseline (no disturbance margins).
  bool robust_margins = true;

  int n_agents() const { return static_cast<int>(agents.size()); }
  // Agents that consider i a neighbour (the set P_i).
  std::vector<int> owners_of(int i) const;
  void validate() const;  // throws std::invalid_argument
};

struct AdmmConfig {
  double rho_u = 100.0;
  double rho_d = 1.0;
  int max_iters = 200;
  double eps_primal = 0.1;
  double eps_dual = 0.1;
  double solver_tol = 1e-7;
  int threads = 0;  // 0: one per agent up to hardware limit
  bool record_global_updates = false;
};

// Consensus exchange layer. Every cross-agent read goes through here and is
// recorded, which is what the information-locality audit inspects.
enum class ExchangeKind { CopyToOwner, GlobalBroadcast };

struct ExchangeRecord {
  int iter;
  int from;
  int to;
  ExchangeKind kind;
};

struct CopyPayload {  // lambda/rho + copy value, one term of the average
  VectorXd mu_hat_term;
  VectorXd mu_d_term;
};

struct GlobalPayload {
  VectorXd nu_u;
  VectorXd nu_d;
};

class MessageBus {
 public:
  explicit MessageBus(int n_agents)
      : copies_(n_agents), globals_(n_agents) {}

  void post_copy(int iter, int from, int owner, CopyPayload p);
  void post_global(int iter, int owner, int to, GlobalPayload p);
  // Drains the owner's copy mailbox (sorted by sender for determinism).
  std::vector<std::pair<int, CopyPayload>> take_copies(int owner);
  std::map<int, GlobalPayload> take_globals(int to);
  const std::vector<ExchangeRecord>& audit() const { return audit_; }

 private:
  std::vector<std::map<int, CopyPayload>> copies_;
  std::vector<std::map<int, GlobalPayload>> globals_;
  std::vector<ExchangeRecord> audit_;
};

// Local primal/dual state of one agent (spec layout: policy variables, own
// trajectory families, per-neighbour copies, and matching duals).
struct AgentLocalState {
  VectorXd u_bar;
  MatrixXd K;
  VectorXd mu_hat;
  VectorXd mu_d;
  std::map<int, VectorXd> copy_mu_hat;
  std::map<int, VectorXd> copy_mu_d;
  VectorXd lam_u, lam_d;
  std::map<int, VectorXd> lam_u_copy, lam_d_copy;
};

struct GlobalState {
  std::vector<VectorXd> nu_u;
  std::vector<VectorXd> nu_d;
};

struct TracePoint {
  int iter;
  double primal;
  double dual;
  double max_agent_solve_ms;
};

struct GlobalUpdateRecord {
  int iter;
  int agent;
  double rho_u, rho_d;
  VectorXd lam_u_own, lam_d_own;
  VectorXd mu_hat_own, mu_d_own;
  std::vector<VectorXd> contrib_u, contrib_d;  // lambda/rho + copy terms
  VectorXd nu_u, nu_d;
};

struct RunResult {
  bool converged = false;
  int iterations = 0;
  std::vector<lifting::Policy> policies;
  std::vector<TracePoint> trace;
  double time_metric_ms = 0.0;  // sum over iterations of max agent solve time
  double wall_ms = 0.0;
  double final_primal = 0.0, final_dual = 0.0;
  std::vector<ExchangeRecord> audit;
  std::string error;  // nonempty when a local solve failed
  int failed_agent = -1;
  std::vector<VectorXd> final_mu_hat, final_mu_d;
  std::vector<GlobalUpdateRecord> global_log;
  double objective = 0.0;  // sum of per-agent policy costs
};

// Assembled local subproblem together with the handles needed to read the
// solution back out.
struct LocalProgram {
  conic::ConicProgram prog;
  std::unique_ptr<constraints::AgentVars> vars;
  std::map<int, constraints::NeighborCopies> copies;
};

// Builds agent i's subproblem at one iteration: policy cost, every
// reformulated constraint row (inter-agent rows against the copies), the
// consensus coupling terms of the augmented Lagrangian.
LocalProgram assemble_local_subproblem(
    const MultiAgentProblem& prob, int i, const AgentLocalState& state,
    const VectorXd& nu_u_own, const VectorXd& nu_d_own,
    const std::map<int, GlobalPayload>& neighbor_globals,
    const VectorXd& nominal_mu_hat,
    const std::map<int, VectorXd>& nominal_copies, const AdmmConfig& cfg);

// Closed-form global update for one agent (the averaging identity).
void global_update(const VectorXd& lam_u_own, const VectorXd& lam_d_own,
                   const VectorXd& mu_hat_own, const VectorXd& mu_d_own,
                   const std::vector<CopyPayload>& received,
                   const AdmmConfig& cfg, VectorXd& nu_u, VectorXd& nu_d);

// lambda <- lambda + rho (mu - nu), applied per family.
void dual_update(AgentLocalState& state, const VectorXd& nu_u_own,
                 const VectorXd& nu_d_own,
                 const std::map<int, GlobalPayload>& neighbor_globals,
                 const AdmmConfig& cfg);

// Primal and dual residuals of the consensus iteration.
std::pair<double, double> residuals(
    const std::vector<AgentLocalState>& locals, const GlobalState& now,
    const GlobalState& prev, const std::vector<std::vector<int>>& neighbors,
    const AdmmConfig& cfg);

RunResult run(const MultiAgentProblem& prob, const AdmmConfig& cfg,
              std::uint64_t seed);

struct CentralizedConfig {
  int max_outer = 10;
  double move_tol = 1e-4;
  double solver_tol = 1e-7;
};

RunResult run_centralized(const MultiAgentProblem& prob,
                          const CentralizedConfig& cfg);

// Warm-start position line from the initial mean position to the target.
VectorXd warm_start_line(const MultiAgentProblem& prob, int i);

}  // namespace rsteer::admm
