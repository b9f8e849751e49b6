#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "rsteer/admm/admm.hpp"
#include "rsteer/lifting.hpp"

namespace rsteer::validate {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Sample {
  int zeta_id;
  int w_id;
};

struct TrajectoryEnsemble {
  int n_agents = 0;
  int T = 0;
  int nx = 0;
  int n_w_draws = 1;  // noise draws per zeta (1 with w = 0 when no noise)
  std::vector<Sample> samples;
  std::vector<std::vector<VectorXd>> zetas;  // [agent][zeta_id]
  std::vector<std::vector<VectorXd>> noises; // [agent][sample] (empty if w=0)
  std::vector<std::vector<lifting::RolloutResult>> rollouts;  // [agent][sample]
  MatrixXd h_pos;

  int n_samples() const { return static_cast<int>(samples.size()); }
  VectorXd position(int agent, int sample, int k) const {
    return h_pos * rollouts[agent][sample].states.col(k);
  }
};

// Rolls out the closed loop for n_zeta disturbance draws per agent and n_w
// Gaussian noise draws each (n_w = 0, or no noise model: a single w = 0
// rollout per zeta). Deterministic given the seed.
TrajectoryEnsemble monte_carlo(const admm::MultiAgentProblem& prob,
                               const std::vector<lifting::Policy>& policies,
                               int n_zeta, int n_w, std::uint64_t seed);

// Per-agent per-time-step minimum distance to the agent's neighbours,
// minimized over samples (realized positions).
MatrixXd min_neighbor_distances(const TrajectoryEnsemble& ens,
                                const std::vector<std::vector<int>>& neighbors);

struct FeasibilityEntry {
  std::string name;
  double worst_margin = 0.0;  // >= 0 means satisfied
  int violations = 0;
  int checks = 0;
};

struct FeasibilityReport {
  std::vector<FeasibilityEntry> entries;
  int total_violations() const {
    int v = 0;
    for (const auto& e : entries) v += e.violations;
    return v;
  }
  double worst_margin() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::min(w, e.worst_margin);
    return w;
  }
};

// Evaluates every original (pre-reformulation) robust constraint on the
// sampled disturbances plus the analytic worst-case directions where
// available; never looks at the reformulated rows.
FeasibilityReport check_feasibility(const admm::MultiAgentProblem& prob,
                                    const std::vector<lifting::Policy>& pols,
                                    const TrajectoryEnsemble& ens, double tol);

struct CovarianceCheck {
  MatrixXd sample_cov;
  bool dominated = false;
  double min_eig = 0.0;       // of bound - sample covariance
  double tolerance = 0.0;     // statistical band used
};

// Sample covariance of agent's state at one time step over the noise draws
// at fixed zeta (zeta_id 0), with the domination check against the bound.
CovarianceCheck empirical_covariance(const TrajectoryEnsemble& ens, int agent,
                                     int k, const MatrixXd& bound);

// File emission (CSV rows: agent, zeta_id, w_id, k, state..., control...).
void write_trajectories_csv(const TrajectoryEnsemble& ens, std::ostream& os);
void write_distances_csv(const MatrixXd& distances, std::ostream& os);

}  // namespace rsteer::validate
