#include "rsteer/validate.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "rsteer/rng.hpp"
#include "rsteer/uncertainty.hpp"

namespace rsteer::validate {

TrajectoryEnsemble monte_carlo(const admm::MultiAgentProblem& prob,
                               const std::vector<lifting::Policy>& policies,
                               int n_zeta, int n_w, std::uint64_t seed) {
  if (policies.size() != prob.agents.size())
    throw std::invalid_argument("one policy per agent required");
  const int N = prob.n_agents();
  TrajectoryEnsemble ens;
  ens.n_agents = N;
  ens.T = prob.agents[0].dyn.T;
  ens.nx = prob.agents[0].dyn.nx();
  ens.h_pos = prob.h_pos;

  ens.zetas.resize(N);
  ens.noises.resize(N);
  ens.rollouts.resize(N);

  for (int i = 0; i < N; ++i) {
    const auto& ag = prob.agents[i];
    if (policies[i].T() != ag.dyn.T || policies[i].nx() != ag.dyn.nx())
      throw std::invalid_argument("policy dimensioned for a different agent");
    ens.zetas[i] = uncertainty::sample_disturbance(
        ag.set, n_zeta, seed ^ (0x9e3779b9ULL * (i + 1)),
        uncertainty::SampleMode::Interior);
  }

  const bool with_noise = n_w > 0;
  ens.n_w_draws = with_noise ? n_w : 1;
  for (int z = 0; z < n_zeta; ++z)
    for (int w = 0; w < ens.n_w_draws; ++w) ens.samples.push_back({z, w});

  for (int i = 0; i < N; ++i) {
    const auto& ag = prob.agents[i];
    Rng agent_rng = Rng(seed).fork(1000 + i);
    const bool has_noise = with_noise && ag.noise.has_value();
    ens.rollouts[i].reserve(ens.samples.size());
    for (const auto& s : ens.samples) {
      VectorXd w = VectorXd::Zero(ag.dyn.n_noise());
      if (has_noise)
        w = ag.noise->phi * agent_rng.normal_vector(ag.dyn.n_noise());
      if (has_noise) ens.noises[i].push_back(w);
      ens.rollouts[i].push_back(
          lifting::rollout(ag.dyn, policies[i], ens.zetas[i][s.zeta_id], w));
    }
  }
  return ens;
}

MatrixXd min_neighbor_distances(
    const TrajectoryEnsemble& ens,
    const std::vector<std::vector<int>>& neighbors) {
  if (ens.n_agents < 2)
    throw std::invalid_argument("need at least two agents");
  MatrixXd out = MatrixXd::Constant(ens.n_agents, ens.T + 1,
                                    std::numeric_limits<double>::infinity());
  for (int i = 0; i < ens.n_agents; ++i) {
    // Nearest neighbour estimated from realizations of i and its neighbours,
    // paired by sample index.
    std::vector<int> others = neighbors[i];
    for (int j = 0; j < ens.n_agents; ++j)
      if (j != i && std::find(neighbors[j].begin(), neighbors[j].end(), i) !=
                        neighbors[j].end())
        if (std::find(others.begin(), others.end(), j) == others.end())
          others.push_back(j);
    for (int k = 0; k <= ens.T; ++k) {
      double best = std::numeric_limits<double>::infinity();
      for (int j : others)
        for (int s = 0; s < ens.n_samples(); ++s)
          best = std::min(best,
                          (ens.position(i, s, k) - ens.position(j, s, k)).norm());
      out(i, k) = best;
    }
  }
  return out;
}

namespace {

using lifting::state_mean;

VectorXd mean_at(const admm::AgentProblem& ag, const lifting::Policy& pol,
                 const VectorXd& zeta) {
  return state_mean(ag.lift, ag.dyn.x0_bar, pol, zeta);
}

// Worst-case disturbance for maximizing a . E[x] under the agent's set.
VectorXd analytic_worst(const admm::AgentProblem& ag,
                        const lifting::Policy& pol, const VectorXd& a) {
  const MatrixXd M =
      ag.lift.Gzeta + ag.lift.Gu * (pol.K() * ag.lift.Gzeta);
  const VectorXd mta = ag.set.Gamma().transpose() * (M.transpose() * a);
  if (ag.set.s_inv_norm(mta) < 1e-12) return VectorXd::Zero(ag.lift.n_zeta());
  return ag.set.Gamma() * uncertainty::worst_case_z(ag.set, mta);
}

}  // namespace

FeasibilityReport check_feasibility(const admm::MultiAgentProblem& prob,
                                    const std::vector<lifting::Policy>& pols,
                                    const TrajectoryEnsemble& ens,
                                    double tol) {
  FeasibilityReport rep;
  const int N = prob.n_agents();
  const int m = static_cast<int>(prob.h_pos.rows());

  for (int i = 0; i < N; ++i) {
    const auto& ag = prob.agents[i];
    const int T = ag.dyn.T;
    const int nx = ag.dyn.nx();

    // Means at sampled and worst-case disturbances.
    std::vector<VectorXd> means;
    means.reserve(ens.zetas[i].size());
    for (const auto& z : ens.zetas[i]) means.push_back(mean_at(ag, pols[i], z));

    int tagn = 0;
    for (const auto& c : ag.linear_means) {
      FeasibilityEntry e;
      e.name = "agent" + std::to_string(i) + ".linear_mean" +
               std::to_string(tagn++);
      e.worst_margin = std::numeric_limits<double>::infinity();
      auto consider = [&](const VectorXd& mean) {
        const double margin = c.b - c.a.dot(mean);
        e.worst_margin = std::min(e.worst_margin, margin);
        e.checks++;
        if (margin < -tol) e.violations++;
      };
      for (const auto& mean : means) consider(mean);
      consider(mean_at(ag, pols[i], analytic_worst(ag, pols[i], c.a)));
      rep.entries.push_back(e);
    }

    tagn = 0;
    for (const auto& c : ag.targets) {
      FeasibilityEntry e;
      e.name =
          "agent" + std::to_string(i) + ".target" + std::to_string(tagn++);
      e.worst_margin = std::numeric_limits<double>::infinity();
      auto consider = [&](const VectorXd& mean) {
        const double margin = c.epsilon - std::abs(c.a_bar.dot(mean) - c.b_bar);
        e.worst_margin = std::min(e.worst_margin, margin);
        e.checks++;
        if (margin < -tol) e.violations++;
      };
      for (const auto& mean : means) consider(mean);
      consider(mean_at(ag, pols[i], analytic_worst(ag, pols[i], c.a_bar)));
      consider(mean_at(ag, pols[i], analytic_worst(ag, pols[i], -c.a_bar)));
      rep.entries.push_back(e);
    }

    for (size_t o = 0; o < prob.obstacles.size(); ++o) {
      FeasibilityEntry e;
      e.name = "agent" + std::to_string(i) + ".obstacle" + std::to_string(o);
      e.worst_margin = std::numeric_limits<double>::infinity();
      auto consider = [&](const VectorXd& mean) {
        for (int k = 1; k <= T; ++k) {
          const VectorXd pos = prob.h_pos * mean.segment(k * nx, nx);
          const double margin =
              (pos - prob.obstacles[o].center).norm() -
              prob.obstacles[o].clearance;
          e.worst_margin = std::min(e.worst_margin, margin);
          e.checks++;
          if (margin < -tol) e.violations++;
        }
      };
      for (const auto& mean : means) consider(mean);
      // Worst-case directions for each position coordinate.
      for (int k = 1; k <= T; ++k)
        for (int mm = 0; mm < m; ++mm)
          for (double sign : {1.0, -1.0}) {
            VectorXd a = VectorXd::Zero(ag.lift.n_states());
            a.segment(k * nx, nx) = sign * prob.h_pos.row(mm).transpose();
            consider(mean_at(ag, pols[i], analytic_worst(ag, pols[i], a)));
          }
      rep.entries.push_back(e);
    }

    for (int j : prob.neighbors[i]) {
      FeasibilityEntry e;
      e.name = "agent" + std::to_string(i) + ".separation" + std::to_string(j);
      e.worst_margin = std::numeric_limits<double>::infinity();
      const auto& agj = prob.agents[j];
      std::vector<VectorXd> means_j;
      for (const auto& z : ens.zetas[j]) means_j.push_back(mean_at(agj, pols[j], z));
      const size_t pairs = std::min(means.size(), means_j.size());
      for (size_t s = 0; s < pairs; ++s)
        for (size_t s2 = 0; s2 < pairs; ++s2) {
          if (((s + s2) % 7) && s != s2) continue;  // thinned joint sampling
          for (int k = 1; k <= T; ++k) {
            const VectorXd pi =
                prob.h_pos * means[s].segment(k * nx, nx);
            const VectorXd pj =
                prob.h_pos * means_j[s2].segment(k * nx, nx);
            const double margin = (pi - pj).norm() - prob.c_interagent;
            e.worst_margin = std::min(e.worst_margin, margin);
            e.checks++;
            if (margin < -tol) e.violations++;
          }
        }
      rep.entries.push_back(e);
    }

    tagn = 0;
    for (const auto& c : ag.chance) {
      FeasibilityEntry e;
      e.name =
          "agent" + std::to_string(i) + ".chance" + std::to_string(tagn++);
      // Worst sampled zeta for the mean part, plus the analytic direction.
      VectorXd worst_z = analytic_worst(ag, pols[i], c.a);
      double worst_val = c.a.dot(mean_at(ag, pols[i], worst_z));
      for (size_t z = 0; z < ens.zetas[i].size(); ++z) {
        const double v = c.a.dot(means[z]);
        if (v > worst_val) {
          worst_val = v;
          worst_z = ens.zetas[i][z];
        }
      }
      if (!ag.noise.has_value()) {
        e.worst_margin = c.b - worst_val;
        e.checks = 1;
        if (e.worst_margin < -tol) e.violations = 1;
        rep.entries.push_back(e);
        continue;
      }
      const int n_roll = 10000;
      Rng rng(0xC0FFEE ^ (i * 977));
      int exceed = 0;
      for (int r = 0; r < n_roll; ++r) {
        const VectorXd w =
            ag.noise->phi * rng.normal_vector(ag.dyn.n_noise());
        lifting::RolloutResult rr =
            lifting::rollout(ag.dyn, pols[i], worst_z, w);
        double val = 0.0;
        for (int k = 0; k <= T; ++k)
          val += c.a.segment(k * nx, nx).dot(rr.states.col(k));
        if (val > c.b) ++exceed;
      }
      const double rate = double(exceed) / n_roll;
      const double band = c.p + 2.0 * std::sqrt(c.p * (1 - c.p) / n_roll);
      e.worst_margin = band - rate;
      e.checks = n_roll;
      e.violations = rate > band ? 1 : 0;
      rep.entries.push_back(e);
    }

    tagn = 0;
    for (const auto& c : ag.covariance) {
      FeasibilityEntry e;
      e.name =
          "agent" + std::to_string(i) + ".covariance" + std::to_string(tagn++);
      const int k = c.k >= 0 ? c.k : T;
      CovarianceCheck cc = empirical_covariance(ens, i, k, c.sigma);
      e.worst_margin = cc.min_eig + cc.tolerance;
      e.checks = 1;
      e.violations = cc.dominated ? 0 : 1;
      rep.entries.push_back(e);
    }
  }
  return rep;
}

CovarianceCheck empirical_covariance(const TrajectoryEnsemble& ens, int agent,
                                     int k, const MatrixXd& bound) {
  CovarianceCheck out;
  // Noise draws at fixed zeta (zeta_id 0).
  std::vector<int> idx;
  for (int s = 0; s < ens.n_samples(); ++s)
    if (ens.samples[s].zeta_id == 0) idx.push_back(s);
  const int n = static_cast<int>(idx.size());
  if (n < 2) throw std::invalid_argument("not enough noise draws");
  const int nx = ens.nx;
  VectorXd mean = VectorXd::Zero(nx);
  for (int s : idx) mean += ens.rollouts[agent][s].states.col(k);
  mean /= n;
  MatrixXd cov = MatrixXd::Zero(nx, nx);
  for (int s : idx) {
    const VectorXd d = ens.rollouts[agent][s].states.col(k) - mean;
    cov += d * d.transpose();
  }
  cov /= (n - 1.0);
  out.sample_cov = cov;
  if (bound.rows() == nx) {
    double se = 0.0;
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nx; ++j)
        se = std::max(se, std::sqrt((cov(i, i) * cov(j, j) +
                                     cov(i, j) * cov(i, j)) /
                                    n));
    out.tolerance = 4.0 * se;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(bound - cov,
                                                Eigen::EigenvaluesOnly);
    out.min_eig = eig.eigenvalues().minCoeff();
    out.dominated = out.min_eig >= -out.tolerance;
  }
  return out;
}

void write_trajectories_csv(const TrajectoryEnsemble& ens, std::ostream& os) {
  os << "agent,zeta_id,w_id,k";
  const int nx = ens.nx;
  const int nu =
      ens.rollouts.empty() || ens.rollouts[0].empty()
          ? 0
          : static_cast<int>(ens.rollouts[0][0].controls.rows());
  for (int i = 0; i < nx; ++i) os << ",x" << i;
  for (int i = 0; i < nu; ++i) os << ",u" << i;
  os << "\n";
  os.precision(17);
  for (int a = 0; a < ens.n_agents; ++a)
    for (int s = 0; s < ens.n_samples(); ++s)
      for (int k = 0; k <= ens.T; ++k) {
        os << a << "," << ens.samples[s].zeta_id << "," << ens.samples[s].w_id
           << "," << k;
        for (int i = 0; i < nx; ++i)
          os << "," << ens.rollouts[a][s].states(i, k);
        for (int i = 0; i < nu; ++i)
          os << "," << (k < ens.T ? ens.rollouts[a][s].controls(i, k) : 0.0);
        os << "\n";
      }
}

void write_distances_csv(const MatrixXd& distances, std::ostream& os) {
  os << "agent,k,min_distance\n";
  os.precision(17);
  for (int a = 0; a < distances.rows(); ++a)
    for (int k = 0; k < distances.cols(); ++k)
      os << a << "," << k << "," << distances(a, k) << "\n";
}

}  // namespace rsteer::validate
