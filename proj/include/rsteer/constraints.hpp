#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rsteer/conic/program.hpp"
#include "rsteer/lifting.hpp"
#include "rsteer/uncertainty.hpp"

namespace rsteer::constraints {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// eta with P(y >= eta) = p for standard normal y; 0 < p < 0.5.
// Absolute error below 1e-8.
double gaussian_quantile(double p);

struct HalfSpace {
  VectorXd g;     // unit direction
  double offset;  // g . b; the emitted row is g.y - offset >= rhs
};

// Supporting half-space of {y : ||y - b|| >= rhs} at the nominal point:
// g = (center - b)/||center - b||. Throws when ||center - b|| <= 1e-9.
HalfSpace linearize_norm_lower_bound(const VectorXd& center, const VectorXd& b);

// --- constraint payloads --------------------------------------------------

struct LinearMean {  // a . E[x] <= b for all zeta
  VectorXd a;        // length (T+1) n_x
  double b = 0.0;
};

struct MeanTargetBox {  // abar . mu_{x,ubar} = bbar with spread bound eps
  VectorXd a_bar;
  double b_bar = 0.0;
  double epsilon = 0.0;  // infinity allowed: only the equality is emitted
};

struct ObstacleAvoid {  // ||A E[x_k] - b|| >= c for all zeta
  VectorXd b;           // center, dimension m
  double c = 0.0;       // required clearance
  int k = 0;            // time step
};

struct InterAgentAvoid {  // ||A E[x^i_k] - A E[x^j_k]|| >= c_ij
  double c_ij = 0.0;
  int neighbor = -1;
  int k = 0;
};

struct ChanceLinear {  // P(a . x > b) <= p for all zeta
  VectorXd a;
  double b = 0.0;
  double p = 0.05;
};

struct CovarianceBound {  // Cov(x_k) <= sigma (k = -1: whole sequence)
  MatrixXd sigma;
  int k = -1;
};

// --- agent program context --------------------------------------------------

// Owns one agent's variable blocks inside a conic program and the backbone
// equalities tying them together. Cone rows over the feedback gain are
// written against per-step closed-loop response blocks (kept in consensus
// with K through recursion equalities) so the KKT system stays sparse.
class AgentVars {
 public:
  // margins = false drops the disturbance-margin rows: deviation bounds
  // degenerate to nonnegativity and the collision rows become nominal.
  AgentVars(conic::ConicProgram& prog, const lifting::AgentDynamics& dyn,
            const lifting::LiftedDynamics& lift,
            const uncertainty::UncertaintySet& set,
            const uncertainty::NoiseModel* noise, const MatrixXd& h_pos,
            std::string prefix, bool margins = true);

  conic::ConicProgram& prog() { return *prog_; }
  const lifting::LiftedDynamics& lift() const { return *lift_; }
  const uncertainty::UncertaintySet& set() const { return *set_; }
  const MatrixXd& h_pos() const { return h_pos_; }
  const std::string& prefix() const { return prefix_; }
  int T() const { return lift_->T; }
  int m() const { return static_cast<int>(h_pos_.rows()); }

  // Block ids.
  int ubar_block() const { return ubar_; }
  int gain_block() const { return gain_; }
  int mu_hat_block();  // lazily adds the definition equalities
  int mu_d_block();

  // Cost J = ubar' R_u ubar + ||R_K K||_F^2 (scalar weights).
  void add_policy_cost(double r_u, double r_k);

  // mu_hat entry (k, row) as a variable index; mu_d likewise.
  int mu_hat_var(int k, int row);
  int mu_d_var(int k, int row);

  // Affine expression for the m-row of A_pos applied to the disturbance-free
  // mean at step k (A = H_pos): mu_hat variables.
  conic::LinExpr mu_hat_expr(int k, int row);

  // a . mu_{x,ubar} as an affine expression in ubar.
  conic::LinExpr mean_expr(const VectorXd& a_stacked);

  // Rows of sqrt(tau) R Gamma' M' a (R the S^-1/2 factor) as affine
  // expressions in the zeta-response blocks; dimension n_bar.
  std::vector<conic::LinExpr> robust_margin_rows(const VectorXd& a_stacked);

  // Rows of phi' Gw' (Gu K + I)' a as expressions in the noise-response
  // blocks; dimension n_x + T n_w.
  std::vector<conic::LinExpr> noise_margin_rows(const VectorXd& a_stacked);

  // Entry (r, c) of the zeta response Z_k = P_k (Gu K + I) G_zeta.
  conic::LinExpr zeta_response_expr(int k, int r, int c);
  conic::LinExpr noise_response_expr(int k, int r, int c);

  // Emits the per-coordinate deviation bounds (one SOC row per position
  // coordinate) for step k; idempotent. Returns number of rows added now.
  int ensure_mu_d_bounds(int k);

  // Fresh scalar slack variable.
  int add_scalar(const std::string& name);

  // Per-step open-loop (K = 0) deviation bound values, used for warm starts.
  VectorXd open_loop_mu_d() const;

  const uncertainty::NoiseModel* noise() const { return noise_; }
  const lifting::AgentDynamics& dyn() const { return *dyn_; }

 private:
  void ensure_zeta_response();
  void ensure_noise_response();

  conic::ConicProgram* prog_;
  const lifting::AgentDynamics* dyn_;
  const lifting::LiftedDynamics* lift_;
  const uncertainty::UncertaintySet* set_;
  const uncertainty::NoiseModel* noise_;
  MatrixXd h_pos_;
  std::string prefix_;

  int ubar_ = -1, gain_ = -1;
  int mu_hat_ = -1, mu_d_ = -1;
  std::vector<int> zeta_resp_;   // block per step 1..T (index k-1)
  std::vector<int> noise_resp_;  // likewise
  std::vector<bool> mu_d_bounded_;
  MatrixXd s_inv_sqrt_gamma_t_;  // sqrt(tau) R Gamma', cached
  bool identity_margin_ = false;
  bool margins_ = true;
};

// Copies of a neighbour's trajectory blocks inside the local program.
struct NeighborCopies {
  int mu_hat_block = -1;
  int mu_d_block = -1;
};

// --- reformulations (Sec. compilation of robust rows) ----------------------

// a . mu + sqrt(tau) ||Gamma' M' a||_{S^-1} <= b as one SOC block.
void reformulate_linear_mean(AgentVars& vars, const LinearMean& spec);

// Equality a_bar . mu = b_bar plus the spread bound as an SOC block.
void reformulate_mean_target(AgentVars& vars, const MeanTargetBox& spec);

// Linearized clearance half-space + slack SOC + deviation bounds.
// nominal_pos is the stacked nominal position trajectory ((T+1) m).
void reformulate_obstacle_socp(AgentVars& vars, const ObstacleAvoid& spec,
                               const VectorXd& nominal_pos,
                               const std::string& tag);

// Inter-agent variant against the neighbour's copy (or direct) blocks.
// nominal_pos_i / nominal_pos_j are stacked nominal position trajectories.
void reformulate_interagent_socp(AgentVars& vars, const InterAgentAvoid& spec,
                                 AgentVars* neighbor_vars,
                                 const NeighborCopies* copies,
                                 const VectorXd& nominal_pos_i,
                                 const VectorXd& nominal_pos_j,
                                 const std::string& tag);

// Baseline semidefinite reformulation of one obstacle constraint, linearized
// around the nominal policy: an (n_bar + 1) LMI plus beta >= 0.
void reformulate_obstacle_sdp_baseline(AgentVars& vars,
                                       const ObstacleAvoid& spec,
                                       const VectorXd& nominal_u_bar,
                                       const lifting::Policy& nominal_policy,
                                       const std::string& tag);

// Robust chance constraint: mean part tightened by alpha, Gaussian part
// eta ||phi' Gw' (Gu K + I)' a|| <= alpha.
void reformulate_chance(AgentVars& vars, const ChanceLinear& spec,
                        const std::string& tag);

// Covariance bound as the Schur-complement LMI, linear in K.
void reformulate_covariance(AgentVars& vars, const CovarianceBound& spec,
                            const std::string& tag);

}  // namespace rsteer::constraints
