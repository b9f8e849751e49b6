#pragma once

#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "rsteer/admm/admm.hpp"
#include "rsteer/scenario.hpp"

namespace rsteer::bench {

struct BenchRow {
  std::string suite;
  std::string case_name;
  std::string mode;  // distributed | centralized | socp | sdp
  int n_agents = 0;
  int n_obstacles = 0;
  bool converged = false;
  bool dnf = false;  // exceeded the time budget or failed to solve
  int iterations = 0;
  double wall_ms = 0.0;
  double per_iter_ms = 0.0;  // distributed: max-agent solve time per iteration
};

struct BenchResult {
  std::vector<BenchRow> rows;
  nlohmann::json extra;  // suite-specific details (e.g. min distances)
};

// Vertical-formation scenario, six agents, obstacle counts {1,2,3,5,10};
// distributed solves only.
BenchResult run_obstacles_suite(int threads);

// Rectangular-formation template replicated at N in {4, 8, 16}, solved in
// both modes.
BenchResult run_agents_suite(int threads);

// Single-agent comparison of the cone reformulation against the semidefinite
// baseline over {1, 2, 3} obstacles. The baseline gets a wall-clock budget of
// ten times the cone route's time (it is recorded as dnf beyond it).
BenchResult run_reformulation_suite();

void write_timing_csv(const std::vector<BenchRow>& rows, std::ostream& os);

// Scenario generators shared with tests.
scenario::Scenario obstacles_scenario(int n_obstacles);
scenario::Scenario agents_scenario(int n_agents);
scenario::Scenario reformulation_scenario(int n_obstacles);

enum class Route { Socp, SdpBaseline };

struct SingleAgentRun {
  bool solved = false;
  double wall_ms = 0.0;
  int outer_iterations = 0;
  std::string message;
  std::vector<lifting::Policy> policies;
};

// Sequentially re-linearized single-agent solve through either constraint
// route. A nonzero time budget aborts between outer solves and inside the
// backend once exceeded.
SingleAgentRun solve_single_agent(const admm::MultiAgentProblem& prob,
                                  Route route, double time_budget_ms = 0.0);

}  // namespace rsteer::bench
