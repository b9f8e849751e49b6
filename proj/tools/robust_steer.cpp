#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "rsteer/bench.hpp"
#include "rsteer/scenario.hpp"
#include "rsteer/validate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rsteer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNoConvergence = 3;
constexpr int kExitSolverFailure = 4;

int env_threads() {
  const char* v = std::getenv("ROBUST_STEER_THREADS");
  if (v == nullptr) return 0;
  const int t = std::atoi(v);
  return t > 0 ? t : 0;
}

struct CommonOpts {
  std::string scenario_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
};

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(1) << "\n";
}

json report_common(const scenario::Scenario& sc, const CommonOpts& common) {
  json rep;
  rep["scenario"] = sc.name;
  rep["horizon"] = sc.T;
  rep["gamma_h"] = sc.gamma_h;
  rep["agents"] = sc.problem.n_agents();
  rep["seed"] = common.seed;
  rep["frozen_disturbance_inputs"] = sc.frozen_inputs;
  return rep;
}

int cmd_solve(const CommonOpts& common, const std::string& mode, int max_iters,
              double rho_u, double rho_d, double eps_primal, double eps_dual) {
  scenario::Scenario sc;
  try {
    sc = scenario::load_scenario(common.scenario_path);
  } catch (const std::exception& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return kExitValidation;
  }
  fs::create_directories(common.out_dir);
  const int n = sc.problem.n_agents();

  json rep = report_common(sc, common);
  rep["mode"] = mode;
  std::vector<lifting::Policy> policies;

  if (mode == "centralized") {
    admm::CentralizedConfig cfg;
    admm::RunResult res = admm::run_centralized(sc.problem, cfg);
    rep["iterations"] = res.iterations;
    rep["wall_ms"] = res.wall_ms;
    rep["objective"] = res.objective;
    if (!res.error.empty()) {
      rep["status"] = "solver_failure";
      rep["error"] = res.error;
      write_json(rep, fs::path(common.out_dir) / "report.json");
      std::cerr << res.error << "\n";
      return kExitSolverFailure;
    }
    rep["status"] = "converged";
    policies = res.policies;
  } else if (mode == "distributed") {
    admm::AdmmConfig cfg;
    cfg.rho_u = rho_u;
    cfg.rho_d = rho_d > 0 ? rho_d : (n <= 2 ? 1.0 : 10.0);
    cfg.eps_primal = eps_primal > 0 ? eps_primal : (n <= 2 ? 0.1 : 1.0);
    cfg.eps_dual = eps_dual > 0 ? eps_dual : (n <= 2 ? 0.1 : 1.0);
    cfg.max_iters = max_iters;
    cfg.threads = env_threads();
    admm::RunResult res = admm::run(sc.problem, cfg, common.seed);
    rep["iterations"] = res.iterations;
    rep["wall_ms"] = res.wall_ms;
    rep["time_metric_ms"] = res.time_metric_ms;
    rep["objective"] = res.objective;
    rep["final_primal"] = res.final_primal;
    rep["final_dual"] = res.final_dual;
    scenario::write_trace_jsonl(res.trace,
                                (fs::path(common.out_dir) / "trace.jsonl").string());
    rep["trace"] = "trace.jsonl";
    if (!res.error.empty()) {
      rep["status"] = "solver_failure";
      rep["error"] = res.error;
      write_json(rep, fs::path(common.out_dir) / "report.json");
      std::cerr << res.error << "\n";
      return kExitSolverFailure;
    }
    if (!res.converged) {
      rep["status"] = "not_converged";
      write_json(rep, fs::path(common.out_dir) / "report.json");
      std::cerr << "did not converge within " << cfg.max_iters
                << " iterations (primal " << res.final_primal << ", dual "
                << res.final_dual << ")\n";
      return kExitNoConvergence;
    }
    rep["status"] = "converged";
    policies = res.policies;
  } else {
    std::cerr << "unknown mode '" << mode << "'\n";
    return kExitValidation;
  }

  const fs::path pol_path = fs::path(common.out_dir) / "policies.json";
  scenario::save_policies(policies, pol_path.string());
  rep["policies"] = "policies.json";
  write_json(rep, fs::path(common.out_dir) / "report.json");
  std::cout << "solved " << sc.name << " (" << mode << "), outputs in "
            << common.out_dir << "\n";
  return kExitOk;
}

int cmd_simulate(const CommonOpts& common, const std::string& policies_path,
                 int samples) {
  scenario::Scenario sc;
  std::vector<lifting::Policy> policies;
  try {
    sc = scenario::load_scenario(common.scenario_path);
    policies = scenario::load_policies(policies_path);
  } catch (const std::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitValidation;
  }
  if (policies.size() != static_cast<size_t>(sc.problem.n_agents()) ||
      policies[0].T() != sc.T) {
    std::cerr << "policy file does not match the scenario\n";
    return kExitValidation;
  }
  fs::create_directories(common.out_dir);

  const int n_zeta = samples > 0 ? samples : 100;
  const int n_w = sc.has_noise ? 100 : 0;
  validate::TrajectoryEnsemble ens =
      validate::monte_carlo(sc.problem, policies, n_zeta, n_w, common.seed);
  {
    std::ofstream os(fs::path(common.out_dir) / "trajectories.csv");
    validate::write_trajectories_csv(ens, os);
  }
  json summary = report_common(sc, common);
  summary["n_zeta"] = n_zeta;
  summary["n_w"] = n_w;
  if (sc.problem.n_agents() >= 2) {
    Eigen::MatrixXd d = validate::min_neighbor_distances(ens, sc.problem.neighbors);
    std::ofstream os(fs::path(common.out_dir) / "distances.csv");
    validate::write_distances_csv(d, os);
    summary["min_neighbor_distance"] = d.minCoeff();
  }
  validate::FeasibilityReport rep =
      validate::check_feasibility(sc.problem, policies, ens, 1e-6);
  json entries = json::array();
  for (const auto& e : rep.entries)
    entries.push_back({{"constraint", e.name},
                       {"worst_margin", e.worst_margin},
                       {"violations", e.violations},
                       {"checks", e.checks}});
  summary["feasibility"] = entries;
  summary["total_violations"] = rep.total_violations();
  write_json(summary, fs::path(common.out_dir) / "summary.json");
  std::cout << "simulated " << sc.name << ": " << rep.total_violations()
            << " violations, outputs in " << common.out_dir << "\n";
  return kExitOk;
}

int cmd_bench(const std::string& suite, const std::string& out_dir) {
  fs::create_directories(out_dir);
  bench::BenchResult res;
  if (suite == "obstacles")
    res = bench::run_obstacles_suite(env_threads());
  else if (suite == "agents")
    res = bench::run_agents_suite(env_threads());
  else if (suite == "reformulation")
    res = bench::run_reformulation_suite();
  else {
    std::cerr << "unknown suite '" << suite << "'\n";
    return kExitValidation;
  }
  {
    std::ofstream os(fs::path(out_dir) / ("timing_" + suite + ".csv"));
    bench::write_timing_csv(res.rows, os);
  }
  write_json(res.extra, fs::path(out_dir) / ("bench_" + suite + ".json"));
  for (const auto& r : res.rows)
    std::cout << r.suite << " " << r.case_name << " " << r.mode << ": "
              << (r.dnf ? "DNF" : "ok") << " wall " << r.wall_ms / 1000.0
              << " s\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed robust distribution steering for multi-agent systems"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string mode = "distributed";
  std::string policies_path;
  std::string suite;
  int samples = 0;
  int max_iters = 200;
  double rho_u = 100.0, rho_d = -1.0, eps_primal = -1.0, eps_dual = -1.0;

  auto* solve = app.add_subcommand("solve", "solve a scenario");
  solve->add_option("--scenario", common.scenario_path, "scenario file")
      ->required();
  solve->add_option("--mode", mode, "distributed|centralized");
  solve->add_option("--seed", common.seed, "random seed");
  solve->add_option("--out", common.out_dir, "output directory");
  solve->add_option("--max-iters", max_iters, "consensus iteration cap");
  solve->add_option("--rho-u", rho_u, "trajectory penalty parameter");
  solve->add_option("--rho-d", rho_d, "deviation penalty parameter");
  solve->add_option("--eps-primal", eps_primal, "primal residual threshold");
  solve->add_option("--eps-dual", eps_dual, "dual residual threshold");

  auto* simulate = app.add_subcommand("simulate", "roll out solved policies");
  simulate->add_option("--scenario", common.scenario_path, "scenario file")
      ->required();
  simulate->add_option("--policies", policies_path, "policy file")->required();
  simulate->add_option("--samples", samples, "disturbance draws");
  simulate->add_option("--seed", common.seed, "random seed");
  simulate->add_option("--out", common.out_dir, "output directory");

  auto* benchcmd = app.add_subcommand("bench", "run a benchmark suite");
  benchcmd->add_option("--suite", suite, "obstacles|agents|reformulation")
      ->required();
  benchcmd->add_option("--out", common.out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed())
      return cmd_solve(common, mode, max_iters, rho_u, rho_d, eps_primal,
                       eps_dual);
    if (simulate->parsed()) return cmd_simulate(common, policies_path, samples);
    if (benchcmd->parsed()) return cmd_bench(suite, common.out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolverFailure;
  }
  return kExitOk;
}
