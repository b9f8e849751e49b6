#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "rsteer/admm/admm.hpp"
#include "rsteer/lifting.hpp"

namespace rsteer::scenario {

// A fully validated multi-agent problem instance loaded from a scenario file,
// plus the metadata needed for reproducible runs and reports.
struct Scenario {
  std::string name;
  int T = 0;
  int gamma_h = 0;
  std::uint64_t seed = 0;
  bool has_noise = false;
  admm::MultiAgentProblem problem;
  // Template-drawn disturbance input matrices, frozen for reproducibility.
  nlohmann::json frozen_inputs;
};

// Parses and validates a scenario document. Throws std::invalid_argument
// with the offending field path on schema violations.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::string& path);

// Policy files: self-describing numeric text (JSON), lossless round trip.
nlohmann::json policies_to_json(const std::vector<lifting::Policy>& pols);
std::vector<lifting::Policy> policies_from_json(const nlohmann::json& doc);
void save_policies(const std::vector<lifting::Policy>& pols,
                   const std::string& path);
std::vector<lifting::Policy> load_policies(const std::string& path);

void write_trace_jsonl(const std::vector<admm::TracePoint>& trace,
                       const std::string& path);

}  // namespace rsteer::scenario
