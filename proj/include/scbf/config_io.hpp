#pragma once

#include <cstdint>
#include <string>

#include "scbf/estimator.hpp"
#include "scbf/qp.hpp"
#include "scbf/scenario.hpp"

namespace scbf {

struct OutputConfig {
  std::string dir;  ///< empty: resolved from --out, then SCBF_OUT_DIR, then "."
  std::string prefix = "run";
};

struct RunConfig {
  ScenarioConfig scenario;
  OutputConfig output;
};

/// Parses and schema-validates a JSON run configuration file. Unknown keys
/// and type mismatches are rejected with their JSON location.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

/// Raw QP in JSON form: {"P": [[..]], "q": [..], "A": [[..]], "ub": [..],
/// "lo": [..], "hi": [..]} (A/ub/lo/hi optional; bounds may be "inf").
QpProblem load_qp_json(const std::string& path);
QpProblem parse_qp_json(const std::string& json_text);

/// Trace CSV, column layout v1 (frozen): tick scalars first, then one block
/// of columns per agent.
std::string trace_to_csv(const SimulationTrace& trace);

/// Deterministic run summary (no wall-clock data) including an FNV-1a hash
/// of the CSV text.
std::string summary_to_json(const ScenarioConfig& cfg, std::uint64_t seed,
                            const SimulationTrace& trace,
                            const std::string& csv);

std::string calibration_to_json(const CalibrationReport& rep);

struct TraceSummaryStats {
  int n_ticks = 0;
  int slack_active_ticks = 0;
  double max_slack = 0.0;
  double max_risk_bound = 0.0;
  bool goal_reached = false;
  double goal_time = -1.0;
};

TraceSummaryStats summary_stats_from_trace(const SimulationTrace& trace,
                                           double slack_tol);
/// Recomputes the same statistics from CSV text (round-trip check).
TraceSummaryStats summary_stats_from_csv(const std::string& csv,
                                         double slack_tol);

}  // namespace scbf
