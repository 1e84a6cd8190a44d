#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace scbf {

// Exit-code contract shared by every subcommand:
//   0 success, 1 configuration error, 2 runtime/validation failure,
//   3 infeasible problem (solve-qp only).

struct SimulateArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};
int cmd_simulate(const SimulateArgs& args);

struct CalibrateArgs {
  std::string config_path;
  std::optional<double> p_e;
  int runs = 200;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};
int cmd_calibrate(const CalibrateArgs& args);

struct ValidateRiskArgs {
  std::string config_path;
  int rollouts = 1000;
  int ticks = 20;  ///< number of evenly spaced ticks to validate
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};
int cmd_validate_risk(const ValidateRiskArgs& args);

int cmd_solve_qp(const std::string& json_path);

}  // namespace scbf
