#include <CLI11.hpp>

#include "scbf/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Risk-bounded safety-filter simulator"};
  app.require_subcommand(1);

  scbf::SimulateArgs sim_args;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "Run one closed-loop simulation");
  sim->add_option("config", sim_args.config_path, "JSON run configuration")
      ->required();
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "Seed override");
  auto* sim_out_opt = sim->add_option("--out", sim_out, "Output directory");

  scbf::CalibrateArgs cal_args;
  double cal_pe = 0.0;
  std::uint64_t cal_seed = 0;
  std::string cal_out;
  auto* cal = app.add_subcommand("calibrate",
                                 "Calibrate the estimation error bound");
  cal->add_option("config", cal_args.config_path, "JSON run configuration")
      ->required();
  auto* cal_pe_opt = cal->add_option("--pe", cal_pe, "Tail probability p_e");
  cal->add_option("--runs", cal_args.runs, "Number of calibration runs")
      ->check(CLI::PositiveNumber);
  auto* cal_seed_opt = cal->add_option("--seed", cal_seed, "Seed override");
  auto* cal_out_opt = cal->add_option("--out", cal_out, "Output directory");

  scbf::ValidateRiskArgs val_args;
  std::uint64_t val_seed = 0;
  std::string val_out;
  auto* val = app.add_subcommand(
      "validate-risk", "Compare Monte Carlo risk against the analytic bound");
  val->add_option("config", val_args.config_path, "JSON run configuration")
      ->required();
  val->add_option("--rollouts", val_args.rollouts, "Rollouts per tick")
      ->check(CLI::PositiveNumber);
  val->add_option("--ticks", val_args.ticks, "Number of ticks to validate")
      ->check(CLI::PositiveNumber);
  auto* val_seed_opt = val->add_option("--seed", val_seed, "Seed override");
  auto* val_out_opt = val->add_option("--out", val_out, "Output directory");

  std::string qp_path;
  auto* qp = app.add_subcommand("solve-qp", "Solve a QP given as JSON");
  qp->add_option("problem", qp_path, "JSON problem file")->required();

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    if (*sim_seed_opt) sim_args.seed = sim_seed;
    if (*sim_out_opt) sim_args.out_dir = sim_out;
    return scbf::cmd_simulate(sim_args);
  }
  if (cal->parsed()) {
    if (*cal_pe_opt) cal_args.p_e = cal_pe;
    if (*cal_seed_opt) cal_args.seed = cal_seed;
    if (*cal_out_opt) cal_args.out_dir = cal_out;
    return scbf::cmd_calibrate(cal_args);
  }
  if (val->parsed()) {
    if (*val_seed_opt) val_args.seed = val_seed;
    if (*val_out_opt) val_args.out_dir = val_out;
    return scbf::cmd_validate_risk(val_args);
  }
  if (qp->parsed()) {
    return scbf::cmd_solve_qp(qp_path);
  }
  return 1;
}
