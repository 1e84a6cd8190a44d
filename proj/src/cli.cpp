#include "scbf/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include "scbf/config_io.hpp"
#include "scbf/estimator.hpp"
#include "scbf/qp.hpp"
#include "scbf/rng.hpp"
#include "scbf/scenario.hpp"

namespace scbf {

namespace {

namespace fs = std::filesystem;

std::string resolve_out_dir(const std::optional<std::string>& flag,
                            const std::string& from_config) {
  if (flag.has_value() && !flag->empty()) return *flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("SCBF_OUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return ".";
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

int guard(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int cmd_simulate(const SimulateArgs& args) {
  return guard([&] {
    RunConfig rc = load_run_config(args.config_path);
    const std::uint64_t seed = args.seed.value_or(rc.scenario.seed);
    const SimulationTrace trace = run_simulation(rc.scenario, seed);

    const fs::path dir = resolve_out_dir(args.out_dir, rc.output.dir);
    fs::create_directories(dir);
    const std::string stem = rc.output.prefix + "_seed" + std::to_string(seed);
    const std::string csv = trace_to_csv(trace);
    write_file(dir / (stem + ".csv"), csv);
    write_file(dir / (stem + ".summary.json"),
               summary_to_json(rc.scenario, seed, trace, csv));

    const TraceSummaryStats st =
        summary_stats_from_trace(trace, rc.scenario.slack_tol);
    std::cout << "ticks=" << st.n_ticks << " goal="
              << (st.goal_reached ? "yes" : "no")
              << " slack_ticks=" << st.slack_active_ticks
              << " max_risk_bound=" << st.max_risk_bound << "\n";
    if (trace.truncated) {
      std::cerr << "run truncated: " << trace.failure << "\n";
      return 2;
    }
    return 0;
  });
}

int cmd_calibrate(const CalibrateArgs& args) {
  return guard([&] {
    RunConfig rc = load_run_config(args.config_path);
    const double p_e = args.p_e.value_or(rc.scenario.p_e);
    const std::uint64_t seed = args.seed.value_or(rc.scenario.seed);
    const CalibrationReport rep =
        calibrate_epsilon(rc.scenario, p_e, args.runs, seed);

    const fs::path dir = resolve_out_dir(args.out_dir, rc.output.dir);
    fs::create_directories(dir);
    write_file(dir / (rc.output.prefix + "_calibration.json"),
               calibration_to_json(rep));

    std::cout << "epsilon=" << rep.epsilon
              << " per_run_coverage=" << rep.per_run_coverage
              << " per_step_coverage=" << rep.per_step_coverage
              << " divergence_warnings=" << rep.divergence_warnings << "\n";
    return 0;
  });
}

int cmd_validate_risk(const ValidateRiskArgs& args) {
  return guard([&] {
    RunConfig rc = load_run_config(args.config_path);
    const std::uint64_t seed = args.seed.value_or(rc.scenario.seed);
    const SimulationTrace trace = run_simulation(rc.scenario, seed);
    if (trace.ticks.empty()) {
      std::cerr << "empty trace\n";
      return 2;
    }

    const int n_ticks = static_cast<int>(trace.ticks.size());
    const int wanted = std::max(1, std::min(args.ticks, n_ticks));
    int violations = 0;
    for (int j = 0; j < wanted; ++j) {
      const int k = static_cast<int>(
          static_cast<long>(j) * (n_ticks - 1) / std::max(1, wanted - 1));
      const RiskValidation rv = monte_carlo_risk(
          rc.scenario, trace, k, args.rollouts, NoiseStream::mix(seed, 7000 + k));
      const TickRecord& rec = trace.ticks[k];
      const bool slack_active = rec.s > rc.scenario.slack_tol;

      bool violated = false;
      for (const RiskEstimate& est : rv.per_agent) {
        if (est.skipped_far) continue;
        const AgentTickRecord& ar = rec.agents[est.agent_id];
        const double bound = ar.active ? ar.risk : rc.scenario.p_bar;
        if (est.ci_lo > bound) violated = true;
      }
      std::cout << "tick=" << k << " t=" << rec.t << " s=" << rec.s
                << " max_p_hat=" << rv.max_p_hat << " max_ci_hi=" << rv.max_ci_hi
                << " bound=" << rec.max_risk << " "
                << (slack_active ? "[SLACK]" : (violated ? "[VIOLATION]" : "[OK]"))
                << "\n";
      if (violated && !slack_active) ++violations;
    }
    if (violations > 0) {
      std::cerr << violations << " feasible tick(s) violate the bound beyond CI\n";
      return 2;
    }
    return 0;
  });
}

int cmd_solve_qp(const std::string& json_path) {
  int rc = guard([&] {
    const QpProblem p = load_qp_json(json_path);
    QpSolver solver;
    const QpSolution sol = solver.solve(p);
    std::cout << "status=" << to_string(sol.status) << "\n";
    std::cout << "z=[";
    for (int i = 0; i < sol.z.size(); ++i) {
      std::cout << (i > 0 ? ", " : "") << sol.z[i];
    }
    std::cout << "]\n";
    std::cout << "objective=" << sol.objective << "\n";
    std::cout << "kkt: stationarity=" << sol.kkt.stationarity
              << " primal=" << sol.kkt.primal
              << " complementarity=" << sol.kkt.complementarity << "\n";
    std::cout << "iterations=" << sol.iterations << "\n";
    if (sol.status == QpStatus::Infeasible) {
      std::cout << "min_violation=" << sol.min_violation
                << " certificate_norm=" << sol.certificate_norm << "\n";
      return 3;
    }
    return sol.status == QpStatus::Optimal ? 0 : 2;
  });
  return rc;
}

}  // namespace scbf
