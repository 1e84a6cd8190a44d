#include <atomic>
#include <mutex>

#include "scbf/estimator.hpp"
#include "scbf/parallel.hpp"
#include "scbf/rng.hpp"
#include "scbf/scenario.hpp"
#include "scbf/stats.hpp"

namespace scbf {

CalibrationReport calibrate_epsilon(const ScenarioConfig& scenario, double p_e,
                                    int n_runs, std::uint64_t seed_base) {
  require(p_e > 0.0 && p_e < 1.0, "calibrate_epsilon: p_e must lie in (0, 1)");
  require(n_runs >= 100, "calibrate_epsilon: need at least 100 runs");
  scenario.validate();

  struct RunStats {
    std::vector<double> sup_errors;  // one per agent
    std::vector<double> step_errors;
    double rho_min = 0.0;
    double rho_max = 0.0;
    double eps0 = 0.0;
    bool diverged = false;
  };
  std::vector<RunStats> runs(n_runs);

  parallel_for(static_cast<std::size_t>(n_runs), [&](std::size_t r) {
    const SimulationTrace trace =
        run_simulation(scenario, NoiseStream::mix(seed_base, r));
    RunStats& st = runs[r];
    if (trace.divergence_resets > 0 || trace.truncated || trace.ticks.empty()) {
      st.diverged = true;
      return;
    }
    const int n_agents = static_cast<int>(trace.ticks.front().agents.size());
    st.sup_errors.assign(n_agents, 0.0);
    st.rho_min = 1e300;
    st.rho_max = 0.0;
    st.step_errors.reserve(trace.ticks.size() * n_agents);
    for (const TickRecord& tick : trace.ticks) {
      for (int i = 0; i < n_agents; ++i) {
        const double e = tick.agents[i].err;
        st.step_errors.push_back(e);
        st.sup_errors[i] = std::max(st.sup_errors[i], e);
        Eigen::SelfAdjointEigenSolver<Matrix> es(tick.agents[i].P);
        st.rho_min = std::min(st.rho_min, es.eigenvalues().minCoeff());
        st.rho_max = std::max(st.rho_max, es.eigenvalues().maxCoeff());
      }
    }
    for (int i = 0; i < n_agents; ++i) {
      st.eps0 = std::max(st.eps0, trace.ticks.front().agents[i].err);
    }
  });

  CalibrationReport rep;
  rep.p_e = p_e;
  rep.n_runs = n_runs;

  std::vector<double> sups;
  std::vector<double> steps;
  double rho_min = 1e300, rho_max = 0.0, eps0 = 0.0;
  for (const RunStats& st : runs) {
    if (st.diverged) {
      ++rep.divergence_warnings;
      continue;
    }
    sups.insert(sups.end(), st.sup_errors.begin(), st.sup_errors.end());
    steps.insert(steps.end(), st.step_errors.begin(), st.step_errors.end());
    rho_min = std::min(rho_min, st.rho_min);
    rho_max = std::max(rho_max, st.rho_max);
    eps0 = std::max(eps0, st.eps0);
  }
  require(!sups.empty(), "calibrate_epsilon: every run diverged");

  // Conservative choice: a distribution-free upper tolerance bound instead
  // of the raw quantile, so held-out coverage clears 1 - p_e reliably.
  rep.epsilon = tolerance_upper_bound(sups, 1.0 - p_e, 0.95);

  int run_cov = 0;
  for (double s : sups) run_cov += s <= rep.epsilon;
  rep.per_run_coverage = static_cast<double>(run_cov) / sups.size();
  long step_cov = 0;
  for (double e : steps) step_cov += e <= rep.epsilon;
  rep.per_step_coverage = static_cast<double>(step_cov) / steps.size();

  for (double q : {0.5, 0.9, 0.95, 0.99, 0.995, 1.0}) {
    rep.quantiles.emplace_back(q, empirical_quantile(sups, q));
  }

  rep.rho_lower = rho_min;
  rep.rho_upper = rho_max;
  rep.eps0 = eps0;
  if (rho_min > 0.0 && rho_min < 1e300 && eps0 > 0.0) {
    rep.analytic_epsilon = error_bound_epsilon(rho_max, rho_min, eps0, p_e);
  }
  return rep;
}

}  // namespace scbf
