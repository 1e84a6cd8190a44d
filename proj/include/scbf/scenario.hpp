#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scbf/controller.hpp"

namespace scbf {

struct LaneSpec {
  int count = 3;
  double width = 1.5;
};

struct AgentInit {
  Eigen::Vector2d pos;
  std::optional<double> vel;  ///< drawn from N(v_d, velocity_variance) if unset
};

/// Full description of the highway case study. Every field is plain data so
/// a run is reproducible from the config and a seed alone.
struct ScenarioConfig {
  // Scene.
  int n_agents = 15;
  LaneSpec lanes;
  GoalSpec goal{{6.0, 3.0}, 0.5};
  std::vector<AgentInit> layout;  ///< empty: staggered default grid
  double velocity_variance = 0.1;
  Vector ego_init;  ///< [0, 0, 0] when empty

  // Models.
  TrafficParams traffic{1.0, 1.0, 1.0, 0.1};
  Eigen::Vector2d d_diag{0.25, 0.2};
  double r_u = 0.25;
  double l = 0.05;

  // Risk machinery.
  double horizon = 1.0;  ///< T
  double p_bar = 0.1;
  double p_e = 0.01;
  double epsilon = 0.5;
  double alpha = 1.0;
  MarginMode margin_mode = MarginMode::Analytic;
  ConditionFamily family;

  // Controller weights and input set.
  double slack_penalty = 1e6;
  double b_weight = 10.0;
  double clf_gain = 0.5;
  double clf_relax_weight = 1.0;
  double u1_min = 0.2, u1_max = 2.0;
  double u2_min = -M_PI / 6.0, u2_max = M_PI / 6.0;
  double proximity_radius = 2.5;
  double slack_tol = 1e-6;

  // Integration and filtering.
  double dt = 0.01;
  double duration = 20.0;
  /// Measurement-only lead-in (ego parked, clock at t < 0) so filters reach
  /// steady state before control starts; the raw first-observation init is
  /// far too coarse to act on.
  double ekf_warmup = 1.0;
  double velocity_prior_var = 0.1;
  bool divergence_reset = true;
  double mc_skip_radius = 5.0;  ///< agents farther than this are not rolled out

  std::uint64_t seed = 1;

  /// Explicit layout if given, otherwise the default staggered grid with a
  /// cleared bubble around the ego start.
  std::vector<AgentInit> effective_layout() const;
  Vector ego_start() const;
  void validate() const;
};

/// Fixed measurement matrix: the ego can only observe agent positions.
Matrix scenario_measurement_C();
Matrix scenario_measurement_D(const ScenarioConfig& cfg);

/// Assembles the tick-invariant control problem (barrier, margin, budget,
/// controller weights) from the scenario description.
ControlProblemSpec make_control_spec(const ScenarioConfig& cfg);

/// EKF blocks shared by all agents. `ego_position` is read at every
/// evaluation, so the caller keeps it current during a rollout.
EkfConfig make_agent_ekf_config(const ScenarioConfig& cfg,
                                std::function<Eigen::Vector2d()> ego_position);

/// Filter initialization from the first observation: position from the
/// measurement, velocity from the desired-speed prior.
EstimatorState agent_ekf_init(const ScenarioConfig& cfg, const Vector& z0);

/// True iff |p_r - goal|^2 <= r_g^2 (boundary inclusive).
bool goal_check(const Vector& x_r, const GoalSpec& goal);

struct AgentTickRecord {
  Vector x_true;
  Vector x_hat;
  Matrix P;
  double err = 0.0;
  double b = 0.0;     ///< budget-rate decision (0 when inactive)
  double risk = 0.0;  ///< analytic risk upper bound (0 when inactive)
  bool active = false;
};

struct TickRecord {
  double t = 0.0;
  Vector x_r;    ///< ego state after applying this tick's input
  Vector x_bar;  ///< transformed ego state (derived from x_r)
  Vector u;
  double s = 0.0;
  double delta = 0.0;
  double max_risk = 0.0;
  bool feasible_without_slack = true;
  bool goal = false;
  bool solver_failed = false;
  std::vector<AgentTickRecord> agents;
};

struct SimulationTrace {
  std::vector<TickRecord> ticks;
  bool truncated = false;
  std::string failure;
  int divergence_resets = 0;
  bool goal_reached = false;
  double goal_time = -1.0;
};

/// Closed-loop rollout: per tick the agents are integrated, measured and
/// filtered, the safety program is solved, and the ego moves. Terminates at
/// the configured duration or on reaching the goal set.
SimulationTrace run_simulation(const ScenarioConfig& cfg, std::uint64_t seed);

/// Reconstructs the controller inputs of tick `k` (the estimates it saw and
/// the pre-move ego state) from a recorded trace.
struct TickSnapshot {
  TransformedEgo ego;
  Eigen::Vector2d ego_position;
  std::vector<AgentSnapshot> agents;
};
TickSnapshot snapshots_from_tick(const ScenarioConfig& cfg,
                                 const SimulationTrace& trace, int k);

enum class PolicyMode { FrozenTrace, LiveController };

struct RiskEstimate {
  int agent_id = -1;
  int hits = 0;
  int n = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool skipped_far = false;  ///< outside mc_skip_radius; not rolled out
};

struct RiskValidation {
  int tick_index = 0;
  double t = 0.0;
  double slack = 0.0;
  std::vector<RiskEstimate> per_agent;
  double max_p_hat = 0.0;
  double max_ci_hi = 0.0;
};

/// Monte Carlo estimate of the per-agent risk over [t_k, t_k + T]: from the
/// recorded true states at tick k, simulates fresh noise futures and counts
/// rollouts whose minimum barrier-set value dips below zero. FrozenTrace
/// replays the recorded inputs (extending by holding the last input);
/// LiveController re-runs filters and controller inside each rollout.
/// Rollouts run in parallel; results depend only on (cfg, trace, k, seed).
RiskValidation monte_carlo_risk(const ScenarioConfig& cfg,
                                const SimulationTrace& trace, int tick_index,
                                int n_rollouts, std::uint64_t seed,
                                PolicyMode mode = PolicyMode::FrozenTrace);

}  // namespace scbf
