#pragma once

#include <vector>

#include "scbf/barrier.hpp"
#include "scbf/dynamics.hpp"
#include "scbf/estimator.hpp"
#include "scbf/qp.hpp"

namespace scbf {

/// Goal disc in the plane.
struct GoalSpec {
  Eigen::Vector2d center{0.0, 0.0};
  double radius = 0.5;
};

struct ClfConfig {
  double gain = 0.5;          ///< decay rate on V = |p - goal|^2
  double relax_weight = 1.0;  ///< quadratic penalty on the relaxation delta
};

struct ControllerConfig {
  ConditionFamily family;       ///< default: variant B, a_fixed = 1
  double slack_penalty = 1e6;   ///< c, must dominate every other weight
  double b_weight = 10.0;       ///< per-agent budget-rate penalty
  ClfConfig clf;
  Vector u_lo, u_hi;
  Vector u_ref;                 ///< reference input (mid-range cruise)
  Matrix u_cost;                ///< objective Q block on u (identity default)
  double proximity_radius = 2.5;
  double slack_tol = 1e-6;
  GoalSpec goal;

  void validate() const;
};

/// CLF relaxation row: u_coeffs . u - delta <= rhs.
struct ClfRow {
  Vector u_coeffs;
  double delta_coeff = -1.0;
  double rhs = 0.0;
  double V = 0.0;
};

/// With V = |p_bar - goal|^2, emits dV/dt <= -gain V + delta.
ClfRow clf_constraint_row(const TransformedEgo& ego, const GoalSpec& goal,
                          const ClfConfig& clf);

/// Per-agent estimator snapshot entering one control tick.
struct AgentSnapshot {
  int id = -1;
  EstimatorState est;
  Matrix K;
};

enum class RowKind { Generator, Condition, Clf };

struct RowMeta {
  RowKind kind;
  int agent_id = -1;
  bool degenerate = false;
};

/// Variable map of an assembled program: [u, b_0.., delta, s].
/// For condition variant C the per-agent variable is a_i instead of b_i.
struct VariableLayout {
  int n_u = 2;
  std::vector<int> agent_ids;  ///< one budget variable per entry
  int b_offset = 2;
  int delta_index = -1;
  int s_index = -1;  ///< -1 in the strict (no-slack) program
  int total = 0;
};

struct ProgramInstance {
  QpProblem qp;
  VariableLayout layout;
  std::vector<RowMeta> rows_meta;
  std::vector<double> agent_B0;  ///< barrier value per active agent
};

/// Everything that stays fixed across control ticks.
struct ControlProblemSpec {
  BarrierSpec barrier;  ///< carries budget, horizon and margin
  ControllerConfig ctrl;
  TrafficParams traffic;
  double epsilon = 0.5;  ///< estimation error bound
  Matrix C;              ///< agent measurement matrix
  Matrix D;              ///< agent measurement noise factor
};

/// Builds the per-tick program: cruise-tracking objective plus one barrier
/// growth row and one (slack-relaxed) budget row per nearby agent, the CLF
/// row, and box bounds. Agents outside ctrl.proximity_radius are dropped.
ProgramInstance assemble_program(const ControlProblemSpec& spec,
                                 const TransformedEgo& ego,
                                 const Eigen::Vector2d& ego_position,
                                 const std::vector<AgentSnapshot>& agents,
                                 bool with_slack = true);

struct ControlDiagnostics {
  Vector u;
  std::vector<int> agent_ids;
  std::vector<double> b;  ///< chosen budget rates (or a values for variant C)
  double s = 0.0;
  double delta = 0.0;
  std::vector<double> agent_risk_bounds;
  double max_risk_bound = 0.0;
  bool feasible_without_slack = true;
  bool solver_failed = false;
  QpStatus status = QpStatus::Optimal;
  double solve_time = 0.0;  ///< seconds; excluded from serialized traces
};

/// Solves the slack program and extracts the input and risk diagnostics.
/// On solver failure the fallback input is [u_lo[0], 0] with a flag set.
ControlDiagnostics control_step(const ControlProblemSpec& spec,
                                const TransformedEgo& ego,
                                const Eigen::Vector2d& ego_position,
                                const std::vector<AgentSnapshot>& agents,
                                QpSolver& solver,
                                const Vector* warm_start = nullptr);

/// Direct solve of the strict (no-slack) program, for cross-checks.
struct StrictSolve {
  bool feasible = false;
  Vector u;
  QpStatus status = QpStatus::Infeasible;
};

StrictSolve solve_strict_program(const ControlProblemSpec& spec,
                                 const TransformedEgo& ego,
                                 const Eigen::Vector2d& ego_position,
                                 const std::vector<AgentSnapshot>& agents,
                                 QpSolver& solver);

}  // namespace scbf
