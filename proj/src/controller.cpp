#include "scbf/controller.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace scbf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void ControllerConfig::validate() const {
  require(u_lo.size() == 2 && u_hi.size() == 2, "ControllerConfig: u bounds must be 2-vectors");
  require((u_lo.array() < u_hi.array()).all(), "ControllerConfig: input box is empty");
  require(u_ref.size() == 2, "ControllerConfig: u_ref must be a 2-vector");
  require(u_cost.rows() == 2 && u_cost.cols() == 2, "ControllerConfig: u_cost must be 2x2");
  require(b_weight > 0.0, "ControllerConfig: b_weight must be positive");
  require(slack_penalty >= 1e4 * b_weight,
          "ControllerConfig: slack penalty must dominate b_weight (ratio >= 1e4)");
  require(clf.gain > 0.0 && clf.relax_weight > 0.0, "ControllerConfig: CLF weights must be positive");
  require(goal.radius > 0.0, "ControllerConfig: goal radius must be positive");
  require(proximity_radius > 0.0, "ControllerConfig: proximity radius must be positive");
}

ClfRow clf_constraint_row(const TransformedEgo& ego, const GoalSpec& goal,
                          const ClfConfig& clf) {
  require(goal.radius > 0.0, "clf_constraint_row: goal radius must be positive");
  const Eigen::Vector2d diff = ego.state.head(2) - goal.center;
  Vector grad_v = Vector::Zero(3);
  grad_v.head(2) = 2.0 * diff;

  ClfRow row;
  row.V = diff.squaredNorm();
  row.u_coeffs = (grad_v.transpose() * ego.input_map).transpose();
  row.delta_coeff = -1.0;
  row.rhs = -clf.gain * row.V;
  return row;
}

ProgramInstance assemble_program(const ControlProblemSpec& spec,
                                 const TransformedEgo& ego,
                                 const Eigen::Vector2d& ego_position,
                                 const std::vector<AgentSnapshot>& agents,
                                 bool with_slack) {
  spec.ctrl.validate();
  const ConditionFamily& family = spec.ctrl.family;
  const bool variant_c = family.variant == ConditionVariant::C;

  // Nearby agents only.
  std::vector<const AgentSnapshot*> active;
  for (const AgentSnapshot& a : agents) {
    const Eigen::Vector2d p_hat = a.est.x_hat.head(2);
    if ((p_hat - ego.state.head(2)).norm() < spec.ctrl.proximity_radius) {
      active.push_back(&a);
    }
  }

  ProgramInstance prog;
  VariableLayout& lay = prog.layout;
  lay.n_u = 2;
  lay.b_offset = 2;
  for (const AgentSnapshot* a : active) lay.agent_ids.push_back(a->id);
  const int n_agents = static_cast<int>(active.size());
  lay.delta_index = 2 + n_agents;
  lay.s_index = with_slack ? lay.delta_index + 1 : -1;
  lay.total = lay.delta_index + 1 + (with_slack ? 1 : 0);

  const int k = lay.total;
  QpProblem& qp = prog.qp;
  qp.P = Matrix::Zero(k, k);
  qp.q = Vector::Zero(k);
  qp.lo = Vector::Constant(k, -kInf);
  qp.hi = Vector::Constant(k, kInf);

  // Objective: 1/2 (u - u_ref)^T Q (u - u_ref) + w_b sum b_i
  //            + w_delta delta^2 + c s  (constant term dropped).
  qp.P.topLeftCorner(2, 2) = spec.ctrl.u_cost;
  qp.q.head(2) = -spec.ctrl.u_cost * spec.ctrl.u_ref;
  for (int i = 0; i < n_agents; ++i) {
    // Variant C rewards larger decay rates a_i; A/B penalize growth b_i.
    qp.q[lay.b_offset + i] = variant_c ? -spec.ctrl.b_weight : spec.ctrl.b_weight;
  }
  qp.P(lay.delta_index, lay.delta_index) = 2.0 * spec.ctrl.clf.relax_weight;
  if (with_slack) qp.q[lay.s_index] = spec.ctrl.slack_penalty;

  // Boxes.
  qp.lo.head(2) = spec.ctrl.u_lo;
  qp.hi.head(2) = spec.ctrl.u_hi;
  for (int i = 0; i < n_agents; ++i) qp.lo[lay.b_offset + i] = 0.0;
  qp.lo[lay.delta_index] = 0.0;
  if (with_slack) qp.lo[lay.s_index] = 0.0;

  // Rows: per agent one generator row plus its budget row(s), then the CLF.
  std::vector<Vector> rows;
  std::vector<double> ubs;
  for (int i = 0; i < n_agents; ++i) {
    const AgentSnapshot& a = *active[i];
    Vector x_joint(6);
    x_joint << ego.state, a.est.x_hat;

    AgentEstimateBlock block;
    block.F_agent = traffic_drift(a.est.x_hat, ego_position, spec.traffic);
    block.K = a.K;
    block.C = spec.C;
    block.D = spec.D;

    const double a_term = variant_c ? 0.0 : family.a_fixed;
    const ConstraintRow gen = generator_constraint_row(
        spec.barrier, x_joint, ego.input_map, block, spec.epsilon, a_term, 3, a.id);
    prog.agent_B0.push_back(gen.B0);

    Vector row = Vector::Zero(k);
    row.head(2) = gen.u_coeffs;
    double ub;
    if (variant_c) {
      // u_part . u + B0 a_i <= b_fixed - gen_const
      row[lay.b_offset + i] = gen.B0;
      ub = family.b_fixed - gen.gen_const;
    } else {
      row[lay.b_offset + i] = gen.b_coeff;
      ub = gen.rhs;
    }
    rows.push_back(row);
    ubs.push_back(ub);
    prog.rows_meta.push_back(RowMeta{RowKind::Generator, a.id, false});

    for (const SlackRow& sr :
         slack_condition_bounds(family, gen.B0, spec.barrier.budget,
                                spec.barrier.horizon)) {
      Vector crow = Vector::Zero(k);
      crow[lay.b_offset + i] = sr.coeff_param;
      if (with_slack) crow[lay.s_index] = sr.coeff_s;
      rows.push_back(crow);
      ubs.push_back(sr.rhs);
      prog.rows_meta.push_back(RowMeta{RowKind::Condition, a.id, sr.degenerate});
    }
  }

  const ClfRow clf = clf_constraint_row(ego, spec.ctrl.goal, spec.ctrl.clf);
  Vector crow = Vector::Zero(k);
  crow.head(2) = clf.u_coeffs;
  crow[lay.delta_index] = clf.delta_coeff;
  rows.push_back(crow);
  ubs.push_back(clf.rhs);
  prog.rows_meta.push_back(RowMeta{RowKind::Clf, -1, false});

  qp.A = Matrix::Zero(static_cast<int>(rows.size()), k);
  qp.ub = Vector::Zero(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    qp.A.row(static_cast<int>(r)) = rows[r].transpose();
    qp.ub[static_cast<int>(r)] = ubs[r];
  }
  return prog;
}

ControlDiagnostics control_step(const ControlProblemSpec& spec,
                                const TransformedEgo& ego,
                                const Eigen::Vector2d& ego_position,
                                const std::vector<AgentSnapshot>& agents,
                                QpSolver& solver, const Vector* warm_start) {
  const auto t0 = std::chrono::steady_clock::now();
  const ProgramInstance prog =
      assemble_program(spec, ego, ego_position, agents, /*with_slack=*/true);

  const QpSolution sol = (warm_start != nullptr)
                             ? solver.solve(prog.qp, *warm_start)
                             : solver.solve(prog.qp);

  ControlDiagnostics diag;
  diag.agent_ids = prog.layout.agent_ids;
  diag.status = sol.status;
  if (sol.status != QpStatus::Optimal) {
    // Emergency fallback: crawl straight at minimum speed.
    diag.solver_failed = true;
    diag.u = Vector(2);
    diag.u << spec.ctrl.u_lo[0], 0.0;
    diag.feasible_without_slack = false;
    diag.s = 0.0;
    for (std::size_t i = 0; i < prog.layout.agent_ids.size(); ++i) {
      diag.b.push_back(0.0);
      diag.agent_risk_bounds.push_back(1.0);
    }
    diag.max_risk_bound = prog.layout.agent_ids.empty() ? 0.0 : 1.0;
    diag.solve_time = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
    return diag;
  }

  const VariableLayout& lay = prog.layout;
  diag.u = sol.z.head(2);
  diag.delta = sol.z[lay.delta_index];
  diag.s = lay.s_index >= 0 ? sol.z[lay.s_index] : 0.0;
  diag.feasible_without_slack = diag.s <= spec.ctrl.slack_tol;

  const bool variant_c = spec.ctrl.family.variant == ConditionVariant::C;
  for (std::size_t i = 0; i < lay.agent_ids.size(); ++i) {
    const double param = sol.z[lay.b_offset + static_cast<int>(i)];
    diag.b.push_back(param);
    const double b_rate = variant_c ? spec.ctrl.family.b_fixed : param;
    const double bound =
        risk_upper_bound(prog.agent_B0[i], std::max(b_rate, 0.0),
                         spec.barrier.horizon, spec.barrier.budget.p_e);
    diag.agent_risk_bounds.push_back(bound);
    diag.max_risk_bound = std::max(diag.max_risk_bound, bound);
  }
  diag.solve_time = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0).count();
  return diag;
}

StrictSolve solve_strict_program(const ControlProblemSpec& spec,
                                 const TransformedEgo& ego,
                                 const Eigen::Vector2d& ego_position,
                                 const std::vector<AgentSnapshot>& agents,
                                 QpSolver& solver) {
  const ProgramInstance prog =
      assemble_program(spec, ego, ego_position, agents, /*with_slack=*/false);
  const QpSolution sol = solver.solve(prog.qp);

  StrictSolve out;
  out.status = sol.status;
  out.feasible = sol.status == QpStatus::Optimal;
  if (out.feasible) out.u = sol.z.head(2);
  return out;
}

}  // namespace scbf
