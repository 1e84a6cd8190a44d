#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "scbf/common.hpp"

namespace scbf {

/// Unsafe set X_u = { x : h(x) <= 0 } described by h and its derivatives.
///
/// The norm-ball hint declares h(x) = |s(x)|^2 - r^2 with a 1-Lipschitz
/// selector s, which unlocks the closed-form safety margin.
struct UnsafeSetSpec {
  std::function<double(const Vector&)> h;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;

  enum class Shape { NormBall, Generic };
  Shape shape = Shape::Generic;
  double ball_radius = 0.0;
};

/// Collision set for the case study over the joint state
/// [ego px, ego py, ego theta, agent px, agent py, agent v]:
/// h = |p_ego - p_agent|^2 - radius^2.
UnsafeSetSpec make_collision_unsafe_set(double radius);

/// How the unsafe-set inflation margin is computed.
enum class MarginMode {
  Analytic,     ///< closed form for norm-ball shapes, grid otherwise
  PaperCompat,  ///< fixed eps^2 margin
};

/// Sampling domain for the grid fallback of safety_margin.
struct GridSpec {
  Vector lo;
  Vector hi;
  int points_per_dim = 41;
  int ball_directions = 64;  ///< boundary samples per epsilon-ball
};

struct MarginResult {
  double h_eps = 0.0;
  double resolution = 0.0;  ///< grid spacing (0 for analytic results)
  bool resolution_warning = false;
};

/// Margin h_eps = sup { h(x) : |x - x'| <= eps for some x' with h(x') <= 0 }.
/// Norm-ball shapes evaluate to (r + eps)^2 - r^2 exactly; generic shapes
/// require a GridSpec and return a sampled over-approximation.
MarginResult safety_margin(const UnsafeSetSpec& unsafe, double eps,
                           MarginMode mode = MarginMode::Analytic,
                           const std::optional<GridSpec>& grid = std::nullopt);

/// Risk budget: total bound p_bar split between the estimator tail p_e
/// and the barrier budget p_new = (p_bar - p_e) / (1 - p_e).
struct RiskBudget {
  double p_bar = 0.1;
  double p_e = 0.01;

  RiskBudget() = default;
  RiskBudget(double p_bar_in, double p_e_in);
  double p_new() const { return (p_bar - p_e) / (1.0 - p_e); }
};

/// Exponential barrier candidate B(x) = exp(-alpha (h(x) - h_eps)).
struct BarrierSpec {
  double alpha = 1.0;
  double h_eps = 0.0;
  UnsafeSetSpec unsafe;
  double horizon = 1.0;  ///< T
  RiskBudget budget;
  double value_ceiling = 1e12;  ///< clamp for B deep inside the unsafe set
};

struct BarrierEval {
  double B = 0.0;
  Vector grad;
  Matrix hess;
  bool clamped = false;
};

/// B, dB/dx and d2B/dx2 at x. Overflow is clamped at spec.value_ceiling
/// and flagged.
BarrierEval barrier_eval(const BarrierSpec& spec, const Vector& x);

/// Which algebraic budget on (a, b) certifies the finite-horizon bound.
enum class ConditionVariant { A, B, C };

/// Variant A fixes a = 0 and bounds b; variant B fixes a = a_fixed > 0 and
/// bounds b; variant C fixes b = b_fixed > 0 and brackets a.
struct ConditionFamily {
  ConditionVariant variant = ConditionVariant::B;
  double a_fixed = 1.0;
  double b_fixed = 0.5;
};

struct ConditionBounds {
  bool feasible = false;
  /// Variants A, B: largest admissible b (b >= 0 also required).
  double b_max = 0.0;
  /// Variant C: admissible interval for a (empty when a_lo > a_hi).
  double a_lo = 0.0;
  double a_hi = 0.0;
  /// Variant B with B0 >= 1: the log bound is undefined.
  bool degenerate_log = false;
};

ConditionBounds condition_bounds(const ConditionFamily& family, double B0,
                                 const RiskBudget& budget, double T);

/// One slack-relaxed budget row: coeff_param * theta + coeff_s * s <= rhs,
/// where theta is the per-agent decision parameter (b for variants A and B,
/// a for variant C).
struct SlackRow {
  double coeff_param = 1.0;
  double coeff_s = -1.0;
  double rhs = 0.0;
  bool degenerate = false;  ///< large-bound sentinel replaced an undefined log
};

/// Slack-relaxed budget rows; with s = 0 they reduce to condition_bounds.
std::vector<SlackRow> slack_condition_bounds(const ConditionFamily& family,
                                             double B0, const RiskBudget& budget,
                                             double T);

/// p_e + (1 - p_e) (1 - (1 - B0) e^{-b T}); B0 is clamped to [0, 1].
double risk_upper_bound(double B0, double b, double T, double p_e);

/// Per-agent estimate data entering the generator correction terms.
struct AgentEstimateBlock {
  Vector F_agent;  ///< agent drift at the estimate
  Matrix K;        ///< Kalman gain
  Matrix C;        ///< measurement matrix
  Matrix D;        ///< measurement noise factor
};

/// Linear-in-(u, b) constraint u_coeffs . u - b <= rhs, with the decay term
/// -a B0 folded into rhs. `gen_const` keeps the control-independent part of
/// the generator so other budget variants can be re-assembled.
struct ConstraintRow {
  Vector u_coeffs;
  double b_coeff = -1.0;
  double rhs = 0.0;
  double B0 = 0.0;
  double gen_const = 0.0;
  int agent_id = -1;
};

/// Builds the barrier growth constraint at the joint state
/// [transformed ego (ego_dim); agent estimate]. The ego block enters through
/// its deterministic transformed dynamics; the agent block carries the
/// estimation correction terms (epsilon and Kalman-gain trace terms).
ConstraintRow generator_constraint_row(const BarrierSpec& spec,
                                       const Vector& x_joint,
                                       const Matrix& ego_input_map,
                                       const AgentEstimateBlock& agent,
                                       double eps, double a_fixed,
                                       int ego_dim, int agent_id);

}  // namespace scbf
