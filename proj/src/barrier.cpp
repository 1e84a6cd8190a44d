#include "scbf/barrier.hpp"

#include <cmath>
#include <limits>

namespace scbf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// Sentinel replacing an undefined/unbounded budget expression; the slack
// variable absorbs it so the program stays solvable.
constexpr double kDegenerateSlackScale = 1e3;
}  // namespace

UnsafeSetSpec make_collision_unsafe_set(double radius) {
  require(radius > 0.0, "make_collision_unsafe_set: radius must be positive");
  UnsafeSetSpec spec;
  spec.shape = UnsafeSetSpec::Shape::NormBall;
  spec.ball_radius = radius;
  const double r2 = radius * radius;
  spec.h = [r2](const Vector& x) {
    const double dx = x[0] - x[3];
    const double dy = x[1] - x[4];
    return dx * dx + dy * dy - r2;
  };
  spec.grad = [](const Vector& x) {
    const double dx = x[0] - x[3];
    const double dy = x[1] - x[4];
    Vector g = Vector::Zero(6);
    g[0] = 2.0 * dx;
    g[1] = 2.0 * dy;
    g[3] = -2.0 * dx;
    g[4] = -2.0 * dy;
    return g;
  };
  spec.hess = [](const Vector&) {
    Matrix H = Matrix::Zero(6, 6);
    H(0, 0) = H(1, 1) = H(3, 3) = H(4, 4) = 2.0;
    H(0, 3) = H(3, 0) = H(1, 4) = H(4, 1) = -2.0;
    return H;
  };
  return spec;
}

namespace {

// Sampled over-approximation of the margin for generic unsafe sets: find
// grid points inside (or near) the set, push them out by every direction on
// a few epsilon shells, and pad the best value by a Lipschitz-times-covering
// term so the result upper-bounds the true supremum.
MarginResult grid_margin(const UnsafeSetSpec& unsafe, double eps,
                         const GridSpec& grid) {
  const int dim = static_cast<int>(grid.lo.size());
  require(dim >= 1 && grid.hi.size() == dim, "safety_margin: bad grid box");
  require(grid.points_per_dim >= 2, "safety_margin: need at least 2 grid points");
  double total = 1.0;
  for (int d = 0; d < dim; ++d) {
    require(grid.hi[d] > grid.lo[d], "safety_margin: grid box must have volume");
    total *= grid.points_per_dim;
  }
  require(total <= 2e6, "safety_margin: grid too large");

  Vector spacing(dim);
  for (int d = 0; d < dim; ++d) {
    spacing[d] = (grid.hi[d] - grid.lo[d]) / (grid.points_per_dim - 1);
  }
  const double half_diag = 0.5 * spacing.norm();

  // Direction samples on the unit sphere (uniform angles in 2D).
  std::vector<Vector> dirs;
  if (dim == 1) {
    dirs = {Vector::Constant(1, 1.0), Vector::Constant(1, -1.0)};
  } else {
    const int n_dirs = grid.ball_directions;
    for (int i = 0; i < n_dirs; ++i) {
      Vector dir(dim);
      if (dim == 2) {
        const double a = 2.0 * M_PI * i / n_dirs;
        dir << std::cos(a), std::sin(a);
      } else {
        // Deterministic quasi-random directions.
        double s = 0.0;
        for (int d = 0; d < dim; ++d) {
          const double v = std::sin(0.5 + 1.61803398875 * (i * dim + d + 1));
          dir[d] = v;
          s += v * v;
        }
        dir /= std::sqrt(s);
      }
      dirs.push_back(dir);
    }
  }

  // Lipschitz bookkeeping stays local to the candidate region so the
  // over-approximation pad is not inflated by steep far-away corners.
  double lipschitz = 0.0;
  double best = -kInf;
  bool found_set_point = false;

  std::vector<int> idx(dim, 0);
  Vector x(dim);
  const int n_shells = 16;
  while (true) {
    for (int d = 0; d < dim; ++d) x[d] = grid.lo[d] + spacing[d] * idx[d];
    const double hx = unsafe.h(x);
    const double local_lip = unsafe.grad(x).norm();
    if (hx <= 1.5 * local_lip * half_diag) {
      // A set point may hide within this cell; sweep its epsilon ball.
      found_set_point = true;
      best = std::max(best, hx);
      lipschitz = std::max(lipschitz, local_lip);
      for (int s = 1; s <= n_shells; ++s) {
        const double r = eps * s / n_shells;
        for (const Vector& dir : dirs) {
          const Vector y = x + r * dir;
          best = std::max(best, unsafe.h(y));
          lipschitz = std::max(lipschitz, unsafe.grad(y).norm());
        }
      }
    }
    int d = 0;
    while (d < dim && ++idx[d] == grid.points_per_dim) idx[d++] = 0;
    if (d == dim) break;
  }
  require(found_set_point, "safety_margin: grid found no point of the unsafe set");

  double ball_cover = 0.5 * eps / n_shells;
  if (dim >= 2) {
    ball_cover = std::max(ball_cover, 0.5 * eps * 2.0 * M_PI /
                                          static_cast<double>(dirs.size()));
  }
  const double pad = lipschitz * (half_diag + ball_cover);

  MarginResult out;
  out.h_eps = best + pad;
  out.resolution = half_diag + ball_cover;
  out.resolution_warning = pad > 0.25 * std::max(1.0, std::abs(best));
  return out;
}

}  // namespace

MarginResult safety_margin(const UnsafeSetSpec& unsafe, double eps,
                           MarginMode mode, const std::optional<GridSpec>& grid) {
  require(eps >= 0.0, "safety_margin: eps must be nonnegative");
  if (mode == MarginMode::PaperCompat) {
    return MarginResult{eps * eps, 0.0, false};
  }
  if (unsafe.shape == UnsafeSetSpec::Shape::NormBall) {
    const double r = unsafe.ball_radius;
    return MarginResult{(r + eps) * (r + eps) - r * r, 0.0, false};
  }
  require(grid.has_value(), "safety_margin: generic shape needs a GridSpec");
  return grid_margin(unsafe, eps, *grid);
}

RiskBudget::RiskBudget(double p_bar_in, double p_e_in)
    : p_bar(p_bar_in), p_e(p_e_in) {
  require(p_e > 0.0 && p_e < 1.0, "RiskBudget: p_e must lie in (0, 1)");
  require(p_bar > p_e && p_bar < 1.0, "RiskBudget: need p_e < p_bar < 1");
}

BarrierEval barrier_eval(const BarrierSpec& spec, const Vector& x) {
  require(spec.alpha > 0.0, "barrier_eval: alpha must be positive");
  const double h_bar = spec.unsafe.h(x) - spec.h_eps;
  const double expo = -spec.alpha * h_bar;

  BarrierEval out;
  if (expo > std::log(spec.value_ceiling)) {
    out.B = spec.value_ceiling;
    out.clamped = true;
  } else {
    out.B = std::exp(expo);
  }
  const Vector grad_h = spec.unsafe.grad(x);
  const Matrix hess_h = spec.unsafe.hess(x);
  out.grad = -spec.alpha * out.B * grad_h;
  out.hess = out.B * (spec.alpha * spec.alpha * grad_h * grad_h.transpose() -
                      spec.alpha * hess_h);
  return out;
}

ConditionBounds condition_bounds(const ConditionFamily& family, double B0,
                                 const RiskBudget& budget, double T) {
  require(B0 >= 0.0, "condition_bounds: B0 must be nonnegative");
  require(T > 0.0, "condition_bounds: horizon must be positive");
  const double p_new = budget.p_new();

  ConditionBounds out;
  switch (family.variant) {
    case ConditionVariant::A: {
      out.b_max = (p_new - B0) / T;
      out.feasible = out.b_max >= 0.0;
      break;
    }
    case ConditionVariant::B: {
      require(family.a_fixed > 0.0, "condition_bounds: variant B needs a_fixed > 0");
      if (B0 >= 1.0) {
        out.degenerate_log = true;
        out.b_max = -kInf;
        out.feasible = false;
        break;
      }
      const double log_bound = std::log((1.0 - B0) / (1.0 - p_new)) / T;
      out.b_max = std::min(family.a_fixed, log_bound);
      out.feasible = out.b_max >= 0.0;
      break;
    }
    case ConditionVariant::C: {
      const double b = family.b_fixed;
      require(b >= 0.0, "condition_bounds: variant C needs b_fixed >= 0");
      const double denom = p_new * std::exp(b * T) - B0;
      out.a_hi = b;
      if (denom <= 0.0) {
        out.a_lo = kInf;
        out.feasible = false;
      } else {
        out.a_lo = b * (std::exp(b * T) - 1.0) / denom;
        out.feasible = out.a_lo <= out.a_hi && out.a_hi > 0.0;
      }
      break;
    }
  }
  return out;
}

std::vector<SlackRow> slack_condition_bounds(const ConditionFamily& family,
                                             double B0, const RiskBudget& budget,
                                             double T) {
  const ConditionBounds bounds = condition_bounds(family, B0, budget, T);
  std::vector<SlackRow> rows;
  switch (family.variant) {
    case ConditionVariant::A:
      rows.push_back(SlackRow{1.0, -1.0, bounds.b_max, false});
      break;
    case ConditionVariant::B:
      if (bounds.degenerate_log) {
        // b - s <= 0: all growth is paid for by slack.
        rows.push_back(SlackRow{1.0, -1.0, 0.0, true});
      } else {
        rows.push_back(SlackRow{1.0, -1.0, bounds.b_max, false});
      }
      break;
    case ConditionVariant::C: {
      if (std::isfinite(bounds.a_lo)) {
        rows.push_back(SlackRow{-1.0, -1.0, -bounds.a_lo, false});
      } else {
        rows.push_back(SlackRow{-1.0, -1.0,
                                -(family.b_fixed + kDegenerateSlackScale), true});
      }
      rows.push_back(SlackRow{1.0, -1.0, bounds.a_hi, false});
      break;
    }
  }
  return rows;
}

double risk_upper_bound(double B0, double b, double T, double p_e) {
  require(b >= 0.0, "risk_upper_bound: b must be nonnegative");
  require(T > 0.0, "risk_upper_bound: horizon must be positive");
  require(p_e >= 0.0 && p_e < 1.0, "risk_upper_bound: p_e must lie in [0, 1)");
  const double B0c = std::clamp(B0, 0.0, 1.0);
  const double p_barrier = 1.0 - (1.0 - B0c) * std::exp(-b * T);
  return p_e + (1.0 - p_e) * p_barrier;
}

ConstraintRow generator_constraint_row(const BarrierSpec& spec,
                                       const Vector& x_joint,
                                       const Matrix& ego_input_map,
                                       const AgentEstimateBlock& agent,
                                       double eps, double a_fixed,
                                       int ego_dim, int agent_id) {
  const int n = static_cast<int>(x_joint.size());
  const int agent_dim = n - ego_dim;
  require(ego_dim > 0 && agent_dim > 0, "generator_constraint_row: bad split");
  require(ego_input_map.rows() == ego_dim,
          "generator_constraint_row: ego input map rows must match ego block");
  require(agent.F_agent.size() == agent_dim,
          "generator_constraint_row: agent drift dimension mismatch");
  require(agent.K.rows() == agent_dim && agent.C.cols() == agent_dim &&
              agent.K.cols() == agent.C.rows() &&
              agent.D.rows() == agent.K.cols(),
          "generator_constraint_row: inconsistent K/C/D shapes");
  require(eps >= 0.0 && a_fixed >= 0.0,
          "generator_constraint_row: eps and a must be nonnegative");

  const BarrierEval be = barrier_eval(spec, x_joint);
  const auto grad_ego = be.grad.head(ego_dim);
  const auto grad_agent = be.grad.tail(agent_dim);
  const Matrix hess_agent = be.hess.bottomRightCorner(agent_dim, agent_dim);

  ConstraintRow row;
  row.u_coeffs = (grad_ego.transpose() * ego_input_map).transpose();
  const double drift_term = grad_agent.dot(agent.F_agent);
  const double eps_term =
      eps * (grad_agent.transpose() * agent.K * agent.C).norm();
  const Matrix KD = agent.K * agent.D;
  const double trace_term = 0.5 * (KD.transpose() * hess_agent * KD).trace();

  row.gen_const = drift_term + eps_term + trace_term;
  row.B0 = be.B;
  row.b_coeff = -1.0;
  row.rhs = -a_fixed * be.B - row.gen_const;
  row.agent_id = agent_id;
  return row;
}

}  // namespace scbf
