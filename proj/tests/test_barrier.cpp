#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scbf/barrier.hpp"
#include "scbf/dynamics.hpp"
#include "scbf/estimator.hpp"
#include "scbf/rng.hpp"
#include "scbf/stats.hpp"

using namespace scbf;

namespace {

UnsafeSetSpec ball_spec(double r, int dim, bool norm_ball_hint) {
  UnsafeSetSpec spec;
  spec.shape = norm_ball_hint ? UnsafeSetSpec::Shape::NormBall
                              : UnsafeSetSpec::Shape::Generic;
  spec.ball_radius = r;
  const double r2 = r * r;
  spec.h = [r2](const Vector& x) { return x.squaredNorm() - r2; };
  spec.grad = [](const Vector& x) { return (2.0 * x).eval(); };
  spec.hess = [dim](const Vector&) { return (2.0 * Matrix::Identity(dim, dim)).eval(); };
  return spec;
}

BarrierSpec highway_barrier(double alpha = 1.0) {
  BarrierSpec spec;
  spec.alpha = alpha;
  spec.unsafe = make_collision_unsafe_set(0.3);
  spec.h_eps = safety_margin(spec.unsafe, 0.5).h_eps;
  spec.horizon = 1.0;
  spec.budget = RiskBudget(0.1, 0.01);
  return spec;
}

Vector joint_state(double ex, double ey, double eth, double ax, double ay,
                   double av) {
  Vector x(6);
  x << ex, ey, eth, ax, ay, av;
  return x;
}

}  // namespace

TEST_CASE("safety_margin analytic norm-ball") {
  const UnsafeSetSpec ball1 = ball_spec(1.0, 2, true);
  CHECK(safety_margin(ball1, 0.0).h_eps == doctest::Approx(0.0));
  CHECK(safety_margin(ball1, 1.0).h_eps == doctest::Approx(3.0));
  // Unit margin reading: eps = sqrt(2) - 1 inflates a unit disc by exactly 1.
  CHECK(safety_margin(ball1, std::sqrt(2.0) - 1.0).h_eps == doctest::Approx(1.0));

  const UnsafeSetSpec ball = ball_spec(0.25, 2, true);
  CHECK(safety_margin(ball, 0.5).h_eps == doctest::Approx(0.5));
}

TEST_CASE("safety_margin paper-compat mode is eps^2") {
  const UnsafeSetSpec ball = ball_spec(0.25, 2, true);
  CHECK(safety_margin(ball, 0.5, MarginMode::PaperCompat).h_eps ==
        doctest::Approx(0.25));
}

TEST_CASE("safety_margin grid mode over-approximates and approaches the "
          "analytic value") {
  const UnsafeSetSpec generic = ball_spec(0.25, 2, false);
  GridSpec grid;
  grid.lo = Vector::Constant(2, -1.0);
  grid.hi = Vector::Constant(2, 1.0);
  grid.points_per_dim = 81;
  grid.ball_directions = 128;
  const MarginResult res = safety_margin(generic, 0.5, MarginMode::Analytic, grid);
  CHECK(res.h_eps >= 0.5 - 1e-9);
  CHECK(res.h_eps <= 0.5 + 0.15);
  CHECK(res.resolution > 0.0);
  CHECK_THROWS_AS(safety_margin(generic, 0.5), ConfigError);
}

TEST_CASE("barrier_eval") {
  BarrierSpec spec = highway_barrier();
  SUBCASE("level set of value one") {
    // h = h_eps  =>  h_bar = 0  =>  B = 1.
    const double d = std::sqrt(spec.h_eps + 0.09);
    const BarrierEval be = barrier_eval(spec, joint_state(0, 0, 0, d, 0, 1));
    CHECK(be.B == doctest::Approx(1.0));
    CHECK_FALSE(be.clamped);
  }
  SUBCASE("exponential identity") {
    // Choose a separation with h_bar = ln 2.
    const double d = std::sqrt(std::log(2.0) + spec.h_eps + 0.09);
    const BarrierEval be = barrier_eval(spec, joint_state(0, 0, 0, d, 0, 1));
    CHECK(be.B == doctest::Approx(0.5));
  }
  SUBCASE("deep inside the unsafe set the value is clamped") {
    spec.alpha = 50.0;
    const BarrierEval be = barrier_eval(spec, joint_state(0, 0, 0, 0.01, 0, 1));
    CHECK(be.clamped);
    CHECK(be.B == spec.value_ceiling);
  }
  SUBCASE("gradient and hessian match central finite differences") {
    NoiseStream stream(31);
    const double step = 1e-5;
    for (int trial = 0; trial < 200; ++trial) {
      Vector x = joint_state(stream.gaussian(), stream.gaussian(),
                             stream.gaussian(), 2 + stream.uniform(),
                             stream.gaussian(), 1 + stream.gaussian());
      const BarrierEval be = barrier_eval(spec, x);
      auto B_at = [&](const Vector& y) { return barrier_eval(spec, y).B; };
      for (int j = 0; j < 6; ++j) {
        Vector hi = x, lo = x;
        hi[j] += step;
        lo[j] -= step;
        const double fd = (B_at(hi) - B_at(lo)) / (2 * step);
        CHECK(be.grad[j] ==
              doctest::Approx(fd).epsilon(1e-5).scale(std::max(1.0, std::abs(fd))));
        const Vector ghi = barrier_eval(spec, hi).grad;
        const Vector glo = barrier_eval(spec, lo).grad;
        for (int i = 0; i < 6; ++i) {
          const double fd2 = (ghi[i] - glo[i]) / (2 * step);
          CHECK(be.hess(i, j) ==
                doctest::Approx(fd2).epsilon(2e-5).scale(std::max(1.0, std::abs(fd2))));
        }
      }
    }
  }
}

TEST_CASE("barrier candidate properties on samples") {
  const BarrierSpec spec = highway_barrier();
  NoiseStream stream(33);
  const double r_in = std::sqrt(spec.h_eps + 0.09);  // h_bar <= 0 boundary
  for (int i = 0; i < 10000; ++i) {
    // Sample inside the inflated set.
    const double rad = r_in * std::sqrt(stream.uniform());
    const double ang = 2 * M_PI * stream.uniform();
    const Vector x = joint_state(0, 0, stream.gaussian(), rad * std::cos(ang),
                                 rad * std::sin(ang), stream.gaussian());
    const BarrierEval be = barrier_eval(spec, x);
    CHECK(be.B >= 1.0 - 1e-12);
    // Anywhere else it stays nonnegative.
    const Vector y = joint_state(stream.gaussian() * 3, stream.gaussian() * 3,
                                 stream.gaussian(), stream.gaussian() * 3,
                                 stream.gaussian() * 3, stream.gaussian());
    CHECK(barrier_eval(spec, y).B >= 0.0);
  }
}

TEST_CASE("margin soundness on sampled estimate-truth pairs") {
  // Pairs with |x - x_hat| <= eps and h(x_hat) > h_eps never report h <= 0.
  const double eps = 0.5;
  const UnsafeSetSpec ball = ball_spec(0.25, 2, true);
  const double h_eps = safety_margin(ball, eps).h_eps;
  NoiseStream stream(37);
  int checked = 0;
  for (int i = 0; i < 100000; ++i) {
    Vector x_hat(2);
    x_hat << 4.0 * (stream.uniform() - 0.5), 4.0 * (stream.uniform() - 0.5);
    if (ball.h(x_hat) <= h_eps) continue;
    const double rad = eps * std::sqrt(stream.uniform());
    const double ang = 2 * M_PI * stream.uniform();
    Vector x = x_hat;
    x[0] += rad * std::cos(ang);
    x[1] += rad * std::sin(ang);
    ++checked;
    CHECK(ball.h(x) > 0.0);
  }
  CHECK(checked > 10000);
}

TEST_CASE("generator_constraint_row") {
  const BarrierSpec spec = highway_barrier();
  const NearIdentityTransform tr(0.05);

  TrafficParams params{1.0, 1.0, 1.0, 0.1};
  Matrix C(2, 3);
  C << 1, 0, 0, 0, 1, 0;
  Matrix D = Matrix::Zero(2, 2);
  D(0, 0) = 0.25;
  D(1, 1) = 0.2;
  const Matrix R = D * D.transpose();

  SUBCASE("coincident positions zero out the input coefficients") {
    const TransformedEgo ego = near_identity_forward(Vector::Zero(3), tr);
    Vector x_joint(6);
    x_joint << ego.state, ego.state[0], ego.state[1], 1.0;
    AgentEstimateBlock block;
    block.F_agent = traffic_drift(x_joint.tail(3), Eigen::Vector2d(0, 0), params);
    block.K = Matrix::Zero(3, 2);
    block.C = C;
    block.D = D;
    const ConstraintRow row =
        generator_constraint_row(spec, x_joint, ego.input_map, block, 0.5, 1.0, 3, 0);
    CHECK(row.u_coeffs.norm() == doctest::Approx(0.0));
  }

  SUBCASE("noise-free collapse to the deterministic barrier condition") {
    const TransformedEgo ego = near_identity_forward(Vector::Zero(3), tr);
    Vector x_joint(6);
    x_joint << ego.state, 1.5, 0.5, 1.0;
    AgentEstimateBlock block;
    block.F_agent = traffic_drift(x_joint.tail(3), Eigen::Vector2d(0, 0), params);
    block.K = Matrix::Zero(3, 2);
    block.C = C;
    block.D = Matrix::Zero(2, 2);
    const double a = 0.7;
    const ConstraintRow row =
        generator_constraint_row(spec, x_joint, ego.input_map, block, 0.0, a, 3, 0);
    const BarrierEval be = barrier_eval(spec, x_joint);
    const double drift_term = be.grad.tail(3).dot(block.F_agent);
    CHECK(row.rhs == doctest::Approx(-a * be.B - drift_term));
    CHECK(row.b_coeff == -1.0);
    CHECK(row.B0 == doctest::Approx(be.B));
  }

  SUBCASE("row value matches a Monte Carlo estimate of the generator") {
    const Vector x_r = (Vector(3) << 0.0, 0.0, 0.4).finished();
    const TransformedEgo ego = near_identity_forward(x_r, tr);
    Vector x_joint(6);
    x_joint << ego.state, 1.1, 0.6, 1.2;

    Matrix P = Matrix::Zero(3, 3);
    P(0, 0) = 0.032;
    P(1, 1) = 0.02;
    P(2, 2) = 0.005;
    P(0, 2) = P(2, 0) = 0.003;
    const Matrix K = kalman_gain(P, C, R);

    AgentEstimateBlock block;
    block.F_agent =
        traffic_drift(x_joint.tail(3), Eigen::Vector2d(x_r[0], x_r[1]), params);
    block.K = K;
    block.C = C;
    block.D = D;

    const double eps = 0.5;
    Vector u(2);
    u << 1.3, 0.1;
    const ConstraintRow row =
        generator_constraint_row(spec, x_joint, ego.input_map, block, eps, 0.0, 3, 0);
    const double analytic = row.u_coeffs.dot(u) + row.gen_const;  // a = 0

    // Worst-case truth: align the estimation error with the epsilon term.
    const BarrierEval be = barrier_eval(spec, x_joint);
    const Eigen::RowVectorXd w = be.grad.tail(3).transpose() * K * C;
    const Vector x_true_agent =
        x_joint.tail(3) + eps * w.transpose() / w.norm();

    const double delta = 1e-4;
    const int n = 100000;
    NoiseStream stream(41);
    std::vector<double> samples;
    samples.reserve(n);
    const Vector ego_step = ego.input_map * u * delta;
    for (int i = 0; i < n; ++i) {
      Vector next = x_joint;
      next.head(3) += ego_step;
      const Vector correction = K * C * (x_true_agent - x_joint.tail(3));
      next.tail(3) += (block.F_agent + correction) * delta +
                      K * D * stream.wiener_increment(2, delta);
      samples.push_back((barrier_eval(spec, next).B - be.B) / delta);
    }
    const double mc = mean(samples);
    const double se = standard_error(samples);
    CHECK(std::abs(mc - analytic) < 3.0 * se);
  }
}

TEST_CASE("condition_bounds") {
  const RiskBudget budget(0.1, 0.01);
  const double p_new = budget.p_new();
  CHECK(p_new == doctest::Approx(0.09 / 0.99));

  SUBCASE("variant A with exhausted budget") {
    ConditionFamily fam{ConditionVariant::A, 0.0, 0.0};
    const ConditionBounds cb = condition_bounds(fam, p_new, budget, 1.0);
    CHECK(cb.b_max == doctest::Approx(0.0));
    CHECK(cb.feasible);
  }
  SUBCASE("variant B direct formula") {
    ConditionFamily fam{ConditionVariant::B, 1.0, 0.0};
    const ConditionBounds cb = condition_bounds(fam, 0.02, budget, 1.0);
    CHECK(cb.b_max == doctest::Approx(0.0751).epsilon(1e-2));
    CHECK(cb.feasible);
  }
  SUBCASE("variant B with B0 >= 1 flags instead of throwing") {
    ConditionFamily fam{ConditionVariant::B, 1.0, 0.0};
    const ConditionBounds cb = condition_bounds(fam, 1.2, budget, 1.0);
    CHECK_FALSE(cb.feasible);
    CHECK(cb.degenerate_log);
  }
  SUBCASE("variant C interval") {
    ConditionFamily fam{ConditionVariant::C, 0.0, 0.5};
    const RiskBudget half(0.505, 0.01);  // p_new = 0.5
    CHECK(half.p_new() == doctest::Approx(0.5));
    const ConditionBounds cb = condition_bounds(fam, 0.0, half, 1.0);
    CHECK(cb.a_lo == doctest::Approx(0.39346).epsilon(1e-4));
    CHECK(cb.a_hi == doctest::Approx(0.5));
    CHECK(cb.feasible);
  }
  SUBCASE("variant C empty when the budget cannot be met") {
    ConditionFamily fam{ConditionVariant::C, 0.0, 0.1};
    const ConditionBounds cb = condition_bounds(fam, 0.9, budget, 1.0);
    CHECK_FALSE(cb.feasible);
  }
  SUBCASE("budget tightens as the barrier grows") {
    NoiseStream stream(51);
    for (int i = 0; i < 300; ++i) {
      const double b0a = stream.uniform() * 0.9;
      const double b0b = b0a + stream.uniform() * (0.95 - b0a);
      ConditionFamily fa{ConditionVariant::A, 0.0, 0.0};
      CHECK(condition_bounds(fa, b0b, budget, 1.0).b_max <=
            condition_bounds(fa, b0a, budget, 1.0).b_max + 1e-12);
      ConditionFamily fb{ConditionVariant::B, 1.0, 0.0};
      CHECK(condition_bounds(fb, b0b, budget, 1.0).b_max <=
            condition_bounds(fb, b0a, budget, 1.0).b_max + 1e-12);
      ConditionFamily fc{ConditionVariant::C, 0.0, 0.4};
      const ConditionBounds ca = condition_bounds(fc, b0a, budget, 1.0);
      const ConditionBounds cb = condition_bounds(fc, b0b, budget, 1.0);
      if (ca.feasible && cb.feasible) CHECK(cb.a_lo >= ca.a_lo - 1e-12);
    }
  }
}

TEST_CASE("slack_condition_bounds") {
  const RiskBudget budget(0.1, 0.01);
  SUBCASE("zero slack reduces to the strict bounds") {
    for (double B0 : {0.0, 0.02, 0.05}) {
      ConditionFamily fam{ConditionVariant::B, 1.0, 0.0};
      const ConditionBounds cb = condition_bounds(fam, B0, budget, 1.0);
      const auto rows = slack_condition_bounds(fam, B0, budget, 1.0);
      REQUIRE(rows.size() == 1);
      // b * coeff_param + 0 <= rhs  <=>  b <= b_max
      CHECK(rows[0].coeff_param == 1.0);
      CHECK(rows[0].rhs == doctest::Approx(cb.b_max));
    }
  }
  SUBCASE("variant A minimal slack solves the affine equality") {
    ConditionFamily fam{ConditionVariant::A, 0.0, 0.0};
    const double B0 = 0.5;  // over budget
    const auto rows = slack_condition_bounds(fam, B0, budget, 1.0);
    REQUIRE(rows.size() == 1);
    // With b = 0: -s <= rhs, so minimal s = -rhs = (B0 - p_new) / T.
    CHECK(-rows[0].rhs == doctest::Approx((B0 - budget.p_new()) / 1.0));
  }
  SUBCASE("degenerate variant B emits the sentinel row") {
    ConditionFamily fam{ConditionVariant::B, 1.0, 0.0};
    const auto rows = slack_condition_bounds(fam, 1.5, budget, 1.0);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].degenerate);
    CHECK(rows[0].rhs == 0.0);
    CHECK(rows[0].coeff_param == 1.0);
    CHECK(rows[0].coeff_s == -1.0);
  }
  SUBCASE("variant C rows bracket the decay rate") {
    ConditionFamily fam{ConditionVariant::C, 0.0, 0.5};
    const RiskBudget half(0.505, 0.01);
    const auto rows = slack_condition_bounds(fam, 0.0, half, 1.0);
    REQUIRE(rows.size() == 2);
    CHECK(-rows[0].rhs == doctest::Approx(0.39346).epsilon(1e-4));
    CHECK(rows[1].rhs == doctest::Approx(0.5));
  }
}

TEST_CASE("risk_upper_bound") {
  CHECK(risk_upper_bound(0.0, 0.0, 1.0, 0.01) == doctest::Approx(0.01));
  CHECK(risk_upper_bound(1.0, 5.0, 1.0, 0.01) == doctest::Approx(1.0));
  CHECK(risk_upper_bound(2.0, 5.0, 1.0, 0.01) == doctest::Approx(1.0));
  CHECK(risk_upper_bound(0.05, 0.02, 1.0, 0.01) ==
        doctest::Approx(0.0781).epsilon(1e-3));
}

TEST_CASE("risk budget validity") {
  CHECK_THROWS_AS(RiskBudget(0.01, 0.1), ConfigError);
  CHECK_THROWS_AS(RiskBudget(1.2, 0.01), ConfigError);
  const RiskBudget ok(0.1, 0.01);
  CHECK(ok.p_new() > 0.0);
}
