#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scbf/estimator.hpp"
#include "scbf/rng.hpp"

using namespace scbf;

namespace {

EkfConfig scalar_config(double a, double c, double q, double r) {
  EkfConfig cfg;
  cfg.dynamics = [a](const Vector& x, const Vector&) { return a * x; };
  cfg.jacobian = [a](const Vector&, const Vector&) {
    return Matrix::Constant(1, 1, a);
  };
  cfg.C = Matrix::Constant(1, 1, c);
  cfg.Q = Matrix::Constant(1, 1, q);
  cfg.R = Matrix::Constant(1, 1, r);
  return cfg;
}

}  // namespace

TEST_CASE("ekf_init") {
  SUBCASE("identity prior") {
    const EstimatorState st = ekf_init(Vector::Zero(3), Matrix::Identity(3, 3));
    CHECK(st.x_hat.norm() == 0.0);
    CHECK((st.P - Matrix::Identity(3, 3)).norm() == 0.0);
    CHECK(st.t == 0.0);
  }
  SUBCASE("indefinite covariance is rejected") {
    Matrix bad = Matrix::Identity(2, 2);
    bad(1, 1) = -0.5;
    CHECK_THROWS_AS(ekf_init(Vector::Zero(2), bad), ConfigError);
  }
  SUBCASE("asymmetric covariance is rejected") {
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 1) = 0.3;
    CHECK_THROWS_AS(ekf_init(Vector::Zero(2), bad), ConfigError);
  }
  SUBCASE("first-observation prior of the highway agents") {
    // Position block D D^T / dt, velocity prior variance 0.1.
    Matrix cov = Matrix::Zero(3, 3);
    cov(0, 0) = 0.25 * 0.25 / 0.01;
    cov(1, 1) = 0.2 * 0.2 / 0.01;
    cov(2, 2) = 0.1;
    Vector mean(3);
    mean << 1.2, 0.4, 1.0;
    const EstimatorState st = ekf_init(mean, cov);
    CHECK(st.P(0, 0) == doctest::Approx(6.25));
    CHECK(st.P(1, 1) == doctest::Approx(4.0));
  }
}

TEST_CASE("kalman_gain") {
  CHECK((kalman_gain(Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                     Matrix::Identity(2, 2)) -
         Matrix::Identity(2, 2))
            .norm() == doctest::Approx(0.0));
  CHECK(kalman_gain(Matrix::Identity(2, 2), Matrix::Zero(2, 2),
                    Matrix::Identity(2, 2))
            .norm() == 0.0);
  CHECK(kalman_gain(Matrix::Constant(1, 1, 0.4142), Matrix::Identity(1, 1),
                    Matrix::Identity(1, 1))(0, 0) == doctest::Approx(0.4142));
  CHECK_THROWS_AS(kalman_gain(Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                              Matrix::Zero(2, 2)),
                  ConfigError);
}

TEST_CASE("ekf_step open-loop consistency") {
  // Negligible gain (R huge), exact init, noiseless plant: the estimate
  // integrates the plant dynamics.
  EkfConfig cfg = scalar_config(-0.5, 1.0, 1e-12, 1e12);
  EstimatorState st = ekf_init(Vector::Constant(1, 1.0), Matrix::Identity(1, 1));
  double x = 1.0;
  const double dt = 0.001;
  for (int k = 0; k < 2000; ++k) {
    x += -0.5 * x * dt;
    st = ekf_step(st, cfg, Vector(0), Vector::Constant(1, x), dt);
  }
  CHECK(st.x_hat[0] == doctest::Approx(x).epsilon(1e-6));
}

TEST_CASE("scalar LTI Riccati steady state is sqrt(2) - 1") {
  EkfConfig cfg = scalar_config(-1.0, 1.0, 1.0, 1.0);
  EstimatorState st = ekf_init(Vector::Zero(1), Matrix::Identity(1, 1));
  NoiseStream stream(3);
  const double dt = 1e-4;
  double x = 0.0;
  for (int k = 0; k < 200000; ++k) {
    const double dw = stream.wiener_increment(1, dt)[0];
    x += -x * dt + dw;
    const double dv = stream.wiener_increment(1, dt)[0];
    const Vector z = Vector::Constant(1, x + dv / dt);
    st = ekf_step(st, cfg, Vector(0), z, dt);
  }
  CHECK(st.P(0, 0) == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-4));
}

TEST_CASE("linear plant: EKF equals an independently coded Kalman-Bucy filter") {
  // 2-state LTI system; the reference filter below is written straight from
  // the filter equations, sharing no code with ekf_step.
  Matrix A(2, 2);
  A << -0.3, 1.0, 0.0, -0.8;
  Matrix B(2, 1);
  B << 0.0, 1.0;
  Matrix C(1, 2);
  C << 1.0, 0.0;
  const Matrix Q = 0.05 * Matrix::Identity(2, 2);
  const Matrix R = Matrix::Constant(1, 1, 0.04);

  EkfConfig cfg;
  cfg.dynamics = [&](const Vector& x, const Vector& u) { return A * x + B * u; };
  cfg.jacobian = [&](const Vector&, const Vector&) { return A; };
  cfg.C = C;
  cfg.Q = Q;
  cfg.R = R;
  cfg.validate(2);

  Vector ref_x = Vector::Zero(2);
  Matrix ref_P = Matrix::Identity(2, 2);
  EstimatorState st = ekf_init(ref_x, ref_P);

  NoiseStream stream(17);
  const double dt = 0.01;
  Vector x_true(2);
  x_true << 0.5, -0.2;
  for (int k = 0; k < 500; ++k) {
    const Vector u = Vector::Constant(1, std::sin(0.05 * k));
    x_true += (A * x_true + B * u) * dt;
    const Vector z = C * x_true + stream.wiener_increment(1, dt) * 0.2 / dt;

    // Reference Kalman-Bucy update.
    const Matrix Kg = ref_P * C.transpose() * R.inverse();
    const Vector x_next =
        ref_x + (A * ref_x + B * u) * dt + Kg * (z - C * ref_x) * dt;
    Matrix P_next =
        ref_P + (A * ref_P + ref_P * A.transpose() + Q -
                 ref_P * C.transpose() * R.inverse() * C * ref_P) * dt;
    P_next = 0.5 * (P_next + P_next.transpose());
    ref_x = x_next;
    ref_P = P_next;

    st = ekf_step(st, cfg, u, z, dt);
    CHECK((st.x_hat - ref_x).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((st.P - ref_P).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("ekf_step reports covariance divergence") {
  // An absurdly confident measurement with a large step overshoots the
  // Riccati update and destroys positive definiteness.
  EkfConfig cfg = scalar_config(0.0, 1.0, 1e-9, 1e-6);
  EstimatorState st = ekf_init(Vector::Zero(1), Matrix::Identity(1, 1));
  CHECK_THROWS_AS(ekf_step(st, cfg, Vector(0), Vector::Zero(1), 0.1),
                  FilterDivergenceError);
}

TEST_CASE("error_bound_epsilon") {
  CHECK(error_bound_epsilon(1.0, 1.0, 1.0, 1.0 - 1e-12) ==
        doctest::Approx(1.0));
  CHECK(error_bound_epsilon(4.0, 1.0, 0.1, 0.04) == doctest::Approx(1.0));
  SUBCASE("monotone decreasing in p_e") {
    NoiseStream stream(21);
    for (int i = 0; i < 200; ++i) {
      const double rho_u = 0.1 + stream.uniform() * 10;
      const double rho_l = 0.01 + stream.uniform() * rho_u;
      const double eps0 = 0.01 + stream.uniform();
      const double p1 = 0.01 + 0.5 * stream.uniform();
      const double p2 = p1 + 0.4 * stream.uniform() + 1e-6;
      CHECK(error_bound_epsilon(rho_u, rho_l, eps0, p2) <=
            error_bound_epsilon(rho_u, rho_l, eps0, p1));
    }
  }
  SUBCASE("invalid arguments are rejected") {
    CHECK_THROWS_AS(error_bound_epsilon(-1.0, 1.0, 1.0, 0.5), ConfigError);
    CHECK_THROWS_AS(error_bound_epsilon(1.0, 1.0, 1.0, 1.5), ConfigError);
  }
}
