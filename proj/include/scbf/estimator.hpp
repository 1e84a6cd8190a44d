#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "scbf/common.hpp"

namespace scbf {

struct ScenarioConfig;  // scenario.hpp

/// Filter state: estimate mean, covariance, and filter time.
struct EstimatorState {
  Vector x_hat;
  Matrix P;
  double t = 0.0;
};

/// Continuous-time EKF configuration.
///
/// `dynamics` evaluates F(x_hat, u) = f(x_hat) + g(x_hat) u and `jacobian`
/// its state derivative A(t); both are evaluated at the current estimate.
struct EkfConfig {
  std::function<Vector(const Vector&, const Vector&)> dynamics;
  std::function<Matrix(const Vector&, const Vector&)> jacobian;
  Matrix C;
  Matrix Q;  ///< process noise, typically G G^T
  Matrix R;  ///< measurement noise, typically D D^T

  /// Checks Q, R are symmetric positive definite and shapes are consistent.
  void validate(int state_dim) const;
};

/// Where an error radius came from.
enum class ErrorBoundSource { Analytic, Calibrated };

struct ErrorBoundSpec {
  double epsilon = 0.0;
  double p_e = 0.01;
  ErrorBoundSource source = ErrorBoundSource::Calibrated;

  ErrorBoundSpec() = default;
  ErrorBoundSpec(double eps, double pe, ErrorBoundSource src);
};

/// Initial filter state from the prior mean and covariance.
EstimatorState ekf_init(const Vector& mean, const Matrix& cov);

/// K = P C^T R^{-1}.
Matrix kalman_gain(const Matrix& P, const Matrix& C, const Matrix& R);

/// One Euler step of the estimate and Riccati equations:
///   x_hat += (F(x_hat,u) + K (z - C x_hat)) dt
///   P     += (A P + P A^T + Q - P C^T R^{-1} C P) dt, then symmetrized.
/// Throws FilterDivergenceError if P loses positive definiteness.
EstimatorState ekf_step(const EstimatorState& st, const EkfConfig& cfg,
                        const Vector& u, const Vector& z, double dt);

/// epsilon = sqrt(rho_upper * eps0^2 / (rho_lower * p_e)).
double error_bound_epsilon(double rho_upper, double rho_lower, double eps0,
                           double p_e);

struct CalibrationReport {
  double epsilon = 0.0;  ///< chosen (calibrated) error radius
  double p_e = 0.0;
  int n_runs = 0;
  int divergence_warnings = 0;
  /// Fraction of (run, agent) supremum errors at or below epsilon.
  double per_run_coverage = 0.0;
  /// Fraction of individual steps with error at or below epsilon.
  double per_step_coverage = 0.0;
  /// (quantile, sup-error value) table over per-(run, agent) suprema.
  std::vector<std::pair<double, double>> quantiles;
  /// Analytic route: covariance bounds measured from the runs themselves.
  double rho_upper = 0.0;
  double rho_lower = 0.0;
  double eps0 = 0.0;
  double analytic_epsilon = 0.0;
};

/// Runs `n_runs` closed-loop simulations of the scenario and returns a
/// conservative empirical bound on the per-run supremum estimation error
/// (upper tolerance bound at the (1 - p_e) level). Divergent runs are
/// excluded and counted. Parallelized across runs.
CalibrationReport calibrate_epsilon(const ScenarioConfig& scenario, double p_e,
                                    int n_runs, std::uint64_t seed_base);

}  // namespace scbf
