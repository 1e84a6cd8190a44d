#include "scbf/estimator.hpp"

#include <cmath>

namespace scbf {

namespace {

bool is_symmetric(const Matrix& M, double tol = 1e-9) {
  return (M - M.transpose()).cwiseAbs().maxCoeff() <=
         tol * std::max(1.0, M.cwiseAbs().maxCoeff());
}

bool is_positive_definite(const Matrix& M) {
  Eigen::LLT<Matrix> llt(M);
  return llt.info() == Eigen::Success;
}

}  // namespace

void EkfConfig::validate(int state_dim) const {
  require(static_cast<bool>(dynamics), "EkfConfig: dynamics evaluator missing");
  require(static_cast<bool>(jacobian), "EkfConfig: jacobian evaluator missing");
  require(Q.rows() == state_dim && Q.cols() == state_dim,
          "EkfConfig: Q must be state_dim x state_dim");
  require(C.cols() == state_dim, "EkfConfig: C column count must match state_dim");
  require(R.rows() == C.rows() && R.cols() == C.rows(),
          "EkfConfig: R must be obs_dim x obs_dim");
  require(is_symmetric(Q) && is_positive_definite(Q),
          "EkfConfig: Q must be symmetric positive definite");
  require(is_symmetric(R) && is_positive_definite(R),
          "EkfConfig: R must be symmetric positive definite");
}

ErrorBoundSpec::ErrorBoundSpec(double eps, double pe, ErrorBoundSource src)
    : epsilon(eps), p_e(pe), source(src) {
  require(epsilon > 0.0, "ErrorBoundSpec: epsilon must be positive");
  require(p_e > 0.0 && p_e < 1.0, "ErrorBoundSpec: p_e must lie in (0, 1)");
}

EstimatorState ekf_init(const Vector& mean, const Matrix& cov) {
  require(cov.rows() == mean.size() && cov.cols() == mean.size(),
          "ekf_init: covariance shape must match mean");
  require(is_symmetric(cov), "ekf_init: covariance must be symmetric");
  require(is_positive_definite(cov), "ekf_init: covariance must be positive definite");
  return EstimatorState{mean, cov, 0.0};
}

Matrix kalman_gain(const Matrix& P, const Matrix& C, const Matrix& R) {
  Eigen::FullPivLU<Matrix> lu(R);
  require(lu.isInvertible(), "kalman_gain: R is singular");
  return P * C.transpose() * lu.inverse();
}

namespace {

EstimatorState ekf_euler(const EstimatorState& st, const EkfConfig& cfg,
                         const Vector& u, const Vector& z, double dt) {
  const Matrix K = kalman_gain(st.P, cfg.C, cfg.R);
  const Matrix A = cfg.jacobian(st.x_hat, u);

  EstimatorState next;
  next.x_hat = st.x_hat +
               (cfg.dynamics(st.x_hat, u) + K * (z - cfg.C * st.x_hat)) * dt;
  const Matrix Pdot = A * st.P + st.P * A.transpose() + cfg.Q -
                      st.P * cfg.C.transpose() * cfg.R.llt().solve(cfg.C * st.P);
  next.P = st.P + Pdot * dt;
  next.P = 0.5 * (next.P + next.P.transpose());
  next.t = st.t + dt;
  return next;
}

}  // namespace

EstimatorState ekf_step(const EstimatorState& st, const EkfConfig& cfg,
                        const Vector& u, const Vector& z, double dt) {
  require(dt > 0.0, "ekf_step: dt must be positive");
  // Plain Euler at the caller's step. A freshly initialized covariance (one
  // noisy observation worth, ~R/dt) puts the Riccati equation in a boundary
  // layer no wider than dt itself; if the full step destroys positive
  // definiteness, re-integrate the same interval with internal substeps
  // before declaring divergence.
  for (int substeps = 1; substeps <= 64; substeps *= 2) {
    EstimatorState next = st;
    const double h = dt / substeps;
    for (int i = 0; i < substeps; ++i) next = ekf_euler(next, cfg, u, z, h);
    if (next.x_hat.allFinite() && next.P.allFinite() &&
        is_positive_definite(next.P)) {
      return next;
    }
  }
  throw FilterDivergenceError("ekf_step: covariance lost positive definiteness");
}

double error_bound_epsilon(double rho_upper, double rho_lower, double eps0,
                           double p_e) {
  require(rho_upper > 0.0 && rho_lower > 0.0 && eps0 > 0.0,
          "error_bound_epsilon: arguments must be positive");
  require(p_e > 0.0 && p_e < 1.0, "error_bound_epsilon: p_e must lie in (0, 1)");
  return std::sqrt(rho_upper * eps0 * eps0 / (rho_lower * p_e));
}

}  // namespace scbf
