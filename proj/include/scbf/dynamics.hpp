#pragma once

#include <functional>

#include "scbf/common.hpp"

namespace scbf {

/// Control-affine SDE  dx = (f(x) + g(x) u) dt + G(t) dw.
struct DynamicsModel {
  int state_dim = 0;
  int input_dim = 0;
  int noise_dim = 0;
  std::function<Vector(const Vector&)> drift;      ///< f(x)
  std::function<Matrix(const Vector&)> input_map;  ///< g(x), state_dim x input_dim
  std::function<Matrix(double)> diffusion;         ///< G(t), state_dim x noise_dim
};

/// Linear noisy measurement  dy = C x dt + D(t) dv.
struct MeasurementModel {
  Matrix C;
  std::function<Matrix(double)> D;
  int obs_dim = 0;

  /// Constant-D model; verifies R = D D^T is symmetric positive definite.
  MeasurementModel(Matrix C_in, Matrix D_const);

  Matrix R(double t) const {
    const Matrix Dt = D(t);
    return Dt * Dt.transpose();
  }
};

/// f(x) + g(x) u with dimension checks.
Vector drift_eval(const DynamicsModel& model, const Vector& x, const Vector& u);

/// One Euler-Maruyama step: x + (f + g u) dt + G(t) dw.
/// dw must be a Wiener increment with covariance dt * I.
Vector euler_maruyama_step(const DynamicsModel& model, const Vector& x,
                           const Vector& u, double t, double dt,
                           const Vector& dw);

/// Discretized observation over [t, t+dt]: z = C x + D(t) dv / dt,
/// the rate form of the measurement increment (dv has covariance dt * I).
Vector measurement_sample(const MeasurementModel& meas, const Vector& x,
                          double t, double dt, const Vector& dv);

/// Unicycle: x_r = [px, py, theta], u = [linear, angular].
Vector unicycle_rhs(const Vector& x_r, const Vector& u);

struct TrafficParams {
  double v_d = 1.0;      ///< desired highway velocity
  double c1 = 1.0;       ///< interaction strength
  double c2 = 1.0;       ///< interaction decay with squared distance
  double g_scale = 0.1;  ///< process-noise magnitude (G = g_scale * I)
};

/// Traffic agent drift, x_o = [px, py, v]:
/// [v, 0, v_d + (px - pr_x) exp(c1 - c2 |p_o - p_r|^2) - v].
Vector traffic_drift(const Vector& x_o, const Eigen::Vector2d& p_r,
                     const TrafficParams& params);

/// Jacobian of traffic_drift with respect to x_o.
Matrix traffic_jacobian(const Vector& x_o, const Eigen::Vector2d& p_r,
                        const TrafficParams& params);

/// Heading offset used to make both unicycle inputs act on position.
struct NearIdentityTransform {
  double l;
  explicit NearIdentityTransform(double l_in);
};

struct TransformedEgo {
  Vector state;      ///< [px + l cos(theta), py + l sin(theta), theta]
  Matrix input_map;  ///< 3x2: planar block [c, -l s; s, l c], last row [0, 1]
};

/// Offset the unicycle position by l along the heading; the returned input
/// matrix has an invertible planar block for every theta.
TransformedEgo near_identity_forward(const Vector& x_r,
                                     const NearIdentityTransform& tr);

/// Noiseless unicycle as a DynamicsModel.
DynamicsModel make_unicycle_model();

/// Traffic agent as a DynamicsModel. `ego_position` is read at every drift
/// evaluation, so the caller can keep it current while integrating.
DynamicsModel make_traffic_model(const TrafficParams& params,
                                 std::function<Eigen::Vector2d()> ego_position);

}  // namespace scbf
