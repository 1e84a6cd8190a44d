#include "scbf/dynamics.hpp"

#include <cmath>

namespace scbf {

namespace {
// Below this exponent the interaction term is < 1e-13 * offset; dropping it
// keeps far-field evaluation cheap and stays a deterministic function of x.
constexpr double kInteractionExpFloor = -30.0;
}  // namespace

MeasurementModel::MeasurementModel(Matrix C_in, Matrix D_const)
    : C(std::move(C_in)), obs_dim(static_cast<int>(C.rows())) {
  require(D_const.rows() == C.rows(), "MeasurementModel: D row count must match C");
  const Matrix R = D_const * D_const.transpose();
  Eigen::LLT<Matrix> llt(R);
  require(llt.info() == Eigen::Success,
          "MeasurementModel: R = D D^T must be symmetric positive definite");
  D = [D_const](double) { return D_const; };
}

Vector drift_eval(const DynamicsModel& model, const Vector& x, const Vector& u) {
  require(x.size() == model.state_dim, "drift_eval: state dimension mismatch");
  require(u.size() == model.input_dim, "drift_eval: input dimension mismatch");
  Vector f = model.drift(x);
  require(f.size() == model.state_dim, "drift_eval: drift evaluator returned wrong size");
  if (model.input_dim > 0) {
    const Matrix g = model.input_map(x);
    require(g.rows() == model.state_dim && g.cols() == model.input_dim,
            "drift_eval: input_map evaluator returned wrong shape");
    f += g * u;
  }
  return f;
}

Vector euler_maruyama_step(const DynamicsModel& model, const Vector& x,
                           const Vector& u, double t, double dt,
                           const Vector& dw) {
  require(dt > 0.0, "euler_maruyama_step: dt must be positive");
  Vector next = x + drift_eval(model, x, u) * dt;
  if (model.noise_dim > 0) {
    require(dw.size() == model.noise_dim, "euler_maruyama_step: noise dimension mismatch");
    next += model.diffusion(t) * dw;
  }
  if (!next.allFinite()) {
    throw IntegrationError("euler_maruyama_step: non-finite state", next);
  }
  return next;
}

Vector measurement_sample(const MeasurementModel& meas, const Vector& x,
                          double t, double dt, const Vector& dv) {
  require(dt > 0.0, "measurement_sample: dt must be positive");
  require(x.size() == meas.C.cols(), "measurement_sample: state dimension mismatch");
  return meas.C * x + meas.D(t) * dv / dt;
}

Vector unicycle_rhs(const Vector& x_r, const Vector& u) {
  require(x_r.size() == 3, "unicycle_rhs: state must be [px, py, theta]");
  require(u.size() == 2, "unicycle_rhs: input must be [linear, angular]");
  Vector rate(3);
  rate << u[0] * std::cos(x_r[2]), u[0] * std::sin(x_r[2]), u[1];
  return rate;
}

Vector traffic_drift(const Vector& x_o, const Eigen::Vector2d& p_r,
                     const TrafficParams& params) {
  require(x_o.size() == 3, "traffic_drift: state must be [px, py, v]");
  const Eigen::Vector2d offset(x_o[0] - p_r[0], x_o[1] - p_r[1]);
  const double expo = params.c1 - params.c2 * offset.squaredNorm();
  const double interaction =
      expo > kInteractionExpFloor ? offset[0] * std::exp(expo) : 0.0;
  Vector rate(3);
  rate << x_o[2], 0.0, params.v_d + interaction - x_o[2];
  return rate;
}

Matrix traffic_jacobian(const Vector& x_o, const Eigen::Vector2d& p_r,
                        const TrafficParams& params) {
  require(x_o.size() == 3, "traffic_jacobian: state must be [px, py, v]");
  const Eigen::Vector2d offset(x_o[0] - p_r[0], x_o[1] - p_r[1]);
  const double expo = params.c1 - params.c2 * offset.squaredNorm();
  Matrix J = Matrix::Zero(3, 3);
  J(0, 2) = 1.0;
  if (expo > kInteractionExpFloor) {
    const double e = std::exp(expo);
    J(2, 0) = e * (1.0 - 2.0 * params.c2 * offset[0] * offset[0]);
    J(2, 1) = -2.0 * params.c2 * offset[0] * offset[1] * e;
  }
  J(2, 2) = -1.0;
  return J;
}

NearIdentityTransform::NearIdentityTransform(double l_in) : l(l_in) {
  require(l > 0.0, "NearIdentityTransform: offset l must be positive");
}

TransformedEgo near_identity_forward(const Vector& x_r,
                                     const NearIdentityTransform& tr) {
  require(x_r.size() == 3, "near_identity_forward: state must be [px, py, theta]");
  const double c = std::cos(x_r[2]);
  const double s = std::sin(x_r[2]);
  TransformedEgo out;
  out.state = Vector(3);
  out.state << x_r[0] + tr.l * c, x_r[1] + tr.l * s, x_r[2];
  out.input_map = Matrix(3, 2);
  out.input_map << c, -tr.l * s,  //
      s, tr.l * c,                //
      0.0, 1.0;
  return out;
}

DynamicsModel make_unicycle_model() {
  DynamicsModel m;
  m.state_dim = 3;
  m.input_dim = 2;
  m.noise_dim = 0;
  m.drift = [](const Vector& x) { return Vector::Zero(x.size()); };
  m.input_map = [](const Vector& x) {
    Matrix g(3, 2);
    g << std::cos(x[2]), 0.0, std::sin(x[2]), 0.0, 0.0, 1.0;
    return g;
  };
  m.diffusion = [](double) { return Matrix::Zero(3, 0); };
  return m;
}

DynamicsModel make_traffic_model(const TrafficParams& params,
                                 std::function<Eigen::Vector2d()> ego_position) {
  DynamicsModel m;
  m.state_dim = 3;
  m.input_dim = 0;
  m.noise_dim = 3;
  m.drift = [params, ego = std::move(ego_position)](const Vector& x) {
    return traffic_drift(x, ego(), params);
  };
  m.input_map = [](const Vector&) { return Matrix::Zero(3, 0); };
  const Matrix G = params.g_scale * Matrix::Identity(3, 3);
  m.diffusion = [G](double) { return G; };
  return m;
}

}  // namespace scbf
