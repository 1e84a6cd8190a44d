#include "scbf/scenario.hpp"

#include <atomic>
#include <cmath>

#include "scbf/parallel.hpp"
#include "scbf/rng.hpp"
#include "scbf/stats.hpp"

namespace scbf {

namespace {

// Sub-stream indices per simulation seed.
constexpr std::uint64_t kVelocityStream = 1;
constexpr std::uint64_t kProcessStreamBase = 1000;
constexpr std::uint64_t kMeasurementStreamBase = 2000;

// Consecutive solver failures tolerated before the run is abandoned.
constexpr int kMaxSolverFailures = 10;

}  // namespace

std::vector<AgentInit> ScenarioConfig::effective_layout() const {
  if (!layout.empty()) return layout;
  std::vector<AgentInit> out;
  const Vector ego = ego_start();
  const Eigen::Vector2d ego_pos(ego[0], ego[1]);
  const double spacing = 3.0;
  const int per_lane = (n_agents + lanes.count - 1) / lanes.count;
  int placed = 0;
  for (int lane = 0; lane < lanes.count && placed < n_agents; ++lane) {
    const double y = lane * lanes.width;
    const double stagger = (lane % 2 == 1) ? spacing / 2.0 : 0.0;
    double x = -spacing * (per_lane / 2.0) + stagger;
    for (int j = 0; j < per_lane && placed < n_agents; ++j) {
      if ((Eigen::Vector2d(x, y) - ego_pos).norm() < 1.9) x += spacing;
      out.push_back(AgentInit{Eigen::Vector2d(x, y), std::nullopt});
      ++placed;
      x += spacing;
    }
  }
  return out;
}

Vector ScenarioConfig::ego_start() const {
  if (ego_init.size() == 3) return ego_init;
  return Vector::Zero(3);
}

void ScenarioConfig::validate() const {
  require(n_agents >= 0, "scenario: n_agents must be nonnegative");
  require(lanes.count >= 1 && lanes.width > 0.0, "scenario: bad lane geometry");
  require(goal.radius > 0.0, "scenario: goal radius must be positive");
  require(r_u > 0.0 && l > 0.0, "scenario: r_u and l must be positive");
  require(horizon > 0.0, "scenario: horizon must be positive");
  require(p_e > 0.0 && p_e < p_bar && p_bar < 1.0,
          "scenario: need 0 < p_e < p_bar < 1");
  require(epsilon > 0.0, "scenario: epsilon must be positive");
  require(alpha > 0.0, "scenario: alpha must be positive");
  require(u1_min < u1_max && u2_min < u2_max, "scenario: input box is empty");
  require(dt > 0.0 && duration > 0.0, "scenario: dt and duration must be positive");
  require(ekf_warmup >= 0.0, "scenario: warmup must be nonnegative");
  require(velocity_variance >= 0.0 && velocity_prior_var > 0.0,
          "scenario: bad velocity variances");
  require(traffic.c2 > 0.0, "scenario: c2 must be positive");
  require(traffic.g_scale >= 0.0, "scenario: g_scale must be nonnegative");
  require(d_diag[0] > 0.0 && d_diag[1] > 0.0, "scenario: D diagonal must be positive");
  require(mc_skip_radius > 0.0, "scenario: mc_skip_radius must be positive");
  if (!layout.empty()) {
    require(static_cast<int>(layout.size()) == n_agents,
            "scenario: explicit layout size must equal n_agents");
  }
}

Matrix scenario_measurement_C() {
  Matrix C(2, 3);
  C << 1, 0, 0, 0, 1, 0;
  return C;
}

Matrix scenario_measurement_D(const ScenarioConfig& cfg) {
  Matrix D = Matrix::Zero(2, 2);
  D(0, 0) = cfg.d_diag[0];
  D(1, 1) = cfg.d_diag[1];
  return D;
}

ControlProblemSpec make_control_spec(const ScenarioConfig& cfg) {
  ControlProblemSpec spec;
  spec.barrier.alpha = cfg.alpha;
  spec.barrier.unsafe = make_collision_unsafe_set(cfg.r_u + cfg.l);
  spec.barrier.h_eps =
      safety_margin(spec.barrier.unsafe, cfg.epsilon, cfg.margin_mode).h_eps;
  spec.barrier.horizon = cfg.horizon;
  spec.barrier.budget = RiskBudget(cfg.p_bar, cfg.p_e);

  spec.ctrl.family = cfg.family;
  spec.ctrl.slack_penalty = cfg.slack_penalty;
  spec.ctrl.b_weight = cfg.b_weight;
  spec.ctrl.clf = ClfConfig{cfg.clf_gain, cfg.clf_relax_weight};
  spec.ctrl.u_lo = Vector(2);
  spec.ctrl.u_lo << cfg.u1_min, cfg.u2_min;
  spec.ctrl.u_hi = Vector(2);
  spec.ctrl.u_hi << cfg.u1_max, cfg.u2_max;
  spec.ctrl.u_ref = Vector(2);
  spec.ctrl.u_ref << 0.5 * (cfg.u1_min + cfg.u1_max), 0.0;
  spec.ctrl.u_cost = Matrix::Identity(2, 2);
  spec.ctrl.proximity_radius = cfg.proximity_radius;
  spec.ctrl.slack_tol = cfg.slack_tol;
  spec.ctrl.goal = cfg.goal;

  spec.traffic = cfg.traffic;
  spec.epsilon = cfg.epsilon;
  spec.C = scenario_measurement_C();
  spec.D = scenario_measurement_D(cfg);
  return spec;
}

EkfConfig make_agent_ekf_config(const ScenarioConfig& cfg,
                                std::function<Eigen::Vector2d()> ego_position) {
  EkfConfig ekf;
  const TrafficParams traffic = cfg.traffic;
  ekf.dynamics = [traffic, ego_position](const Vector& x, const Vector&) {
    return traffic_drift(x, ego_position(), traffic);
  };
  ekf.jacobian = [traffic, ego_position](const Vector& x, const Vector&) {
    return traffic_jacobian(x, ego_position(), traffic);
  };
  ekf.C = scenario_measurement_C();
  ekf.Q = cfg.traffic.g_scale * cfg.traffic.g_scale * Matrix::Identity(3, 3);
  const Matrix D = scenario_measurement_D(cfg);
  ekf.R = D * D.transpose();
  return ekf;
}

EstimatorState agent_ekf_init(const ScenarioConfig& cfg, const Vector& z0) {
  require(z0.size() == 2, "agent_ekf_init: observation must be 2d");
  Vector mean(3);
  mean << z0[0], z0[1], cfg.traffic.v_d;
  const Matrix D = scenario_measurement_D(cfg);
  Matrix cov = Matrix::Zero(3, 3);
  cov.topLeftCorner(2, 2) = D * D.transpose() / cfg.dt;
  cov(2, 2) = cfg.velocity_prior_var;
  return ekf_init(mean, cov);
}

bool goal_check(const Vector& x_r, const GoalSpec& goal) {
  const Eigen::Vector2d p(x_r[0], x_r[1]);
  return (p - goal.center).squaredNorm() - goal.radius * goal.radius <= 0.0;
}

namespace {

struct AgentSimState {
  Vector x;  // true state
  EstimatorState est;
  NoiseStream process;
  NoiseStream measurement;
};

}  // namespace

SimulationTrace run_simulation(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ControlProblemSpec spec = make_control_spec(cfg);
  const auto layout = cfg.effective_layout();
  const int n = static_cast<int>(layout.size());
  const Matrix C = scenario_measurement_C();
  const Matrix D = scenario_measurement_D(cfg);
  const Matrix P0 = [&] {
    Matrix p = Matrix::Zero(3, 3);
    p.topLeftCorner(2, 2) = D * D.transpose() / cfg.dt;
    p(2, 2) = cfg.velocity_prior_var;
    return p;
  }();

  Vector x_r = cfg.ego_start();
  Eigen::Vector2d ego_pos(x_r[0], x_r[1]);
  const EkfConfig ekf =
      make_agent_ekf_config(cfg, [&ego_pos]() { return ego_pos; });
  const DynamicsModel agent_model =
      make_traffic_model(cfg.traffic, [&ego_pos]() { return ego_pos; });
  const NearIdentityTransform transform(cfg.l);
  const Vector no_input(0);

  NoiseStream root(seed);
  NoiseStream vel_stream = root.substream(kVelocityStream);

  SimulationTrace trace;
  std::vector<AgentSimState> agents;
  agents.reserve(n);
  for (int i = 0; i < n; ++i) {
    AgentSimState a{Vector(3), EstimatorState{},
                    root.substream(kProcessStreamBase + i),
                    root.substream(kMeasurementStreamBase + i)};
    const double v = layout[i].vel.has_value()
                         ? *layout[i].vel
                         : cfg.traffic.v_d + std::sqrt(cfg.velocity_variance) *
                                                 vel_stream.gaussian();
    a.x << layout[i].pos[0], layout[i].pos[1], v;
    const Vector dv = a.measurement.wiener_increment(2, cfg.dt);
    a.est = agent_ekf_init(cfg, C * a.x + D * dv / cfg.dt);
    agents.push_back(std::move(a));
  }

  auto advance_agents = [&](double t) {
    for (AgentSimState& a : agents) {
      const Vector dw = a.process.wiener_increment(3, cfg.dt);
      a.x = euler_maruyama_step(agent_model, a.x, no_input, t, cfg.dt, dw);
      const Vector dv = a.measurement.wiener_increment(2, cfg.dt);
      const Vector z = C * a.x + D * dv / cfg.dt;
      try {
        a.est = ekf_step(a.est, ekf, no_input, z, cfg.dt);
      } catch (const FilterDivergenceError&) {
        if (!cfg.divergence_reset) throw;
        a.est.P = P0;
        if (!a.est.x_hat.allFinite()) {
          a.est.x_hat = Vector(3);
          a.est.x_hat << z[0], z[1], cfg.traffic.v_d;
        }
        ++trace.divergence_resets;
      }
    }
  };

  // Measurement-only lead-in with the ego parked.
  const int warm_steps = static_cast<int>(std::lround(cfg.ekf_warmup / cfg.dt));
  for (int w = 0; w < warm_steps; ++w) {
    advance_agents(-cfg.ekf_warmup + w * cfg.dt);
  }

  QpSolver solver;
  Vector warm_start;
  int consecutive_failures = 0;
  const int n_steps = static_cast<int>(std::lround(cfg.duration / cfg.dt));
  trace.ticks.reserve(n_steps);

  double t = 0.0;
  for (int k = 0; k < n_steps; ++k) {
    try {
      advance_agents(t);
    } catch (const IntegrationError& e) {
      trace.truncated = true;
      trace.failure = e.what();
      break;
    } catch (const FilterDivergenceError& e) {
      trace.truncated = true;
      trace.failure = e.what();
      break;
    }

    const TransformedEgo ego_t = near_identity_forward(x_r, transform);
    std::vector<AgentSnapshot> snaps;
    snaps.reserve(n);
    for (int i = 0; i < n; ++i) {
      snaps.push_back(AgentSnapshot{i, agents[i].est,
                                    kalman_gain(agents[i].est.P, C, ekf.R)});
    }
    const ControlDiagnostics diag =
        control_step(spec, ego_t, ego_pos, snaps, solver,
                     warm_start.size() > 0 ? &warm_start : nullptr);
    if (diag.solver_failed) {
      warm_start.resize(0);
      if (++consecutive_failures > kMaxSolverFailures) {
        trace.truncated = true;
        trace.failure = "persistent QP solver failure";
        break;
      }
    } else {
      consecutive_failures = 0;
      warm_start = Vector(2);
      warm_start = diag.u;
    }

    x_r += unicycle_rhs(x_r, diag.u) * cfg.dt;
    ego_pos << x_r[0], x_r[1];
    t += cfg.dt;

    TickRecord rec;
    rec.t = t;
    rec.x_r = x_r;
    rec.x_bar = near_identity_forward(x_r, transform).state;
    rec.u = diag.u;
    rec.s = diag.s;
    rec.delta = diag.delta;
    rec.max_risk = diag.max_risk_bound;
    rec.feasible_without_slack = diag.feasible_without_slack;
    rec.solver_failed = diag.solver_failed;
    rec.agents.resize(n);
    for (int i = 0; i < n; ++i) {
      AgentTickRecord& ar = rec.agents[i];
      ar.x_true = agents[i].x;
      ar.x_hat = agents[i].est.x_hat;
      ar.P = agents[i].est.P;
      ar.err = (agents[i].x - agents[i].est.x_hat).norm();
    }
    for (std::size_t j = 0; j < diag.agent_ids.size(); ++j) {
      AgentTickRecord& ar = rec.agents[diag.agent_ids[j]];
      ar.active = true;
      ar.b = diag.b[j];
      ar.risk = diag.agent_risk_bounds[j];
    }
    rec.goal = goal_check(x_r, cfg.goal);
    trace.ticks.push_back(std::move(rec));

    if (trace.ticks.back().goal) {
      trace.goal_reached = true;
      trace.goal_time = t;
      break;
    }
  }
  return trace;
}

TickSnapshot snapshots_from_tick(const ScenarioConfig& cfg,
                                 const SimulationTrace& trace, int k) {
  require(k >= 0 && k < static_cast<int>(trace.ticks.size()),
          "snapshots_from_tick: tick out of range");
  const Matrix C = scenario_measurement_C();
  const Matrix D = scenario_measurement_D(cfg);
  const Matrix R = D * D.transpose();

  TickSnapshot snap;
  const Vector ego_pre = k == 0 ? cfg.ego_start() : trace.ticks[k - 1].x_r;
  snap.ego = near_identity_forward(ego_pre, NearIdentityTransform(cfg.l));
  snap.ego_position << ego_pre[0], ego_pre[1];
  const TickRecord& rec = trace.ticks[k];
  for (std::size_t i = 0; i < rec.agents.size(); ++i) {
    const AgentTickRecord& ar = rec.agents[i];
    snap.agents.push_back(AgentSnapshot{
        static_cast<int>(i),
        EstimatorState{ar.x_hat, ar.P, rec.t},
        kalman_gain(ar.P, C, R)});
  }
  return snap;
}

RiskValidation monte_carlo_risk(const ScenarioConfig& cfg,
                                const SimulationTrace& trace, int tick_index,
                                int n_rollouts, std::uint64_t seed,
                                PolicyMode mode) {
  cfg.validate();
  require(n_rollouts >= 1000, "monte_carlo_risk: need at least 1000 rollouts");
  require(tick_index >= 0 &&
              tick_index < static_cast<int>(trace.ticks.size()),
          "monte_carlo_risk: tick out of range");

  const TickRecord& start = trace.ticks[tick_index];
  const int n_agents = static_cast<int>(start.agents.size());
  const int steps = static_cast<int>(std::lround(cfg.horizon / cfg.dt));
  const double r_eff = cfg.r_u + cfg.l;
  const double r2 = r_eff * r_eff;
  const NearIdentityTransform transform(cfg.l);
  const Matrix G =
      cfg.traffic.g_scale * Matrix::Identity(3, 3);
  const Matrix C = scenario_measurement_C();
  const Matrix D = scenario_measurement_D(cfg);
  const ControlProblemSpec spec = make_control_spec(cfg);

  // The decision at tick k was made from the pre-move ego state; the ego
  // path over the window is the recorded one, extended by holding the last
  // input when the trace ends inside the window.
  std::vector<Vector> ego_states(steps + 1);
  ego_states[0] =
      tick_index == 0 ? cfg.ego_start() : trace.ticks[tick_index - 1].x_r;
  std::vector<Vector> inputs(steps);
  {
    Vector x_r = ego_states[0];
    const int last = static_cast<int>(trace.ticks.size()) - 1;
    for (int j = 0; j < steps; ++j) {
      const Vector& u = trace.ticks[std::min(tick_index + j, last)].u;
      inputs[j] = u;
      x_r += unicycle_rhs(x_r, u) * cfg.dt;
      ego_states[j + 1] = x_r;
    }
  }
  std::vector<Eigen::Vector2d> ego_bar(steps + 1);
  for (int j = 0; j <= steps; ++j) {
    ego_bar[j] = near_identity_forward(ego_states[j], transform)
                      .state.head(2);
  }

  RiskValidation out;
  out.tick_index = tick_index;
  out.t = start.t;
  out.slack = start.s;

  std::vector<int> simulated;  // agent ids rolled out
  for (int i = 0; i < n_agents; ++i) {
    const Eigen::Vector2d p(start.agents[i].x_true[0], start.agents[i].x_true[1]);
    if ((p - ego_bar[0]).norm() <= cfg.mc_skip_radius) {
      simulated.push_back(i);
    }
  }

  std::vector<std::atomic<int>> hits(simulated.size());
  for (auto& h : hits) h.store(0);

  if (!simulated.empty()) {
    const EkfConfig ekf_template = make_agent_ekf_config(
        cfg, [] { return Eigen::Vector2d::Zero().eval(); });  // unused in frozen mode
    parallel_for(static_cast<std::size_t>(n_rollouts), [&](std::size_t r) {
      NoiseStream stream(NoiseStream::mix(seed, r));
      std::vector<Vector> x(simulated.size());
      std::vector<NoiseStream> process;
      std::vector<NoiseStream> measurement;
      for (std::size_t s = 0; s < simulated.size(); ++s) {
        x[s] = start.agents[simulated[s]].x_true;
        process.push_back(stream.substream(kProcessStreamBase + simulated[s]));
        measurement.push_back(
            stream.substream(kMeasurementStreamBase + simulated[s]));
      }
      std::vector<char> hit(simulated.size(), 0);
      auto check = [&](const Eigen::Vector2d& ego_p) {
        for (std::size_t s = 0; s < simulated.size(); ++s) {
          const Eigen::Vector2d p(x[s][0], x[s][1]);
          if ((p - ego_p).squaredNorm() - r2 <= 0.0) hit[s] = 1;
        }
      };
      check(ego_bar[0]);

      if (mode == PolicyMode::FrozenTrace) {
        for (int j = 1; j <= steps; ++j) {
          const Eigen::Vector2d ego_prev(ego_states[j - 1][0],
                                         ego_states[j - 1][1]);
          for (std::size_t s = 0; s < simulated.size(); ++s) {
            const Vector drift = traffic_drift(x[s], ego_prev, cfg.traffic);
            x[s] += drift * cfg.dt + G * process[s].wiener_increment(3, cfg.dt);
          }
          check(ego_bar[j]);
        }
      } else {
        // Live mode: re-run filters and controller inside the rollout.
        Vector x_r = ego_states[0];
        Eigen::Vector2d ego_pos(x_r[0], x_r[1]);
        EkfConfig ekf = ekf_template;
        ekf.dynamics = [&ego_pos, &cfg](const Vector& xs, const Vector&) {
          return traffic_drift(xs, ego_pos, cfg.traffic);
        };
        ekf.jacobian = [&ego_pos, &cfg](const Vector& xs, const Vector&) {
          return traffic_jacobian(xs, ego_pos, cfg.traffic);
        };
        std::vector<EstimatorState> est(simulated.size());
        for (std::size_t s = 0; s < simulated.size(); ++s) {
          const AgentTickRecord& ar = start.agents[simulated[s]];
          est[s] = EstimatorState{ar.x_hat, ar.P, start.t};
        }
        QpSolver solver;
        const Vector no_input(0);
        for (int j = 1; j <= steps; ++j) {
          for (std::size_t s = 0; s < simulated.size(); ++s) {
            const Vector drift = traffic_drift(x[s], ego_pos, cfg.traffic);
            x[s] += drift * cfg.dt + G * process[s].wiener_increment(3, cfg.dt);
            const Vector dv = measurement[s].wiener_increment(2, cfg.dt);
            const Vector z = C * x[s] + D * dv / cfg.dt;
            try {
              est[s] = ekf_step(est[s], ekf, no_input, z, cfg.dt);
            } catch (const FilterDivergenceError&) {
              est[s].P = Matrix::Identity(3, 3);
            }
          }
          const TransformedEgo ego_t = near_identity_forward(x_r, transform);
          std::vector<AgentSnapshot> snaps;
          for (std::size_t s = 0; s < simulated.size(); ++s) {
            snaps.push_back(AgentSnapshot{
                simulated[s], est[s], kalman_gain(est[s].P, C, ekf.R)});
          }
          const ControlDiagnostics diag =
              control_step(spec, ego_t, ego_pos, snaps, solver);
          x_r += unicycle_rhs(x_r, diag.u) * cfg.dt;
          ego_pos << x_r[0], x_r[1];
          check(near_identity_forward(x_r, transform).state.head(2));
        }
      }

      for (std::size_t s = 0; s < simulated.size(); ++s) {
        if (hit[s]) hits[s].fetch_add(1);
      }
    });
  }

  std::size_t sim_idx = 0;
  for (int i = 0; i < n_agents; ++i) {
    RiskEstimate est;
    est.agent_id = i;
    if (sim_idx < simulated.size() && simulated[sim_idx] == i) {
      est.n = n_rollouts;
      est.hits = hits[sim_idx].load();
      est.p_hat = static_cast<double>(est.hits) / n_rollouts;
      const BinomialCI ci = clopper_pearson(est.hits, n_rollouts, 0.95);
      est.ci_lo = ci.lo;
      est.ci_hi = ci.hi;
      ++sim_idx;
    } else {
      // Beyond mc_skip_radius no agent can cross the window: covering the
      // gap in T would need a many-sigma velocity excursion, so the risk is
      // far below anything the Monte Carlo could resolve.
      est.skipped_far = true;
    }
    out.per_agent.push_back(est);
    out.max_p_hat = std::max(out.max_p_hat, est.p_hat);
    out.max_ci_hi = std::max(out.max_ci_hi, est.ci_hi);
  }
  return out;
}

}  // namespace scbf
