#include "scbf/config_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "scbf/stats.hpp"

namespace scbf {

using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError(what + ": invalid JSON");
  return j;
}

void check_object(const json& j, const std::string& loc) {
  if (!j.is_object()) throw ConfigError(loc + ": expected an object");
}

void check_keys(const json& obj, const std::string& loc,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' at " + loc);
  }
}

double get_num(const json& obj, const std::string& loc, const char* key,
               double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(loc + "/" + key + ": expected a number");
  return v.get<double>();
}

int get_int(const json& obj, const std::string& loc, const char* key,
            int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(loc + "/" + key + ": expected an integer");
  return v.get<int>();
}

bool get_bool(const json& obj, const std::string& loc, const char* key,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(loc + "/" + key + ": expected a boolean");
  return v.get<bool>();
}

std::string get_str(const json& obj, const std::string& loc, const char* key,
                    const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(loc + "/" + key + ": expected a string");
  return v.get<std::string>();
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

Vector json_to_vector(const json& arr, const std::string& loc) {
  if (!arr.is_array()) throw ConfigError(loc + ": expected an array");
  Vector v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& e = arr[i];
    if (e.is_string()) {
      const std::string s = e.get<std::string>();
      if (s == "inf") {
        v[i] = std::numeric_limits<double>::infinity();
      } else if (s == "-inf") {
        v[i] = -std::numeric_limits<double>::infinity();
      } else {
        throw ConfigError(loc + ": expected a number or \"inf\"/\"-inf\"");
      }
    } else if (e.is_number()) {
      v[i] = e.get<double>();
    } else {
      throw ConfigError(loc + ": expected a number");
    }
  }
  return v;
}

Matrix json_to_matrix(const json& arr, const std::string& loc) {
  if (!arr.is_array() || arr.empty()) throw ConfigError(loc + ": expected a 2d array");
  const std::size_t cols = arr[0].is_array() ? arr[0].size() : 0;
  if (cols == 0) throw ConfigError(loc + ": expected a 2d array");
  Matrix m(arr.size(), cols);
  for (std::size_t r = 0; r < arr.size(); ++r) {
    const Vector row = json_to_vector(arr[r], loc);
    if (static_cast<std::size_t>(row.size()) != cols) {
      throw ConfigError(loc + ": ragged rows");
    }
    m.row(static_cast<int>(r)) = row.transpose();
  }
  return m;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json root = parse_json(json_text, "config");
  check_object(root, "/");
  check_keys(root, "/", {"dynamics", "estimator", "barrier", "controller",
                         "scenario", "seeds", "output"});

  RunConfig rc;
  ScenarioConfig& s = rc.scenario;

  if (root.contains("dynamics")) {
    const json& d = root.at("dynamics");
    check_object(d, "/dynamics");
    check_keys(d, "/dynamics", {"dt", "l"});
    s.dt = get_num(d, "/dynamics", "dt", s.dt);
    s.l = get_num(d, "/dynamics", "l", s.l);
  }
  if (root.contains("estimator")) {
    const json& e = root.at("estimator");
    check_object(e, "/estimator");
    check_keys(e, "/estimator", {"warmup", "velocity_prior_var", "divergence_reset"});
    s.ekf_warmup = get_num(e, "/estimator", "warmup", s.ekf_warmup);
    s.velocity_prior_var =
        get_num(e, "/estimator", "velocity_prior_var", s.velocity_prior_var);
    s.divergence_reset = get_bool(e, "/estimator", "divergence_reset", s.divergence_reset);
  }
  if (root.contains("barrier")) {
    const json& b = root.at("barrier");
    check_object(b, "/barrier");
    check_keys(b, "/barrier", {"alpha", "margin_mode", "risk_bound", "p_e",
                               "epsilon", "horizon", "family", "a_fixed", "b_fixed"});
    s.alpha = get_num(b, "/barrier", "alpha", s.alpha);
    s.p_bar = get_num(b, "/barrier", "risk_bound", s.p_bar);
    s.p_e = get_num(b, "/barrier", "p_e", s.p_e);
    s.epsilon = get_num(b, "/barrier", "epsilon", s.epsilon);
    s.horizon = get_num(b, "/barrier", "horizon", s.horizon);
    const std::string mode = get_str(b, "/barrier", "margin_mode", "analytic");
    if (mode == "analytic") {
      s.margin_mode = MarginMode::Analytic;
    } else if (mode == "paper") {
      s.margin_mode = MarginMode::PaperCompat;
    } else {
      throw ConfigError("/barrier/margin_mode: expected \"analytic\" or \"paper\"");
    }
    const std::string family = get_str(b, "/barrier", "family", "B");
    if (family == "A") {
      s.family.variant = ConditionVariant::A;
    } else if (family == "B") {
      s.family.variant = ConditionVariant::B;
    } else if (family == "C") {
      s.family.variant = ConditionVariant::C;
    } else {
      throw ConfigError("/barrier/family: expected \"A\", \"B\" or \"C\"");
    }
    s.family.a_fixed = get_num(b, "/barrier", "a_fixed", s.family.a_fixed);
    s.family.b_fixed = get_num(b, "/barrier", "b_fixed", s.family.b_fixed);
  }
  if (root.contains("controller")) {
    const json& c = root.at("controller");
    check_object(c, "/controller");
    check_keys(c, "/controller",
               {"slack_penalty", "b_weight", "clf_gain", "clf_relax_weight",
                "u1_min", "u1_max", "u2_min", "u2_max", "proximity_radius",
                "slack_tol"});
    s.slack_penalty = get_num(c, "/controller", "slack_penalty", s.slack_penalty);
    s.b_weight = get_num(c, "/controller", "b_weight", s.b_weight);
    s.clf_gain = get_num(c, "/controller", "clf_gain", s.clf_gain);
    s.clf_relax_weight =
        get_num(c, "/controller", "clf_relax_weight", s.clf_relax_weight);
    s.u1_min = get_num(c, "/controller", "u1_min", s.u1_min);
    s.u1_max = get_num(c, "/controller", "u1_max", s.u1_max);
    s.u2_min = get_num(c, "/controller", "u2_min", s.u2_min);
    s.u2_max = get_num(c, "/controller", "u2_max", s.u2_max);
    s.proximity_radius =
        get_num(c, "/controller", "proximity_radius", s.proximity_radius);
    s.slack_tol = get_num(c, "/controller", "slack_tol", s.slack_tol);
  }
  if (root.contains("scenario")) {
    const json& sc = root.at("scenario");
    check_object(sc, "/scenario");
    check_keys(sc, "/scenario",
               {"n_agents", "lane_count", "lane_width", "goal_x", "goal_y",
                "goal_radius", "v_desired", "c1", "c2", "g_scale", "d_diag",
                "r_u", "duration", "velocity_variance", "layout",
                "mc_skip_radius", "ego_init"});
    s.n_agents = get_int(sc, "/scenario", "n_agents", s.n_agents);
    s.lanes.count = get_int(sc, "/scenario", "lane_count", s.lanes.count);
    s.lanes.width = get_num(sc, "/scenario", "lane_width", s.lanes.width);
    s.goal.center[0] = get_num(sc, "/scenario", "goal_x", s.goal.center[0]);
    s.goal.center[1] = get_num(sc, "/scenario", "goal_y", s.goal.center[1]);
    s.goal.radius = get_num(sc, "/scenario", "goal_radius", s.goal.radius);
    s.traffic.v_d = get_num(sc, "/scenario", "v_desired", s.traffic.v_d);
    s.traffic.c1 = get_num(sc, "/scenario", "c1", s.traffic.c1);
    s.traffic.c2 = get_num(sc, "/scenario", "c2", s.traffic.c2);
    s.traffic.g_scale = get_num(sc, "/scenario", "g_scale", s.traffic.g_scale);
    s.r_u = get_num(sc, "/scenario", "r_u", s.r_u);
    s.duration = get_num(sc, "/scenario", "duration", s.duration);
    s.velocity_variance =
        get_num(sc, "/scenario", "velocity_variance", s.velocity_variance);
    s.mc_skip_radius = get_num(sc, "/scenario", "mc_skip_radius", s.mc_skip_radius);
    if (sc.contains("d_diag")) {
      const Vector d = json_to_vector(sc.at("d_diag"), "/scenario/d_diag");
      if (d.size() != 2) throw ConfigError("/scenario/d_diag: expected 2 entries");
      s.d_diag << d[0], d[1];
    }
    if (sc.contains("ego_init")) {
      const Vector e = json_to_vector(sc.at("ego_init"), "/scenario/ego_init");
      if (e.size() != 3) throw ConfigError("/scenario/ego_init: expected 3 entries");
      s.ego_init = e;
    }
    if (sc.contains("layout")) {
      const json& lay = sc.at("layout");
      if (!lay.is_array()) throw ConfigError("/scenario/layout: expected an array");
      for (std::size_t i = 0; i < lay.size(); ++i) {
        const Vector row = json_to_vector(lay[i], "/scenario/layout");
        if (row.size() != 2 && row.size() != 3) {
          throw ConfigError("/scenario/layout: entries must be [x, y] or [x, y, v]");
        }
        AgentInit init;
        init.pos << row[0], row[1];
        if (row.size() == 3) init.vel = row[2];
        s.layout.push_back(init);
      }
    }
  }
  if (root.contains("seeds")) {
    const json& se = root.at("seeds");
    check_object(se, "/seeds");
    check_keys(se, "/seeds", {"master"});
    if (se.contains("master")) {
      if (!se.at("master").is_number_integer()) {
        throw ConfigError("/seeds/master: expected an integer");
      }
      s.seed = se.at("master").get<std::uint64_t>();
    }
  }
  if (root.contains("output")) {
    const json& o = root.at("output");
    check_object(o, "/output");
    check_keys(o, "/output", {"dir", "prefix"});
    rc.output.dir = get_str(o, "/output", "dir", rc.output.dir);
    rc.output.prefix = get_str(o, "/output", "prefix", rc.output.prefix);
  }

  rc.scenario.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

QpProblem parse_qp_json(const std::string& json_text) {
  const json j = parse_json(json_text, "qp");
  check_object(j, "/");
  check_keys(j, "/", {"P", "q", "A", "ub", "lo", "hi"});
  if (!j.contains("P") || !j.contains("q")) {
    throw ConfigError("qp: P and q are required");
  }
  QpProblem p;
  p.P = json_to_matrix(j.at("P"), "/P");
  p.q = json_to_vector(j.at("q"), "/q");
  const int k = static_cast<int>(p.q.size());
  if (j.contains("A")) {
    p.A = json_to_matrix(j.at("A"), "/A");
    if (!j.contains("ub")) throw ConfigError("qp: A given without ub");
    p.ub = json_to_vector(j.at("ub"), "/ub");
  } else {
    p.A = Matrix::Zero(0, k);
    p.ub = Vector::Zero(0);
  }
  p.lo = j.contains("lo") ? json_to_vector(j.at("lo"), "/lo")
                          : Vector::Constant(k, -std::numeric_limits<double>::infinity());
  p.hi = j.contains("hi") ? json_to_vector(j.at("hi"), "/hi")
                          : Vector::Constant(k, std::numeric_limits<double>::infinity());
  return p;
}

QpProblem load_qp_json(const std::string& path) {
  return parse_qp_json(read_file(path));
}

std::string trace_to_csv(const SimulationTrace& trace) {
  std::ostringstream out;
  const int n_agents =
      trace.ticks.empty() ? 0 : static_cast<int>(trace.ticks.front().agents.size());
  out << "t,px,py,theta,u1,u2,s,max_risk_bound,barx,bary,delta,"
         "feasible_wo_slack,goal,solver_failed";
  for (int i = 0; i < n_agents; ++i) {
    out << ",a" << i << "_x,a" << i << "_y,a" << i << "_v,a" << i << "_xh,a" << i
        << "_yh,a" << i << "_vh,a" << i << "_err,a" << i << "_ptrace,a" << i
        << "_b,a" << i << "_risk,a" << i << "_active";
  }
  out << "\n";
  for (const TickRecord& r : trace.ticks) {
    out << fmt(r.t) << ',' << fmt(r.x_r[0]) << ',' << fmt(r.x_r[1]) << ','
        << fmt(r.x_r[2]) << ',' << fmt(r.u[0]) << ',' << fmt(r.u[1]) << ','
        << fmt(r.s) << ',' << fmt(r.max_risk) << ',' << fmt(r.x_bar[0]) << ','
        << fmt(r.x_bar[1]) << ',' << fmt(r.delta) << ','
        << (r.feasible_without_slack ? 1 : 0) << ',' << (r.goal ? 1 : 0) << ','
        << (r.solver_failed ? 1 : 0);
    for (const AgentTickRecord& a : r.agents) {
      out << ',' << fmt(a.x_true[0]) << ',' << fmt(a.x_true[1]) << ','
          << fmt(a.x_true[2]) << ',' << fmt(a.x_hat[0]) << ',' << fmt(a.x_hat[1])
          << ',' << fmt(a.x_hat[2]) << ',' << fmt(a.err) << ','
          << fmt(a.P.trace()) << ',' << fmt(a.b) << ',' << fmt(a.risk) << ','
          << (a.active ? 1 : 0);
    }
    out << "\n";
  }
  return out.str();
}

TraceSummaryStats summary_stats_from_trace(const SimulationTrace& trace,
                                           double slack_tol) {
  TraceSummaryStats st;
  st.n_ticks = static_cast<int>(trace.ticks.size());
  for (const TickRecord& r : trace.ticks) {
    if (r.s > slack_tol) ++st.slack_active_ticks;
    st.max_slack = std::max(st.max_slack, r.s);
    st.max_risk_bound = std::max(st.max_risk_bound, r.max_risk);
    if (r.goal) {
      st.goal_reached = true;
      st.goal_time = r.t;
    }
  }
  return st;
}

TraceSummaryStats summary_stats_from_csv(const std::string& csv,
                                         double slack_tol) {
  TraceSummaryStats st;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) return st;  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // Columns: t(0) .. s(6) max_risk_bound(7) .. goal(12)
    std::istringstream row(line);
    std::string cell;
    int col = 0;
    double t = 0.0, s = 0.0, risk = 0.0;
    int goal = 0;
    while (std::getline(row, cell, ',') && col <= 12) {
      switch (col) {
        case 0: t = std::stod(cell); break;
        case 6: s = std::stod(cell); break;
        case 7: risk = std::stod(cell); break;
        case 12: goal = std::stoi(cell); break;
        default: break;
      }
      ++col;
    }
    ++st.n_ticks;
    if (s > slack_tol) ++st.slack_active_ticks;
    st.max_slack = std::max(st.max_slack, s);
    st.max_risk_bound = std::max(st.max_risk_bound, risk);
    if (goal != 0) {
      st.goal_reached = true;
      st.goal_time = t;
    }
  }
  return st;
}

std::string summary_to_json(const ScenarioConfig& cfg, std::uint64_t seed,
                            const SimulationTrace& trace,
                            const std::string& csv) {
  const TraceSummaryStats st = summary_stats_from_trace(trace, cfg.slack_tol);
  json j;
  j["trace_version"] = 1;
  j["seed"] = seed;
  j["n_ticks"] = st.n_ticks;
  j["goal_reached"] = st.goal_reached;
  if (st.goal_reached) {
    j["goal_time"] = st.goal_time;
  } else {
    j["goal_time"] = nullptr;
  }
  j["truncated"] = trace.truncated;
  j["failure"] = trace.failure;
  j["divergence_resets"] = trace.divergence_resets;
  json slack_ticks = json::array();
  for (std::size_t k = 0; k < trace.ticks.size(); ++k) {
    if (trace.ticks[k].s > cfg.slack_tol) slack_ticks.push_back(k);
  }
  j["slack_active_ticks"] = slack_ticks;
  j["n_slack_ticks"] = st.slack_active_ticks;
  j["max_slack"] = st.max_slack;
  j["max_risk_bound"] = st.max_risk_bound;
  j["slack_tol"] = cfg.slack_tol;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a64(csv)));
  j["trace_hash"] = hash;
  return j.dump(2) + "\n";
}

std::string calibration_to_json(const CalibrationReport& rep) {
  json j;
  j["epsilon"] = rep.epsilon;
  j["p_e"] = rep.p_e;
  j["n_runs"] = rep.n_runs;
  j["divergence_warnings"] = rep.divergence_warnings;
  j["per_run_coverage"] = rep.per_run_coverage;
  j["per_step_coverage"] = rep.per_step_coverage;
  json quantiles = json::array();
  for (const auto& [q, v] : rep.quantiles) {
    quantiles.push_back(json{{"q", q}, {"value", v}});
  }
  j["sup_error_quantiles"] = quantiles;
  j["analytic"] = json{{"rho_upper", rep.rho_upper},
                       {"rho_lower", rep.rho_lower},
                       {"eps0", rep.eps0},
                       {"epsilon", rep.analytic_epsilon}};
  return j.dump(2) + "\n";
}

}  // namespace scbf
