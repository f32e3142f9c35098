#pragma once

// JSON configuration and the CSV / JSON output formats written by the CLI.
// Requires nlohmann_json (link mmsafe::io).

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mmsafe/errors.hpp"
#include "mmsafe/sim.hpp"

namespace mmsafe::io {

using nlohmann::json;

/// 17 significant digits: enough to round-trip any double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string join(std::string_view prefix, std::string_view key) {
  return prefix.empty() ? std::string(key) : std::string(prefix) + "." + std::string(key);
}

// Reads fields out of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object())
      throw ConfigError("config key '" + (path_.empty() ? std::string("<root>") : path_) + "' must be an object");
  }

  template <class T>
  void read(std::string_view key, T& out) {
    seen_.insert(std::string(key));
    const auto it = obj_.find(std::string(key));
    if (it == obj_.end()) return;
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) {
      ok = it->is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      ok = it->is_number_integer() && (std::is_signed_v<T> || it->template get<long long>() >= 0);
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = it->is_number();
    }
    if (!ok) throw ConfigError("config key '" + join(path_, key) + "' has the wrong type");
    out = it->template get<T>();
  }

  template <int N>
  void read_matrix(std::string_view key, Mat<N, N>& out) {
    seen_.insert(std::string(key));
    const auto it = obj_.find(std::string(key));
    if (it == obj_.end()) return;
    const std::string name = join(path_, key);
    auto number = [&](const json& v) {
      if (!v.is_number()) throw ConfigError("config key '" + name + "' must contain numbers");
      return v.get<double>();
    };
    if (!it->is_array()) throw ConfigError("config key '" + name + "' must be an array");
    if (it->size() == static_cast<std::size_t>(N) && !(*it)[0].is_array()) {
      out.setZero();
      for (int i = 0; i < N; ++i) out(i, i) = number((*it)[i]);
      return;
    }
    if (it->size() != static_cast<std::size_t>(N))
      throw ConfigError("config key '" + name + "' must be a diagonal or " + std::to_string(N) + " rows");
    for (int i = 0; i < N; ++i) {
      const json& row = (*it)[i];
      if (!row.is_array() || row.size() != static_cast<std::size_t>(N))
        throw ConfigError("config key '" + name + "' row " + std::to_string(i) + " must have " +
                          std::to_string(N) + " entries");
      for (int j = 0; j < N; ++j) out(i, j) = number(row[j]);
    }
  }

  const json* child(std::string_view key) {
    seen_.insert(std::string(key));
    const auto it = obj_.find(std::string(key));
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string path(std::string_view key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + join(path_, key) + "'");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <int N>
json matrix_to_json(const Mat<N, N>& m) {
  json rows = json::array();
  for (int i = 0; i < N; ++i) {
    json row = json::array();
    for (int j = 0; j < N; ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace detail

/// Parses a config object on top of the defaults. Unknown keys are errors.
inline ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  detail::ObjectReader root(j, "");
  root.read("seed", c.seed);
  root.read("arena_half_width", c.arena_half_width);
  root.read("n_goals", c.n_goals);
  root.read("horizon", c.horizon);
  root.read("dt", c.dt);
  root.read("r_reach", c.r_reach);
  root.read("min_goal_separation", c.min_goal_separation);
  root.read("beta", c.beta);
  root.read("human_switches_goals", c.human_switches_goals);

  if (const json* m = root.child("method")) {
    if (!m->is_string()) throw ConfigError("config key 'method' must be a string");
    const auto parsed = parse_method(m->get<std::string>());
    if (!parsed) throw ConfigError("config key 'method': unknown method '" + m->get<std::string>() +
                                   "' (valid: sea, nmmssa, ommssa)");
    c.method = *parsed;
  }
  if (const json* h = root.child("human")) {
    detail::ObjectReader r(*h, "human");
    r.read_matrix<4>("Q", c.human.Q);
    r.read_matrix<2>("R", c.human.R);
    r.read_matrix<4>("Sigma", c.human.Sigma);
    r.read("gamma_rep", c.human.gamma_rep);
    r.finish();
  }
  if (const json* s = root.child("safety")) {
    detail::ObjectReader r(*s, "safety");
    r.read("d_min", c.safety.d_min);
    r.read("k_phi", c.safety.k_phi);
    r.read("eta0", c.safety.eta0);
    r.finish();
  }
  if (const json* g = root.child("gains")) {
    detail::ObjectReader r(*g, "gains");
    r.read("k_v", c.gains.k_v);
    r.read("k_psi", c.gains.k_psi);
    r.finish();
  }
  if (const json* k = root.child("control")) {
    detail::ObjectReader r(*k, "control");
    r.read("eps", c.control.eps);
    r.read("u_max", c.control.u_max);
    r.read("k_round_up", c.control.k_round_up);
    r.read("k_max", c.control.allocator.k_max);
    r.read("w_k", c.control.allocator.w_k);
    r.read("zero_probability", c.control.allocator.zero_probability);
    r.finish();
  }
  root.finish();
  c.validate();
  // Model parameters that cannot produce a stabilizing human or a proper likelihood are config errors too.
  try {
    (void)BoltzmannModel::make(HumanModel::make(c.human), c.dt, c.beta);
  } catch (const Error& e) {
    throw ConfigError(std::string("config key 'human': ") + e.what());
  }
  return c;
}

/// Fully resolved config, the inverse of config_from_json.
inline json config_to_json(const ScenarioConfig& c) {
  return {
      {"seed", c.seed},
      {"arena_half_width", c.arena_half_width},
      {"n_goals", c.n_goals},
      {"horizon", c.horizon},
      {"dt", c.dt},
      {"r_reach", c.r_reach},
      {"min_goal_separation", c.min_goal_separation},
      {"method", std::string(method_name(c.method))},
      {"beta", c.beta},
      {"human_switches_goals", c.human_switches_goals},
      {"human",
       {{"Q", detail::matrix_to_json<4>(c.human.Q)},
        {"R", detail::matrix_to_json<2>(c.human.R)},
        {"Sigma", detail::matrix_to_json<4>(c.human.Sigma)},
        {"gamma_rep", c.human.gamma_rep}}},
      {"safety", {{"d_min", c.safety.d_min}, {"k_phi", c.safety.k_phi}, {"eta0", c.safety.eta0}}},
      {"gains", {{"k_v", c.gains.k_v}, {"k_psi", c.gains.k_psi}}},
      {"control",
       {{"eps", c.control.eps},
        {"u_max", c.control.u_max},
        {"k_round_up", c.control.k_round_up},
        {"k_max", c.control.allocator.k_max},
        {"w_k", c.control.allocator.w_k},
        {"zero_probability", c.control.allocator.zero_probability}}},
  };
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

/// Applies "a.b.c=value" onto a JSON object. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' must look like key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

inline std::vector<std::string> trajectory_header(int n_goals) {
  std::vector<std::string> h = {"t",   "r_x",  "r_y",    "v_R", "psi_R", "h_x", "v_x", "h_y",  "v_y",
                                "phi", "d",    "active", "L0",  "L1",    "S",   "area", "violation",
                                "true_goal"};
  for (int i = 0; i < n_goals; ++i) h.push_back("b_" + std::to_string(i));
  for (const char* s : {"uref_0", "uref_1", "u_0", "u_1"}) h.emplace_back(s);
  for (int i = 0; i < n_goals; ++i) h.push_back("k_" + std::to_string(i));
  return h;
}

namespace detail {

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

}  // namespace detail

inline void write_trajectory_csv(std::ostream& out, const RolloutLog& log) {
  const int n = static_cast<int>(log.goals.size());
  detail::write_row(out, trajectory_header(n));
  std::vector<std::string> row;
  for (const auto& r : log.records) {
    row.clear();
    const auto f = [&](double v) { row.push_back(format_double(v)); };
    f(r.t);
    for (int i = 0; i < 4; ++i) f(r.state.robot.to_vector()(i));
    for (int i = 0; i < 4; ++i) f(r.state.human.to_vector()(i));
    f(r.phi);
    f(r.d);
    row.push_back(r.active ? "1" : "0");
    f(r.constraint.L(0));
    f(r.constraint.L(1));
    f(r.constraint.S);
    f(r.area);
    row.push_back(r.violation ? "1" : "0");
    row.push_back(std::to_string(r.true_goal));
    for (int i = 0; i < n; ++i) f(r.belief(i));
    f(r.u_ref(0));
    f(r.u_ref(1));
    f(r.u(0));
    f(r.u(1));
    for (int i = 0; i < n; ++i) f(r.k(i));
    detail::write_row(out, row);
  }
}

inline json goals_to_json(const GoalSet& goals) {
  json out = json::array();
  for (const auto& g : goals) out.push_back({g.x, g.y});
  return out;
}

inline json rollout_summary(const RolloutLog& log) {
  const RolloutMetrics m = compute_metrics(log);
  return {
      {"method", std::string(method_name(log.method))},
      {"seed", log.seed},
      {"steps", log.records.size()},
      {"goals", goals_to_json(log.goals)},
      {"violations", m.violations},
      {"goals_reached", m.goals},
      {"area", m.area},
      {"area_active", m.area_active},
      {"active_steps", m.active_steps},
      {"aborted", log.aborted},
      {"abort_reason", log.abort_reason},
      {"allocator_fallbacks", log.allocator_fallbacks},
      {"infeasible_steps", log.infeasible_steps},
      {"belief_underflows", log.belief_underflows},
  };
}

// ---------------------------------------------------------------------------
// Batch metrics
// ---------------------------------------------------------------------------

inline json metrics_to_json(const BatchMetrics& b) {
  json per = {{"seed", json::array()},        {"violations", json::array()},
              {"goals", json::array()},       {"area", json::array()},
              {"area_active", json::array()}, {"active_steps", json::array()},
              {"aborted", json::array()}};
  for (std::size_t i = 0; i < b.per_rollout.size(); ++i) {
    const auto& r = b.per_rollout[i];
    per["seed"].push_back(b.seeds[i]);
    per["violations"].push_back(r.violations);
    per["goals"].push_back(r.goals);
    per["area"].push_back(r.area);
    per["area_active"].push_back(r.area_active);
    per["active_steps"].push_back(r.active_steps);
    per["aborted"].push_back(r.aborted);
  }
  return {
      {"method", std::string(method_name(b.method))},
      {"n_rollouts", b.n_rollouts},
      {"mean_violations", b.mean_violations},
      {"mean_goals", b.mean_goals},
      {"mean_area", b.mean_area},
      {"mean_area_active", b.mean_area_active},
      {"aborts", b.aborts},
      {"abort_rate_flag", b.abort_rate_flag},
      {"allocator_fallbacks", b.allocator_fallbacks},
      {"per_rollout", per},
  };
}

inline void write_per_rollout_csv(std::ostream& out, const std::vector<BatchMetrics>& batches) {
  detail::write_row(out, {"method", "rollout", "seed", "violations", "goals", "area", "area_active",
                          "active_steps", "aborted"});
  for (const auto& b : batches)
    for (std::size_t i = 0; i < b.per_rollout.size(); ++i) {
      const auto& r = b.per_rollout[i];
      detail::write_row(out, {std::string(method_name(b.method)), std::to_string(i), std::to_string(b.seeds[i]),
                              std::to_string(r.violations), std::to_string(r.goals), format_double(r.area),
                              format_double(r.area_active), std::to_string(r.active_steps),
                              r.aborted ? "1" : "0"});
    }
}

/// Human-readable version of the three metric rows, one column per method.
inline void write_metrics_table(std::ostream& out, const std::vector<BatchMetrics>& batches) {
  constexpr int label_width = 34;
  constexpr int col_width = 12;
  auto pad = [](std::string s, int w, bool right) {
    if (static_cast<int>(s.size()) >= w) return s;
    const std::string fill(static_cast<std::size_t>(w) - s.size(), ' ');
    return right ? fill + s : s + fill;
  };
  auto fixed = [](double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return std::string(buf);
  };
  out << pad("", label_width, false);
  for (const auto& b : batches) out << pad(std::string(method_name(b.method)), col_width, true);
  out << '\n';
  out << pad("# safety violations per rollout", label_width, false);
  for (const auto& b : batches) out << pad(fixed(b.mean_violations, 2), col_width, true);
  out << '\n';
  out << pad("# goals reached per rollout", label_width, false);
  for (const auto& b : batches) out << pad(fixed(b.mean_goals, 2), col_width, true);
  out << '\n';
  out << pad("control set size (rad m/s^2)", label_width, false);
  for (const auto& b : batches) out << pad(fixed(b.mean_area, 1), col_width, true);
  out << '\n';
  out << pad("aborted rollouts", label_width, false);
  for (const auto& b : batches) out << pad(std::to_string(b.aborts), col_width, true);
  out << '\n';
}

// ---------------------------------------------------------------------------
// Belief CSV
// ---------------------------------------------------------------------------

inline void write_belief_csv(std::ostream& out, const std::vector<BeliefSample>& samples) {
  const int n = samples.empty() ? 0 : static_cast<int>(samples.front().belief.size());
  std::vector<std::string> header{"t"};
  for (int i = 0; i < n; ++i) header.push_back("b_" + std::to_string(i));
  header.emplace_back("true_goal");
  detail::write_row(out, header);
  std::vector<std::string> row;
  for (const auto& s : samples) {
    row.clear();
    row.push_back(format_double(s.t));
    for (int i = 0; i < n; ++i) row.push_back(format_double(s.belief(i)));
    row.push_back(std::to_string(s.true_goal));
    detail::write_row(out, row);
  }
}

}  // namespace mmsafe::io
