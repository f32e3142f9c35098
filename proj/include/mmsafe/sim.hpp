#pragma once

// Scenario sampling, the closed-loop rollout (inference -> nominal control ->
// safe control -> plant -> goal lifecycle), per-rollout metrics, and the
// seed-matched batch runner.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "mmsafe/allocation.hpp"
#include "mmsafe/controllers.hpp"
#include "mmsafe/dynamics.hpp"
#include "mmsafe/errors.hpp"
#include "mmsafe/inference.hpp"
#include "mmsafe/safety.hpp"

namespace mmsafe {

struct ScenarioConfig {
  std::uint64_t seed = 0;
  double arena_half_width = 5.0;  // arena is [-w, w]^2
  int n_goals = 4;
  double horizon = 25.0;
  double dt = 0.1;
  double r_reach = 0.5;
  double min_goal_separation = 0.5;
  Method method = Method::OptimalMmssa;
  HumanParams human;
  SafetyParams safety;
  NominalGains gains;
  SafeControlSettings control;
  double beta = 0.5;
  bool human_switches_goals = true;

  int step_count() const { return static_cast<int>(std::ceil(horizon / dt - 1e-9)); }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(horizon >= dt)) throw ConfigError("horizon must be at least dt");
    if (!(control.eps > 0.0 && control.eps < 0.5)) throw ConfigError("eps must lie in (0, 0.5)");
    if (!(control.u_max > 0.0)) throw ConfigError("u_max must be positive");
    if (n_goals < 1) throw ConfigError("n_goals must be at least 1");
    if (!(arena_half_width > 0.0)) throw ConfigError("arena_half_width must be positive");
    if (!(r_reach > 0.0)) throw ConfigError("r_reach must be positive");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(control.allocator.k_max > 0.0)) throw ConfigError("k_max must be positive");
    if (!(control.allocator.w_k >= 0.0)) throw ConfigError("w_k must be non-negative");
    safety.validate();
  }
};

struct Scenario {
  JointState initial;
  GoalSet goals;
  int true_goal = 0;
  Vec2 robot_goal = Vec2::Zero();
};

namespace detail {

// Independent random streams per purpose so that methods replaying the same seed
// see the same noise and goal sequences regardless of how their trajectories differ.
enum class Stream : std::uint32_t { Scenario = 0, Noise = 1, RobotGoals = 2, HumanGoals = 3 };

inline std::mt19937_64 make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

template <class Rng>
Vec2 uniform_point(Rng& rng, double half_width) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  const double x = u(rng);
  const double y = u(rng);
  return {x, y};
}

}  // namespace detail

/// Random initial condition, goal set, and true human goal; deterministic in seed.
inline Scenario sample_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = detail::make_stream(seed, detail::Stream::Scenario);
  constexpr int kMaxTries = 1000;
  const double w = cfg.arena_half_width;

  Scenario sc;
  bool placed = false;
  for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
    const Vec2 r = detail::uniform_point(rng, w);
    const Vec2 h = detail::uniform_point(rng, w);
    if ((r - h).norm() >= 2.0 * cfg.safety.d_min) {
      std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);
      sc.initial.robot = {r(0), r(1), 0.0, wrap_angle(heading(rng))};
      sc.initial.human = {h(0), 0.0, h(1), 0.0};
      placed = true;
    }
  }
  if (!placed) throw ConfigError("sample_scenario: could not separate agents; arena too small for d_min");

  for (int g = 0; g < cfg.n_goals; ++g) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxTries && !ok; ++attempt) {
      const Vec2 p = detail::uniform_point(rng, w);
      ok = std::all_of(sc.goals.begin(), sc.goals.end(), [&](const Goal& other) {
        return (other.position() - p).norm() >= cfg.min_goal_separation;
      });
      if (ok) sc.goals.push_back({p(0), p(1)});
    }
    if (!ok) throw ConfigError("sample_scenario: could not separate goals; reduce n_goals or separation");
  }
  std::uniform_int_distribution<int> pick(0, cfg.n_goals - 1);
  sc.true_goal = pick(rng);
  sc.robot_goal = detail::uniform_point(rng, w);
  return sc;
}

struct StepRecord {
  double t = 0.0;
  JointState state;
  Eigen::VectorXd belief;
  ControlInput u_ref = ControlInput::Zero();
  ControlInput u = ControlInput::Zero();
  double phi = 0.0;
  double d = 0.0;
  bool active = false;
  bool feasible = true;
  HalfspaceConstraint constraint;
  double area = 0.0;
  bool violation = false;
  int true_goal = 0;
  Eigen::VectorXd k;
  Vec2 robot_goal = Vec2::Zero();
};

struct RolloutLog {
  Method method = Method::OptimalMmssa;
  std::uint64_t seed = 0;
  GoalSet goals;
  std::vector<StepRecord> records;
  int goals_reached = 0;
  bool aborted = false;
  std::string abort_reason;
  int allocator_fallbacks = 0;
  int infeasible_steps = 0;
  int belief_underflows = 0;
};

/// Runs one closed-loop rollout from a given scenario.
inline RolloutLog run_rollout(const ScenarioConfig& cfg, const Scenario& sc) {
  cfg.validate();
  const HumanModel model = HumanModel::make(cfg.human);
  const BoltzmannModel observer = BoltzmannModel::make(model, cfg.dt, cfg.beta);

  auto noise = detail::make_stream(cfg.seed, detail::Stream::Noise);
  auto robot_goal_rng = detail::make_stream(cfg.seed, detail::Stream::RobotGoals);
  auto human_goal_rng = detail::make_stream(cfg.seed, detail::Stream::HumanGoals);

  RolloutLog log;
  log.method = cfg.method;
  log.seed = cfg.seed;
  log.goals = sc.goals;
  const int steps = cfg.step_count();
  log.records.reserve(steps);

  JointState x = sc.initial;
  ModeBelief belief = ModeBelief::uniform(static_cast<int>(sc.goals.size()));
  int true_goal = sc.true_goal;
  Vec2 robot_goal = sc.robot_goal;
  HumanState observed_state;
  Vec2 observed_control = Vec2::Zero();

  try {
    for (int step = 0; step < steps; ++step) {
      const double t = step * cfg.dt;
      if (step > 0) {
        auto update = bayes_update(belief, observed_state, observed_control, sc.goals, observer);
        belief = std::move(update.posterior);
        if (update.underflow) ++log.belief_underflows;
      }

      const ControlInput u_ref = nominal_control(x.robot, robot_goal, cfg.gains);
      const SafeControlResult res =
          safe_control(x, belief, sc.goals, u_ref, cfg.method, model, cfg.safety, cfg.control);
      if (res.allocation.fell_back) ++log.allocator_fallbacks;
      if (res.active && !res.feasible) ++log.infeasible_steps;

      StepRecord rec;
      rec.t = t;
      rec.state = x;
      rec.belief = belief.values();
      rec.u_ref = u_ref;
      rec.u = res.u;
      rec.phi = res.phi;
      rec.d = x.distance();
      rec.active = res.active;
      rec.feasible = res.feasible;
      rec.constraint = res.constraint;
      rec.area = res.area;
      rec.violation = rec.d < cfg.safety.d_min;
      rec.true_goal = true_goal;
      rec.k = res.allocation.k;
      rec.robot_goal = robot_goal;
      log.records.push_back(std::move(rec));

      observed_state = x.human;
      observed_control = human_control(x.human, x.robot, sc.goals[true_goal], model);
      x = step_joint(x, res.u, sc.goals[true_goal], model, cfg.dt, noise, t);

      if ((x.robot.position() - robot_goal).norm() < cfg.r_reach) {
        ++log.goals_reached;
        Vec2 next = detail::uniform_point(robot_goal_rng, cfg.arena_half_width);
        for (int i = 0; i < 100 && (next - x.robot.position()).norm() < 2.0 * cfg.r_reach; ++i)
          next = detail::uniform_point(robot_goal_rng, cfg.arena_half_width);
        robot_goal = next;
      }
      const int n = static_cast<int>(sc.goals.size());
      if (cfg.human_switches_goals && n > 1 &&
          (x.human.position() - sc.goals[true_goal].position()).norm() < cfg.r_reach) {
        std::uniform_int_distribution<int> pick(0, n - 2);
        const int draw = pick(human_goal_rng);
        true_goal = draw >= true_goal ? draw + 1 : draw;
      }
    }
  } catch (const DegenerateStateError& e) {
    log.aborted = true;
    log.abort_reason = e.what();
  } catch (const IntegrationError& e) {
    log.aborted = true;
    log.abort_reason = e.what();
  }
  return log;
}

/// Samples the scenario from cfg.seed and runs it.
inline RolloutLog run_rollout(const ScenarioConfig& cfg) {
  return run_rollout(cfg, sample_scenario(cfg, cfg.seed));
}

struct RolloutMetrics {
  int violations = 0;
  int goals = 0;
  double area = 0.0;         // mean over all steps
  double area_active = 0.0;  // mean over steps with the safety layer engaged (0 if none)
  int active_steps = 0;
  bool aborted = false;
};

inline RolloutMetrics compute_metrics(const RolloutLog& log) {
  RolloutMetrics m;
  m.goals = log.goals_reached;
  m.aborted = log.aborted;
  double area_sum = 0.0;
  double active_sum = 0.0;
  for (const auto& r : log.records) {
    if (r.violation) ++m.violations;
    area_sum += r.area;
    if (r.active) {
      active_sum += r.area;
      ++m.active_steps;
    }
  }
  if (!log.records.empty()) m.area = area_sum / static_cast<double>(log.records.size());
  if (m.active_steps > 0) m.area_active = active_sum / m.active_steps;
  return m;
}

struct BatchMetrics {
  Method method = Method::OptimalMmssa;
  int n_rollouts = 0;
  double mean_violations = 0.0;
  double mean_goals = 0.0;
  double mean_area = 0.0;
  double mean_area_active = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<RolloutMetrics> per_rollout;
  int aborts = 0;
  bool abort_rate_flag = false;  // more than 5% of rollouts aborted
  int allocator_fallbacks = 0;
};

/// Aggregates per-rollout metrics; aborted rollouts are excluded from the means.
inline BatchMetrics aggregate(Method method, const std::vector<std::uint64_t>& seeds,
                              const std::vector<RolloutMetrics>& rows) {
  BatchMetrics b;
  b.method = method;
  b.n_rollouts = static_cast<int>(rows.size());
  b.seeds = seeds;
  b.per_rollout = rows;
  int kept = 0;
  int kept_active = 0;
  for (const auto& r : rows) {
    if (r.aborted) {
      ++b.aborts;
      continue;
    }
    ++kept;
    b.mean_violations += r.violations;
    b.mean_goals += r.goals;
    b.mean_area += r.area;
    if (r.active_steps > 0) {
      b.mean_area_active += r.area_active;
      ++kept_active;
    }
  }
  if (kept > 0) {
    b.mean_violations /= kept;
    b.mean_goals /= kept;
    b.mean_area /= kept;
  }
  if (kept_active > 0) b.mean_area_active /= kept_active;
  b.abort_rate_flag = rows.empty() ? false : b.aborts > 0.05 * static_cast<double>(rows.size());
  return b;
}

/// Runs n seed-matched rollouts per method (seed_base + i), optionally in parallel.
/// Results are merged by rollout index, so output does not depend on thread count.
inline std::vector<BatchMetrics> run_batch(const ScenarioConfig& base, int n_rollouts,
                                           const std::vector<Method>& methods, unsigned threads = 0) {
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be at least 1");
  if (methods.empty()) throw ConfigError("at least one method required");
  base.validate();

  std::vector<std::uint64_t> seeds(n_rollouts);
  for (int i = 0; i < n_rollouts; ++i) seeds[i] = base.seed + static_cast<std::uint64_t>(i);

  const std::size_t jobs = methods.size() * static_cast<std::size_t>(n_rollouts);
  std::vector<RolloutMetrics> results(jobs);
  std::vector<int> fallbacks(jobs, 0);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      try {
        ScenarioConfig cfg = base;
        cfg.method = methods[job / n_rollouts];
        cfg.seed = seeds[job % n_rollouts];
        const RolloutLog log = run_rollout(cfg);
        results[job] = compute_metrics(log);
        fallbacks[job] = log.allocator_fallbacks;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, jobs));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<BatchMetrics> out;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<RolloutMetrics> rows(results.begin() + m * n_rollouts,
                                     results.begin() + (m + 1) * n_rollouts);
    BatchMetrics b = aggregate(methods[m], seeds, rows);
    for (int i = 0; i < n_rollouts; ++i) b.allocator_fallbacks += fallbacks[m * n_rollouts + i];
    out.push_back(std::move(b));
  }
  return out;
}

struct BeliefSample {
  double t = 0.0;
  Eigen::VectorXd belief;
  int true_goal = 0;
};

/// Goal inference on a human walking to its goal with no robot influence
/// (repulsion off, robot absent, no goal switching).
inline std::vector<BeliefSample> run_inference_demo(const ScenarioConfig& cfg, const Scenario& sc) {
  cfg.validate();
  HumanParams params = cfg.human;
  params.gamma_rep = 0.0;
  const HumanModel model = HumanModel::make(params);
  const BoltzmannModel observer = BoltzmannModel::make(model, cfg.dt, cfg.beta);
  auto noise = detail::make_stream(cfg.seed, detail::Stream::Noise);

  JointState x = sc.initial;
  x.robot = {1e6, 1e6, 0.0, 0.0};
  const Goal& goal = sc.goals[sc.true_goal];
  ModeBelief belief = ModeBelief::uniform(static_cast<int>(sc.goals.size()));

  std::vector<BeliefSample> out;
  const int steps = cfg.step_count();
  out.reserve(steps);
  for (int step = 0; step < steps; ++step) {
    const double t = step * cfg.dt;
    out.push_back({t, belief.values(), sc.true_goal});
    const Vec2 uh = human_control(x.human, x.robot, goal, model);
    const HumanState observed = x.human;
    x = step_joint(x, Vec2::Zero().eval(), goal, model, cfg.dt, noise, t);
    belief = bayes_update(belief, observed, uh, sc.goals, observer).posterior;
  }
  return out;
}

}  // namespace mmsafe
