#include <gtest/gtest.h>

#include <cmath>

#include "mmsafe/sim.hpp"
#include "scenarios.hpp"

namespace mmsafe {
namespace {

TEST(ScenarioConfig, StepCountAndValidation) {
  ScenarioConfig cfg;
  EXPECT_EQ(cfg.step_count(), 250);
  cfg.dt = 0.3;
  EXPECT_EQ(cfg.step_count(), 84);
  cfg.dt = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.control.eps = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.safety.d_min = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.horizon = 0.05;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SampleScenario, Deterministic) {
  const ScenarioConfig cfg;
  const auto a = sample_scenario(cfg, 77);
  const auto b = sample_scenario(cfg, 77);
  EXPECT_EQ(a.initial.to_vector(), b.initial.to_vector());
  EXPECT_EQ(a.true_goal, b.true_goal);
  EXPECT_EQ(a.robot_goal, b.robot_goal);
  ASSERT_EQ(a.goals.size(), b.goals.size());
  for (std::size_t i = 0; i < a.goals.size(); ++i) EXPECT_EQ(a.goals[i].position(), b.goals[i].position());
  EXPECT_NE(sample_scenario(cfg, 78).initial.to_vector(), a.initial.to_vector());
}

TEST(SampleScenario, SatisfiesConstraints) {
  const ScenarioConfig cfg;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto sc = sample_scenario(cfg, seed);
    EXPECT_GE(sc.initial.distance(), 2.0 * cfg.safety.d_min);
    EXPECT_EQ(sc.initial.robot.v, 0.0);
    EXPECT_EQ(sc.initial.human.vx, 0.0);
    EXPECT_EQ(sc.initial.human.vy, 0.0);
    EXPECT_GT(sc.initial.robot.psi, -std::numbers::pi);
    EXPECT_LE(sc.initial.robot.psi, std::numbers::pi);
    ASSERT_EQ(static_cast<int>(sc.goals.size()), cfg.n_goals);
    for (std::size_t i = 0; i < sc.goals.size(); ++i) {
      EXPECT_LE(sc.goals[i].position().cwiseAbs().maxCoeff(), cfg.arena_half_width);
      for (std::size_t j = i + 1; j < sc.goals.size(); ++j)
        EXPECT_GE((sc.goals[i].position() - sc.goals[j].position()).norm(), cfg.min_goal_separation);
    }
    EXPECT_GE(sc.true_goal, 0);
    EXPECT_LT(sc.true_goal, cfg.n_goals);
  }
}

TEST(SampleScenario, RejectionCapIsAConfigError) {
  ScenarioConfig cfg;
  cfg.arena_half_width = 0.1;
  EXPECT_THROW(sample_scenario(cfg, 0), ConfigError);
  cfg = {};
  cfg.n_goals = 500;
  cfg.min_goal_separation = 3.0;
  EXPECT_THROW(sample_scenario(cfg, 0), ConfigError);
}

TEST(RunRollout, RecordInvariants) {
  ScenarioConfig cfg;
  cfg.seed = 5;
  const auto log = run_rollout(cfg);
  ASSERT_FALSE(log.aborted);
  ASSERT_EQ(static_cast<int>(log.records.size()), cfg.step_count());
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    EXPECT_NEAR(r.t, static_cast<double>(i) * cfg.dt, 1e-12);
    EXPECT_EQ(r.violation, r.d < cfg.safety.d_min);
    EXPECT_EQ(r.active, r.phi >= 0.0);
    EXPECT_NEAR(r.belief.sum(), 1.0, 1e-9);
    EXPECT_LE(r.u.cwiseAbs().maxCoeff(), cfg.control.u_max);
    if (r.active && r.feasible) EXPECT_LE(r.constraint.L.dot(r.u), r.constraint.S + 1e-9);
    EXPECT_EQ(r.k.size(), cfg.n_goals);
  }
}

TEST(RunRollout, Deterministic) {
  ScenarioConfig cfg;
  cfg.seed = 9;
  const auto a = run_rollout(cfg);
  const auto b = run_rollout(cfg);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].state.to_vector(), b.records[i].state.to_vector());
    EXPECT_EQ(a.records[i].belief, b.records[i].belief);
    EXPECT_EQ(a.records[i].u, b.records[i].u);
  }
  cfg.seed = 10;
  EXPECT_NE(run_rollout(cfg).records.back().state.to_vector(), a.records.back().state.to_vector());
}

TEST(RunRollout, FarApartIsQuietAndMethodIndependent) {
  std::vector<RolloutLog> logs;
  for (Method m : {Method::Sea, Method::NaiveMmssa, Method::OptimalMmssa}) {
    auto [cfg, sc] = testing::far_apart(m);
    logs.push_back(run_rollout(cfg, sc));
    const auto metrics = compute_metrics(logs.back());
    EXPECT_EQ(metrics.violations, 0);
    EXPECT_EQ(metrics.active_steps, 0);
    for (const auto& r : logs.back().records) EXPECT_LT(r.phi, 0.0);
  }
  for (std::size_t i = 0; i < logs[0].records.size(); ++i) {
    EXPECT_EQ(logs[0].records[i].state.to_vector(), logs[1].records[i].state.to_vector());
    EXPECT_EQ(logs[0].records[i].state.to_vector(), logs[2].records[i].state.to_vector());
  }
}

TEST(RunRollout, HeadOnStaysSafe) {
  for (Method m : {Method::NaiveMmssa, Method::OptimalMmssa}) {
    auto [cfg, sc] = testing::head_on(m);
    const auto log = run_rollout(cfg, sc);
    ASSERT_FALSE(log.aborted);
    EXPECT_LT(log.records.front().phi, 0.0);
    const auto metrics = compute_metrics(log);
    EXPECT_EQ(metrics.violations, 0);
    EXPECT_GT(metrics.active_steps, 0);
  }
}

TEST(RunRollout, MethodsShareInitialConditionsAndGoals) {
  ScenarioConfig cfg;
  cfg.seed = 21;
  std::vector<RolloutLog> logs;
  for (Method m : {Method::Sea, Method::NaiveMmssa, Method::OptimalMmssa}) {
    cfg.method = m;
    logs.push_back(run_rollout(cfg));
  }
  for (const auto& log : logs) {
    EXPECT_EQ(log.records.front().state.to_vector(), logs[0].records.front().state.to_vector());
    EXPECT_EQ(log.records.front().robot_goal, logs[0].records.front().robot_goal);
  }
}

TEST(ComputeMetrics, Counting) {
  RolloutLog log;
  for (int i = 0; i < 10; ++i) {
    StepRecord r;
    r.d = (i >= 4 && i < 7) ? 0.8 : 2.0;
    r.violation = r.d < 1.0;
    r.area = 3600.0;
    r.active = i % 2 == 0;
    log.records.push_back(r);
  }
  log.goals_reached = 2;
  const auto m = compute_metrics(log);
  EXPECT_EQ(m.violations, 3);
  EXPECT_EQ(m.goals, 2);
  EXPECT_EQ(m.area, 3600.0);
  EXPECT_EQ(m.area_active, 3600.0);
  EXPECT_EQ(m.active_steps, 5);
  for (auto& r : log.records) r.violation = false;
  EXPECT_EQ(compute_metrics(log).violations, 0);
}

TEST(Aggregate, MeansExcludeAborts) {
  std::vector<RolloutMetrics> rows(4);
  rows[0] = {1, 3, 100.0, 50.0, 2, false};
  rows[1] = {0, 5, 200.0, 0.0, 0, false};
  rows[2] = {9, 9, 999.0, 999.0, 9, true};
  rows[3] = {2, 1, 300.0, 150.0, 4, false};
  const auto b = aggregate(Method::Sea, {0, 1, 2, 3}, rows);
  EXPECT_EQ(b.n_rollouts, 4);
  EXPECT_EQ(b.aborts, 1);
  EXPECT_TRUE(b.abort_rate_flag);
  EXPECT_EQ(b.mean_violations, 1.0);
  EXPECT_EQ(b.mean_goals, 3.0);
  EXPECT_EQ(b.mean_area, 200.0);
  EXPECT_EQ(b.mean_area_active, 100.0);
}

TEST(RunBatch, DeterministicAcrossThreadCounts) {
  ScenarioConfig cfg;
  cfg.seed = 100;
  cfg.horizon = 5.0;
  const std::vector<Method> methods{Method::Sea, Method::OptimalMmssa};
  const auto a = run_batch(cfg, 4, methods, 1);
  const auto b = run_batch(cfg, 4, methods, 3);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t m = 0; m < a.size(); ++m) {
    EXPECT_EQ(a[m].seeds, (std::vector<std::uint64_t>{100, 101, 102, 103}));
    EXPECT_EQ(a[m].mean_violations, b[m].mean_violations);
    EXPECT_EQ(a[m].mean_goals, b[m].mean_goals);
    EXPECT_EQ(a[m].mean_area, b[m].mean_area);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(a[m].per_rollout[i].area, b[m].per_rollout[i].area);
  }
}

TEST(RunBatch, SameMethodTwiceIsIdentical) {
  ScenarioConfig cfg;
  cfg.horizon = 5.0;
  const auto r = run_batch(cfg, 1, {Method::NaiveMmssa, Method::NaiveMmssa}, 2);
  EXPECT_EQ(r[0].mean_area, r[1].mean_area);
  EXPECT_EQ(r[0].mean_violations, r[1].mean_violations);
  EXPECT_THROW(run_batch(cfg, 0, {Method::Sea}), ConfigError);
  EXPECT_THROW(run_batch(cfg, 1, {}), ConfigError);
}

TEST(InferenceDemo, ConvergesToTrueGoal) {
  ScenarioConfig cfg;
  cfg.n_goals = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.seed = seed;
    const auto sc = sample_scenario(cfg, seed);
    const auto samples = run_inference_demo(cfg, sc);
    ASSERT_EQ(static_cast<int>(samples.size()), cfg.step_count());
    for (const auto& s : samples) EXPECT_NEAR(s.belief.sum(), 1.0, 1e-9);
    EXPECT_GT(samples.back().belief(sc.true_goal), 0.95) << "seed " << seed;
  }
}

}  // namespace
}  // namespace mmsafe
