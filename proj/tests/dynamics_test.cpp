#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mmsafe/dynamics.hpp"

namespace mmsafe {
namespace {

HumanModel default_model() { return HumanModel::make(HumanParams{}); }

TEST(RobotDrift, Values) {
  EXPECT_EQ(robot_drift({1.0, 2.0, 0.0, 0.7}), Vec4::Zero());
  EXPECT_EQ(robot_drift({0.0, 0.0, 1.0, 0.0}), Vec4(1.0, 0.0, 0.0, 0.0));
  const Vec4 up = robot_drift({0.0, 0.0, 2.0, std::numbers::pi / 2});
  EXPECT_LT((up - Vec4(0.0, 2.0, 0.0, 0.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RobotInputMatrix, Structure) {
  const auto g = robot_input_matrix({3.0, -1.0, 2.0, 0.4});
  EXPECT_EQ(g.topRows<2>(), (Mat<2, 2>::Zero()));
  EXPECT_EQ(g.bottomRows<2>(), Mat2::Identity());
  EXPECT_EQ(g * Vec2(1.0, 0.0), Vec4(0.0, 0.0, 1.0, 0.0));
  EXPECT_EQ(g * Vec2(0.0, 2.0), Vec4(0.0, 0.0, 0.0, 2.0));
}

TEST(HumanModel, SelectorsAndGain) {
  const auto m = default_model();
  Mat<2, 4> ch;
  ch << 1, 0, 0, 0, 0, 0, 1, 0;
  Mat<2, 4> cr;
  cr << 1, 0, 0, 0, 0, 1, 0, 0;
  EXPECT_EQ(HumanModel::selector_human(), ch);
  EXPECT_EQ(HumanModel::selector_robot(), cr);
  EXPECT_LT(max_real_eigenvalue(m.A - m.B * m.K), 0.0);
  EXPECT_LT((m.noise_factor * m.noise_factor.transpose() - m.Sigma).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(HumanModel, RejectsIndefiniteNoise) {
  HumanParams p;
  p.Sigma(1, 1) = -0.1;
  EXPECT_THROW(HumanModel::make(p), DomainError);
}

TEST(HumanControl, AtSetpointWithoutRepulsion) {
  HumanParams p;
  p.gamma_rep = 0.0;
  const auto m = HumanModel::make(p);
  const Goal goal{2.0, -1.0};
  const HumanState at_goal{2.0, 0.0, -1.0, 0.0};
  EXPECT_EQ(human_control(at_goal, {9.0, 9.0, 0.0, 0.0}, goal, m), Vec2::Zero());

  const HumanState generic{0.3, -0.2, 1.5, 0.7};
  const Vec2 expected = -m.K * (generic.to_vector() - goal.state());
  EXPECT_EQ(human_control(generic, {9.0, 9.0, 1.0, 0.0}, goal, m), expected);
}

TEST(HumanControl, UnitRepulsionAwayFromRobot) {
  HumanModel m = default_model();
  m.K.setZero();
  m.gamma_rep = 1.0;
  const Vec2 u = human_control({0.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}, Goal{}, m);
  EXPECT_NEAR(u(0), -1.0, 1e-15);
  EXPECT_NEAR(u(1), 0.0, 1e-15);
}

TEST(HumanControl, CoincidentAgentsUseDistanceFloor) {
  HumanModel m = default_model();
  m.K.setZero();
  const Vec2 u = human_control({1.0, 0.0, 1.0, 0.0}, {1.0, 1.0, 0.0, 0.0}, Goal{}, m);
  EXPECT_TRUE(u.allFinite());
  EXPECT_EQ(u, Vec2::Zero());
  const Vec2 close = human_control({1.0, 0.0, 1.0, 0.0}, {1.0 + 1e-6, 1.0, 0.0, 0.0}, Goal{}, m);
  EXPECT_NEAR(close.norm(), m.gamma_rep / (kDistanceFloor * kDistanceFloor) * 1e-6, 1e-6);
}

TEST(HumanMeanDrift, Structure) {
  HumanParams p;
  p.gamma_rep = 0.0;
  const auto m = HumanModel::make(p);
  EXPECT_EQ(human_mean_drift({0, 0, 0, 0}, {50.0, 50.0, 0.0, 0.0}, Goal{}, m), Vec4::Zero());

  const auto full = default_model();
  const HumanState xh{0.4, -1.2, 2.0, 0.3};
  const RobotState xr{1.0, 1.0, 0.5, 0.2};
  const Goal goal{-3.0, 2.0};
  const Vec4 drift = human_mean_drift(xh, xr, goal, full);
  EXPECT_EQ(drift(0), xh.vx);
  EXPECT_EQ(drift(2), xh.vy);
  const Vec2 u = human_control(xh, xr, goal, full);
  EXPECT_EQ(drift(1), u(0));
  EXPECT_EQ(drift(3), u(1));
}

TEST(JointMode, RobotBlockIsModeIndependent) {
  const auto m = default_model();
  const JointState x{{0.5, -2.0, 1.3, 0.8}, {2.0, 0.1, 1.0, -0.4}};
  const GoalSet goals{{3.0, 3.0}, {-4.0, 1.0}, {0.0, -4.0}};
  const Vec8 m0 = joint_mode_mean(x, goals[0], m);
  for (const auto& g : goals) {
    const Vec8 mi = joint_mode_mean(x, g, m);
    EXPECT_EQ(mi.head<4>(), m0.head<4>());
    EXPECT_EQ(mi.head<4>(), robot_drift(x.robot));
    EXPECT_EQ(mi.tail<4>(), human_mean_drift(x.human, x.robot, g, m));
    const Mat8 s = joint_mode_covariance(x, g, m);
    EXPECT_EQ((s.topLeftCorner<4, 4>()), Mat4::Zero());
    EXPECT_EQ(s, s.transpose());
  }
}

TEST(JointMode, StationaryEquilibriumAndIdentityCovariance) {
  HumanParams p;
  p.gamma_rep = 0.0;
  p.Sigma = Mat4::Identity();
  const auto m = HumanModel::make(p);
  const JointState x{{9.0, 9.0, 0.0, 1.0}, {1.0, 0.0, 2.0, 0.0}};
  EXPECT_EQ(joint_mode_mean(x, Goal{1.0, 2.0}, m), Vec8::Zero());
  const auto eig = Eigen::SelfAdjointEigenSolver<Mat8>(joint_mode_covariance(x, Goal{}, m)).eigenvalues();
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(eig(i), 0.0, 1e-15);
  for (int i = 4; i < 8; ++i) EXPECT_NEAR(eig(i), 1.0, 1e-15);
}

TEST(StepJoint, NoiseFreeIsPureRk4AndReproducible) {
  HumanParams p;
  p.Sigma.setZero();
  const auto m = HumanModel::make(p);
  const JointState x{{0.0, 0.0, 1.0, 0.3}, {3.0, 0.0, -1.0, 0.5}};
  const Vec2 u(0.5, -0.2);
  const Goal goal{-2.0, 2.0};

  std::mt19937_64 rng_a(5), rng_b(5);
  const JointState a = step_joint(x, u, goal, m, 0.1, rng_a);
  const JointState b = step_joint(x, u, goal, m, 0.1, rng_b);
  EXPECT_EQ(a.to_vector(), b.to_vector());

  auto f = [&](double, const Vec8& s) { return joint_derivative(JointState::from_vector(s), u, goal, m); };
  EXPECT_EQ(a.to_vector(), rk4_step(f, x.to_vector(), 0.0, 0.1));
}

TEST(StepJoint, SeededTrajectoriesAreIdentical) {
  const auto m = default_model();
  auto roll = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    JointState x{{0.0, 0.0, 0.0, 0.0}, {3.0, 0.0, 3.0, 0.0}};
    for (int i = 0; i < 50; ++i) x = step_joint(x, Vec2(0.1, 0.1), Goal{-3.0, 1.0}, m, 0.1, rng);
    return x.to_vector();
  };
  EXPECT_EQ(roll(42), roll(42));
  EXPECT_NE(roll(42), roll(43));
}

TEST(StepJoint, NoiseCovarianceMatchesSigmaDt) {
  // Zero drift: human at rest at its goal, no repulsion, robot far away.
  HumanParams p;
  p.gamma_rep = 0.0;
  p.Sigma << 0.2, 0.05, 0.0, 0.0,
             0.05, 0.1, 0.0, 0.02,
             0.0, 0.0, 0.3, 0.0,
             0.0, 0.02, 0.0, 0.1;
  const auto m = HumanModel::make(p);
  const double dt = 0.1;
  const JointState x{{100.0, 100.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}};
  std::mt19937_64 rng(2024);
  constexpr int kSamples = 100000;
  Mat4 cov = Mat4::Zero();
  for (int i = 0; i < kSamples; ++i) {
    const Vec4 inc = step_joint(x, Vec2::Zero().eval(), Goal{}, m, dt, rng).human.to_vector();
    cov += inc * inc.transpose();
  }
  cov /= kSamples;
  const Mat4 expected = p.Sigma * dt;
  EXPECT_LT((cov - expected).norm() / expected.norm(), 0.05);
}

TEST(StepJoint, HalvingStepAgreesToFourthOrder) {
  HumanParams p;
  p.Sigma.setZero();
  const auto m = HumanModel::make(p);
  const JointState x0{{0.0, 0.0, 1.0, 0.3}, {4.0, 0.0, -2.0, 0.5}};
  const Vec2 u(0.4, 0.1);
  const Goal goal{-1.0, 3.0};
  auto integrate = [&](double dt, int steps) {
    std::mt19937_64 rng(0);
    JointState x = x0;
    for (int i = 0; i < steps; ++i) x = step_joint(x, u, goal, m, dt, rng);
    return x.to_vector();
  };
  const double coarse = (integrate(0.1, 10) - integrate(0.05, 20)).cwiseAbs().maxCoeff();
  const double fine = (integrate(0.05, 20) - integrate(0.025, 40)).cwiseAbs().maxCoeff();
  EXPECT_LT(coarse, 1e-3);
  EXPECT_GT(coarse / fine, 12.0);
}

TEST(HumanClosedLoop, ConvergesToGoalWithoutNoiseOrRepulsion) {
  HumanParams p;
  p.Sigma.setZero();
  p.gamma_rep = 0.0;
  const auto m = HumanModel::make(p);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(-5.0, 5.0), vel(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    JointState x{{100.0, 100.0, 0.0, 0.0}, {pos(rng), vel(rng), pos(rng), vel(rng)}};
    const Goal goal{pos(rng), pos(rng)};
    for (int i = 0; i < 250; ++i) x = step_joint(x, Vec2::Zero().eval(), goal, m, 0.1, rng);
    EXPECT_LT((x.human.to_vector() - goal.state()).norm(), 0.05);
  }
}

}  // namespace
}  // namespace mmsafe
