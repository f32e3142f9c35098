#pragma once

// Robot unicycle, noisy double-integrator human with LQR-plus-repulsion
// control, and the joint multimodal system built from them.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "mmsafe/errors.hpp"
#include "mmsafe/numerics.hpp"

namespace mmsafe {

/// Unicycle state (r_x, r_y, v_R, psi_R). Heading is kept unwrapped.
struct RobotState {
  double rx = 0.0;
  double ry = 0.0;
  double v = 0.0;
  double psi = 0.0;

  Vec4 to_vector() const { return {rx, ry, v, psi}; }
  static RobotState from_vector(const Vec4& s) { return {s(0), s(1), s(2), s(3)}; }
  Vec2 position() const { return {rx, ry}; }
  Vec2 velocity() const { return {v * std::cos(psi), v * std::sin(psi)}; }
};

/// Double-integrator state in interleaved order (h_x, v_x, h_y, v_y).
struct HumanState {
  double hx = 0.0;
  double vx = 0.0;
  double hy = 0.0;
  double vy = 0.0;

  Vec4 to_vector() const { return {hx, vx, hy, vy}; }
  static HumanState from_vector(const Vec4& s) { return {s(0), s(1), s(2), s(3)}; }
  Vec2 position() const { return {hx, hy}; }
  Vec2 velocity() const { return {vx, vy}; }
};

struct JointState {
  RobotState robot;
  HumanState human;

  Vec8 to_vector() const {
    Vec8 out;
    out << robot.to_vector(), human.to_vector();
    return out;
  }
  static JointState from_vector(const Vec8& s) {
    return {RobotState::from_vector(s.head<4>()), HumanState::from_vector(s.tail<4>())};
  }
  /// Inter-agent distance; zero marks a degenerate (collided) state.
  double distance() const { return (robot.position() - human.position()).norm(); }
};

/// A candidate human intention: reach (x, y) and stop.
struct Goal {
  double x = 0.0;
  double y = 0.0;

  Vec4 state() const { return {x, 0.0, y, 0.0}; }
  Vec2 position() const { return {x, y}; }
  bool operator==(const Goal&) const = default;
};

using GoalSet = std::vector<Goal>;

/// Repulsion is evaluated with d clamped to this floor (metres).
inline constexpr double kDistanceFloor = 1e-3;

struct HumanParams {
  Mat4 Q = Vec4(1.0, 0.1, 1.0, 0.1).asDiagonal();
  Mat2 R = 0.1 * Mat2::Identity();
  double gamma_rep = 2.0;
  Mat4 Sigma = Vec4(0.0, 0.1, 0.0, 0.1).asDiagonal();
};

struct HumanModel {
  Mat4 A;
  Mat<4, 2> B;
  Mat<2, 4> K;
  Mat4 Q;
  Mat2 R;
  Mat4 Sigma;
  Mat4 noise_factor;  // F with F F^T = Sigma
  double gamma_rep = 0.0;

  static Mat<2, 4> selector_human() {
    Mat<2, 4> c;
    c << 1, 0, 0, 0,
         0, 0, 1, 0;
    return c;
  }
  static Mat<2, 4> selector_robot() {
    Mat<2, 4> c;
    c << 1, 0, 0, 0,
         0, 1, 0, 0;
    return c;
  }
  static Mat4 drift_matrix() {
    Mat4 a = Mat4::Zero();
    a(0, 1) = 1.0;
    a(2, 3) = 1.0;
    return a;
  }
  static Mat<4, 2> input_matrix() {
    Mat<4, 2> b = Mat<4, 2>::Zero();
    b(1, 0) = 1.0;
    b(3, 1) = 1.0;
    return b;
  }

  static HumanModel make(const HumanParams& params) {
    detail::require_symmetric_psd(params.Sigma, "Sigma_H", false);
    if (!std::isfinite(params.gamma_rep)) throw DomainError("gamma_rep must be finite");
    HumanModel m;
    m.A = drift_matrix();
    m.B = input_matrix();
    m.Q = params.Q;
    m.R = params.R;
    m.K = solve_care_gain<4, 2>(m.A, m.B, m.Q, m.R);
    m.Sigma = params.Sigma;
    Eigen::SelfAdjointEigenSolver<Mat4> es(params.Sigma);
    m.noise_factor = es.eigenvectors() *
                     es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    m.gamma_rep = params.gamma_rep;
    return m;
  }
};

inline Vec4 robot_drift(const RobotState& x) {
  return {x.v * std::cos(x.psi), x.v * std::sin(x.psi), 0.0, 0.0};
}

inline Mat<4, 2> robot_input_matrix(const RobotState&) {
  Mat<4, 2> g = Mat<4, 2>::Zero();
  g(2, 0) = 1.0;
  g(3, 1) = 1.0;
  return g;
}

/// u_H = -K (x_H - theta) + gamma_rep / d^2 (C_H x_H - C_R x_R), d clamped below at kDistanceFloor.
inline Vec2 human_control(const HumanState& xh, const RobotState& xr, const Goal& goal,
                          const HumanModel& model) {
  const Vec2 away = xh.position() - xr.position();
  const double d = std::max(away.norm(), kDistanceFloor);
  return -model.K * (xh.to_vector() - goal.state()) + (model.gamma_rep / (d * d)) * away;
}

inline Vec4 human_mean_drift(const HumanState& xh, const RobotState& xr, const Goal& goal,
                             const HumanModel& model) {
  return model.A * xh.to_vector() + model.B * human_control(xh, xr, goal, model);
}

/// m(x, theta): robot drift stacked over the human's noise-free dynamics.
inline Vec8 joint_mode_mean(const JointState& x, const Goal& goal, const HumanModel& model) {
  Vec8 m;
  m << robot_drift(x.robot), human_mean_drift(x.human, x.robot, goal, model);
  return m;
}

/// Sigma(x, theta) = blockdiag(0, Sigma_H).
inline Mat8 joint_mode_covariance(const JointState&, const Goal&, const HumanModel& model) {
  Mat8 s = Mat8::Zero();
  s.bottomRightCorner<4, 4>() = model.Sigma;
  return s;
}

/// Noise-free closed-loop derivative of the joint state under a held robot control.
inline Vec8 joint_derivative(const JointState& x, const Vec2& u_robot, const Goal& goal,
                             const HumanModel& model) {
  Vec8 dx = joint_mode_mean(x, goal, model);
  dx.head<4>() += robot_input_matrix(x.robot) * u_robot;
  return dx;
}

/// Advances the joint state by dt: RK4 on the mean dynamics with u_robot held,
/// then one Gaussian increment N(0, Sigma_H dt) on the human block. Always draws
/// four standard normals so random streams stay aligned across callers.
template <class Rng>
JointState step_joint(const JointState& x, const Vec2& u_robot, const Goal& true_goal,
                      const HumanModel& model, double dt, Rng& rng, double t = 0.0) {
  auto derivative = [&](double, const Vec8& s) {
    return joint_derivative(JointState::from_vector(s), u_robot, true_goal, model);
  };
  Vec8 next = rk4_step(derivative, x.to_vector(), t, dt);

  std::normal_distribution<double> normal(0.0, 1.0);
  Vec4 z;
  for (int i = 0; i < 4; ++i) z(i) = normal(rng);
  next.tail<4>() += std::sqrt(dt) * (model.noise_factor * z);
  if (!next.allFinite()) throw IntegrationError("step_joint: non-finite state", t + dt);
  return JointState::from_vector(next);
}

}  // namespace mmsafe
