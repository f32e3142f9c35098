#pragma once

// Safety index phi = d_min^2 - d^2 - k_phi * d_dot over the joint state, its
// analytic gradients, and the half-space pieces L(x) u <= S(x).

#include <Eigen/Dense>

#include <cmath>

#include "mmsafe/dynamics.hpp"
#include "mmsafe/errors.hpp"
#include "mmsafe/numerics.hpp"

namespace mmsafe {

struct SafetyParams {
  double d_min = 1.0;  // m
  double k_phi = 1.0;  // s
  double eta0 = 0.5;   // 1/s

  /// Margin eta(phi); constant while the safety layer is engaged.
  double eta() const { return -eta0; }

  void validate() const {
    if (!(d_min > 0.0)) throw ConfigError("d_min must be positive");
    if (!(k_phi > 0.0)) throw ConfigError("k_phi must be positive");
    if (!(eta0 >= 0.0)) throw ConfigError("eta0 must be non-negative");
  }
};

/// L u <= S. L = 0 with S < 0 is infeasible; L = 0 with S >= 0 is vacuous.
struct HalfspaceConstraint {
  Vec2 L = Vec2::Zero();
  double S = 0.0;

  bool is_degenerate() const { return L(0) == 0.0 && L(1) == 0.0; }
  bool is_infeasible_marker() const { return is_degenerate() && S < 0.0; }
  bool is_vacuous_marker() const { return is_degenerate() && S >= 0.0; }
  bool contains(const Vec2& u, double tol = 0.0) const { return L.dot(u) <= S + tol; }
};

/// Relative position/velocity of robot w.r.t. human.
struct RelativeKinematics {
  Vec2 dp;  // C_R x_R - C_H x_H
  Vec2 dv;  // time derivative of dp
  double d = 0.0;
};

inline RelativeKinematics relative_kinematics(const JointState& x) {
  RelativeKinematics rel;
  rel.dp = x.robot.position() - x.human.position();
  rel.dv = x.robot.velocity() - x.human.velocity();
  rel.d = rel.dp.norm();
  if (!(rel.d > 0.0)) throw DegenerateStateError("agents coincide (d = 0)");
  return rel;
}

inline double phi(const JointState& x, const SafetyParams& p) {
  const auto rel = relative_kinematics(x);
  const double d_dot = rel.dp.dot(rel.dv) / rel.d;
  return p.d_min * p.d_min - rel.d * rel.d - p.k_phi * d_dot;
}

/// Gradient of phi w.r.t. the human block (h_x, v_x, h_y, v_y).
inline RowVec<4> grad_phi_human(const JointState& x, const SafetyParams& p) {
  const auto rel = relative_kinematics(x);
  const Mat<2, 4> ch = HumanModel::selector_human();
  const Mat<4, 2> b = HumanModel::input_matrix();
  const double d = rel.d;
  const double radial = rel.dp.dot(rel.dv);
  return 2.0 * rel.dp.transpose() * ch +
         p.k_phi * (rel.dv.transpose() * ch / d + rel.dp.transpose() * b.transpose() / d -
                    radial / (d * d * d) * rel.dp.transpose() * ch);
}

/// d(robot velocity)/d(x_R) for the unicycle.
inline Mat<2, 4> robot_velocity_jacobian(const RobotState& xr) {
  Mat<2, 4> v;
  v << 0, 0, std::cos(xr.psi), -xr.v * std::sin(xr.psi),
       0, 0, std::sin(xr.psi), xr.v * std::cos(xr.psi);
  return v;
}

/// Gradient of phi w.r.t. the robot block (r_x, r_y, v_R, psi_R).
inline RowVec<4> grad_phi_robot(const JointState& x, const SafetyParams& p) {
  const auto rel = relative_kinematics(x);
  const Mat<2, 4> cr = HumanModel::selector_robot();
  const Mat<2, 4> vj = robot_velocity_jacobian(x.robot);
  const double d = rel.d;
  const double radial = rel.dp.dot(rel.dv);
  return -2.0 * rel.dp.transpose() * cr -
         p.k_phi * (rel.dv.transpose() * cr / d + rel.dp.transpose() * vj / d -
                    radial / (d * d * d) * rel.dp.transpose() * cr);
}

/// Full gradient over the joint state, robot block first.
inline Vec8 grad_phi(const JointState& x, const SafetyParams& p) {
  Vec8 g;
  g << grad_phi_robot(x, p).transpose(), grad_phi_human(x, p).transpose();
  return g;
}

/// L(x) = grad_phi^T g(x); only the robot block of g is non-zero.
inline RowVec<2> constraint_row(const JointState& x, const SafetyParams& p) {
  return grad_phi_robot(x, p) * robot_input_matrix(x.robot);
}

/// Support function of the 1-sigma ellipsoid: max grad^T delta s.t. delta^T Sigma^-1 delta <= 1.
inline double gamma_robust(const Vec8& grad, const Mat8& sigma) {
  return std::sqrt(std::max(0.0, grad.dot(sigma * grad)));
}

inline double gamma_robust(const JointState& x, const Goal& goal, const HumanModel& model,
                           const SafetyParams& p) {
  return gamma_robust(grad_phi(x, p), joint_mode_covariance(x, goal, model));
}

/// Per-mode pieces of mu(x, theta, k) = drift + k * gamma.
struct ModeTerms {
  double drift = 0.0;  // grad_phi^T m(x, theta)
  double gamma = 0.0;  // gamma(x, theta)

  double mu(double k) const { return drift + k * gamma; }
};

inline ModeTerms mode_terms(const JointState& x, const Vec8& grad, const Goal& goal,
                            const HumanModel& model) {
  return {grad.dot(joint_mode_mean(x, goal, model)),
          gamma_robust(grad, joint_mode_covariance(x, goal, model))};
}

inline ModeTerms mode_terms(const JointState& x, const Goal& goal, const HumanModel& model,
                            const SafetyParams& p) {
  return mode_terms(x, grad_phi(x, p), goal, model);
}

inline double mode_mu(const JointState& x, const Goal& goal, double k, const HumanModel& model,
                      const SafetyParams& p) {
  if (!(k >= 0.0)) throw DomainError("mode_mu: k must be non-negative");
  return mode_terms(x, goal, model, p).mu(k);
}

/// S_i(x) = eta(phi) - grad_phi^T m(x, theta_i) - k_i gamma(x, theta_i).
inline double mode_bound(const JointState& x, const Goal& goal, double k, const HumanModel& model,
                         const SafetyParams& p) {
  return p.eta() - mode_mu(x, goal, k, model, p);
}

}  // namespace mmsafe
