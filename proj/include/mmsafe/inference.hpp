#pragma once

// Boltzmann-rational goal inference for the LQR human. The action-value is the
// negative LQR cost-to-go of the discretized human, which makes the action
// normalizer a Gaussian integral with a closed form.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mmsafe/allocation.hpp"
#include "mmsafe/dynamics.hpp"
#include "mmsafe/errors.hpp"
#include "mmsafe/numerics.hpp"

namespace mmsafe {

struct BoltzmannModel {
  double beta = 0.5;
  Mat4 A;  // discretized human drift
  Mat<4, 2> B;
  Mat4 Q;
  Mat2 R;
  Mat4 P;  // DARE solution; goal independent
  double log_normalizer_const = 0.0;  // 1/2 [m log 2 pi - log det(2 beta (R + B^T P B))]

  static BoltzmannModel make(const HumanModel& human, double dt, double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("beta must be positive");
    BoltzmannModel m;
    m.beta = beta;
    const auto disc = discretize_zoh<4, 2>(human.A, human.B, dt);
    m.A = disc.A;
    m.B = disc.B;
    m.Q = human.Q;
    m.R = human.R;
    m.P = solve_dare<4, 2>(m.A, m.B, m.Q, m.R);
    const Mat2 curvature = 2.0 * beta * (m.R + m.B.transpose() * m.P * m.B);
    const double det = curvature.determinant();
    if (!(det > 0.0)) throw DomainError("Boltzmann normalizer: R + B^T P B not positive definite");
    m.log_normalizer_const = 0.5 * (2.0 * std::log(2.0 * std::numbers::pi) - std::log(det));
    return m;
  }

  /// Discrete LQR action, the maximizer of q_value over u.
  Vec2 lqr_action(const HumanState& xh, const Goal& goal) const {
    const Mat2 s = R + B.transpose() * P * B;
    return -s.ldlt().solve(B.transpose() * P * (A * xh.to_vector() - goal.state()));
  }
};

/// Q_H = r_H(x, u) - (x' - theta)^T P (x' - theta), r_H = -(x - theta)^T Q (x - theta) - u^T R u.
inline double q_value(const HumanState& xh, const Vec2& uh, const Goal& goal, const BoltzmannModel& m) {
  const Vec4 e = xh.to_vector() - goal.state();
  const Vec4 next = m.A * xh.to_vector() + m.B * uh - goal.state();
  return -e.dot(m.Q * e) - uh.dot(m.R * uh) - next.dot(m.P * next);
}

/// log of the integral of exp(beta Q_H) over u.
inline double log_normalizer(const HumanState& xh, const Goal& goal, const BoltzmannModel& m) {
  const Vec4 e = xh.to_vector() - goal.state();
  return -m.beta * e.dot(m.P * e) + m.log_normalizer_const;
}

inline double log_likelihood(const Vec2& uh, const HumanState& xh, const Goal& goal,
                             const BoltzmannModel& m) {
  return m.beta * q_value(xh, uh, goal, m) - log_normalizer(xh, goal, m);
}

struct BayesResult {
  ModeBelief posterior;
  bool underflow = false;  // no finite posterior mass; prior returned unchanged
};

/// One Bayes step over the goal set, in log space with max subtraction.
inline BayesResult bayes_update(const ModeBelief& prior, const HumanState& xh, const Vec2& uh,
                                const GoalSet& goals, const BoltzmannModel& m) {
  if (static_cast<int>(goals.size()) != prior.size())
    throw DomainError("bayes_update: belief size does not match the goal set");
  const int n = prior.size();
  Eigen::VectorXd log_post(n);
  double top = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    log_post(i) = prior[i] > 0.0 ? std::log(prior[i]) + log_likelihood(uh, xh, goals[i], m)
                                 : -std::numeric_limits<double>::infinity();
    if (log_post(i) > top) top = log_post(i);
  }
  if (!std::isfinite(top)) return {prior, true};
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = std::exp(log_post(i) - top);
  const double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) return {prior, true};
  return {ModeBelief(w / total), false};
}

}  // namespace mmsafe
