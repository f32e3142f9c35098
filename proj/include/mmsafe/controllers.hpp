#pragma once

// Nominal goal-seeking control, the SEA / N-MMSSA / O-MMSSA constraint
// assemblers, exact projection onto {L u <= S} intersected with the actuation
// box, and the safe-set area metric.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmsafe/allocation.hpp"
#include "mmsafe/dynamics.hpp"
#include "mmsafe/errors.hpp"
#include "mmsafe/safety.hpp"

namespace mmsafe {

/// (v_R dot, psi_R dot).
using ControlInput = Vec2;

struct NominalGains {
  double k_v = 1.0;
  double k_psi = 2.0;
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= std::numbers::pi;
  return w == -std::numbers::pi ? std::numbers::pi : w;
}

/// Lyapunov-based unicycle controller towards goal (g_x, g_y).
inline ControlInput nominal_control(const RobotState& xr, const Vec2& goal, const NominalGains& gains) {
  const double dx = xr.rx - goal(0);
  const double dy = xr.ry - goal(1);
  if (dx == 0.0 && dy == 0.0) return ControlInput::Zero();
  const double accel = -(dx * std::cos(xr.psi) + dy * std::sin(xr.psi)) - gains.k_v * xr.v;
  const double bearing = std::atan2(-dy, -dx);
  const double steer = gains.k_psi * wrap_angle(bearing - xr.psi);
  return {accel, steer};
}

enum class Method { Sea, NaiveMmssa, OptimalMmssa };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::Sea: return "sea";
    case Method::NaiveMmssa: return "nmmssa";
    case Method::OptimalMmssa: return "ommssa";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view name) {
  if (name == "sea") return Method::Sea;
  if (name == "nmmssa") return Method::NaiveMmssa;
  if (name == "ommssa") return Method::OptimalMmssa;
  return std::nullopt;
}

struct SafeControlSettings {
  double eps = 0.003;
  double u_max = 30.0;
  bool k_round_up = true;  // naive and SEA multipliers rounded up to an integer (k = 3 at eps = 0.003)
  AllocatorOptions allocator;
};

/// Everything about a state that the three methods share.
struct ModeAnalysis {
  double phi = 0.0;
  Vec8 grad = Vec8::Zero();
  Vec2 L = Vec2::Zero();
  std::vector<ModeTerms> terms;
};

inline ModeAnalysis analyze_modes(const JointState& x, const GoalSet& goals, const HumanModel& model,
                                  const SafetyParams& p) {
  if (goals.empty()) throw DomainError("analyze_modes: empty goal set");
  ModeAnalysis a;
  a.phi = phi(x, p);
  a.grad = grad_phi(x, p);
  a.L = (a.grad.head<4>().transpose() * robot_input_matrix(x.robot)).transpose();
  a.terms.reserve(goals.size());
  for (const auto& g : goals) a.terms.push_back(mode_terms(x, a.grad, g, model));
  return a;
}

struct ConstraintChoice {
  HalfspaceConstraint constraint;
  KAllocation allocation;
};

namespace detail {

inline void require_matching(const ModeAnalysis& a, const ModeBelief& belief) {
  if (static_cast<int>(a.terms.size()) != belief.size())
    throw DomainError("belief size does not match the goal set");
}

inline double min_bound(const ModeAnalysis& a, const Eigen::VectorXd& k, double eta) {
  double s = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.terms.size(); ++i)
    s = std::min(s, eta - a.terms[i].mu(k(static_cast<Eigen::Index>(i))));
  return s;
}

}  // namespace detail

/// Robustifies only the most likely mode.
inline ConstraintChoice sea_constraint(const ModeAnalysis& a, const ModeBelief& belief,
                                       const SafetyParams& p, const SafeControlSettings& s) {
  detail::require_matching(a, belief);
  const int top = belief.argmax();
  const double k = naive_allocate(ModeBelief{1.0}, s.eps, s.k_round_up).k(0);
  ConstraintChoice out;
  out.allocation.k = Eigen::VectorXd::Zero(belief.size());
  out.allocation.k(top) = k;
  out.allocation.feasibility_slack = chance_level(belief, out.allocation.k) - (1.0 - s.eps);
  out.constraint = {a.L, p.eta() - a.terms[top].mu(k)};
  return out;
}

/// Uniform k for every mode; the most conservative bound wins.
inline ConstraintChoice nmmssa_constraint(const ModeAnalysis& a, const ModeBelief& belief,
                                          const SafetyParams& p, const SafeControlSettings& s) {
  detail::require_matching(a, belief);
  ConstraintChoice out;
  out.allocation = naive_allocate(belief, s.eps, s.k_round_up);
  out.constraint = {a.L, detail::min_bound(a, out.allocation.k, p.eta())};
  return out;
}

/// Spread-minimizing k per mode, then the most conservative bound.
inline ConstraintChoice ommssa_constraint(const ModeAnalysis& a, const ModeBelief& belief,
                                          const SafetyParams& p, const SafeControlSettings& s) {
  detail::require_matching(a, belief);
  KAllocation alloc = optimal_allocate(a.terms, belief, s.eps, s.allocator);
  if (alloc.fell_back) {
    alloc = naive_allocate(belief, s.eps, s.k_round_up);
    alloc.fell_back = true;
  }
  ConstraintChoice out;
  out.allocation = alloc;
  out.constraint = {a.L, detail::min_bound(a, alloc.k, p.eta())};
  return out;
}

inline ConstraintChoice method_constraint(Method m, const ModeAnalysis& a, const ModeBelief& belief,
                                          const SafetyParams& p, const SafeControlSettings& s) {
  switch (m) {
    case Method::Sea: return sea_constraint(a, belief, p, s);
    case Method::NaiveMmssa: return nmmssa_constraint(a, belief, p, s);
    case Method::OptimalMmssa: return ommssa_constraint(a, belief, p, s);
  }
  throw DomainError("unknown method");
}

// ---------------------------------------------------------------------------
// Control-space geometry
// ---------------------------------------------------------------------------

/// Counter-clockwise polygon {L u <= S} cut from the box [-u_max, u_max]^2 (empty if disjoint).
inline std::vector<Vec2> clip_box(const HalfspaceConstraint& c, double u_max) {
  const std::vector<Vec2> box = {{-u_max, -u_max}, {u_max, -u_max}, {u_max, u_max}, {-u_max, u_max}};
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < box.size(); ++i) {
    const Vec2& from = box[i];
    const Vec2& to = box[(i + 1) % box.size()];
    const double f_from = c.L.dot(from) - c.S;
    const double f_to = c.L.dot(to) - c.S;
    if (f_from <= 0.0) out.push_back(from);
    if ((f_from < 0.0 && f_to > 0.0) || (f_from > 0.0 && f_to < 0.0)) {
      const double t = f_from / (f_from - f_to);
      out.push_back(from + t * (to - from));
    }
  }
  return out;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    twice += a(0) * b(1) - a(1) * b(0);
  }
  return 0.5 * std::abs(twice);
}

/// Area of {u : L u <= S} within the actuation box (rad m / s^2).
inline double safe_set_area(const HalfspaceConstraint& c, double u_max) {
  return polygon_area(clip_box(c, u_max));
}

struct Projection {
  ControlInput u = ControlInput::Zero();
  bool feasible = true;  // false: safe set empty, u is the box point minimizing L u
};

inline Vec2 clamp_box(const Vec2& u, double u_max) { return u.cwiseMax(-u_max).cwiseMin(u_max); }

/// argmin ||u - u_ref||^2 over {L u <= S} and the box.
inline Projection project_to_safe(const ControlInput& u_ref, const HalfspaceConstraint& c, double u_max) {
  if (!c.L.allFinite() || !std::isfinite(c.S)) throw DomainError("project_to_safe: non-finite constraint");
  if (!(u_max > 0.0)) throw DomainError("project_to_safe: u_max must be positive");

  const std::vector<Vec2> poly = clip_box(c, u_max);
  if (poly.empty()) {
    Projection out;
    out.feasible = false;
    const Vec2 clamped = clamp_box(u_ref, u_max);
    for (int i = 0; i < 2; ++i)
      out.u(i) = c.L(i) > 0.0 ? -u_max : (c.L(i) < 0.0 ? u_max : clamped(i));
    return out;
  }

  const Vec2 clamped = clamp_box(u_ref, u_max);
  if (clamped == u_ref && c.contains(u_ref)) return {u_ref, true};

  // Outside the convex polygon: the nearest point lies on its boundary.
  Vec2 best = poly.front();
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const Vec2 edge = b - a;
    const double len2 = edge.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((u_ref - a).dot(edge) / len2, 0.0, 1.0) : 0.0;
    const Vec2 candidate = a + t * edge;
    const double dist = (candidate - u_ref).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = candidate;
    }
  }
  return {best, true};
}

struct SafeControlResult {
  ControlInput u = ControlInput::Zero();
  bool active = false;    // phi >= 0, projection applied
  bool feasible = true;   // safe set non-empty within the box
  double phi = 0.0;
  HalfspaceConstraint constraint;
  KAllocation allocation;
  double area = 0.0;
};

/// Switching law: project u_ref onto the method's safe set when phi >= 0, else pass it through (clamped).
inline SafeControlResult safe_control(const JointState& x, const ModeBelief& belief, const GoalSet& goals,
                                      const ControlInput& u_ref, Method method, const HumanModel& model,
                                      const SafetyParams& p, const SafeControlSettings& s) {
  const ModeAnalysis a = analyze_modes(x, goals, model, p);
  ConstraintChoice choice = method_constraint(method, a, belief, p, s);

  SafeControlResult out;
  out.phi = a.phi;
  out.constraint = choice.constraint;
  out.allocation = std::move(choice.allocation);
  out.area = safe_set_area(out.constraint, s.u_max);
  out.active = a.phi >= 0.0;
  if (out.active) {
    const Projection proj = project_to_safe(u_ref, out.constraint, s.u_max);
    out.u = proj.u;
    out.feasible = proj.feasible;
  } else {
    out.u = clamp_box(u_ref, s.u_max);
    out.feasible = out.area > 0.0 || !clip_box(out.constraint, s.u_max).empty();
  }
  return out;
}

}  // namespace mmsafe
