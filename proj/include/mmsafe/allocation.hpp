#pragma once

// Per-mode sigma multipliers k_i meeting sum_i P(theta_i) Phi(k_i) >= 1 - eps.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mmsafe/errors.hpp"
#include "mmsafe/numerics.hpp"
#include "mmsafe/safety.hpp"

namespace mmsafe {

/// Discrete distribution over candidate human goals.
class ModeBelief {
 public:
  ModeBelief() : p_(Eigen::VectorXd::Ones(1)) {}

  explicit ModeBelief(Eigen::VectorXd probabilities) : p_(std::move(probabilities)) {
    if (p_.size() < 1) throw DomainError("ModeBelief: need at least one mode");
    if (!p_.allFinite() || (p_.array() < 0.0).any())
      throw DomainError("ModeBelief: probabilities must be finite and non-negative");
    if (std::abs(p_.sum() - 1.0) > 1e-9) throw DomainError("ModeBelief: probabilities must sum to 1");
  }

  ModeBelief(std::initializer_list<double> values)
      : ModeBelief(Eigen::Map<const Eigen::VectorXd>(values.begin(),
                                                     static_cast<Eigen::Index>(values.size()))) {}

  static ModeBelief uniform(int n) {
    if (n < 1) throw DomainError("ModeBelief: need at least one mode");
    return ModeBelief(Eigen::VectorXd::Constant(n, 1.0 / n));
  }

  int size() const { return static_cast<int>(p_.size()); }
  double operator[](int i) const { return p_(i); }
  const Eigen::VectorXd& values() const { return p_; }

  /// Most likely mode; ties resolve to the lowest index.
  int argmax() const {
    int best = 0;
    for (int i = 1; i < size(); ++i)
      if (p_(i) > p_(best)) best = i;
    return best;
  }

 private:
  Eigen::VectorXd p_;
};

struct KAllocation {
  Eigen::VectorXd k;
  double feasibility_slack = 0.0;  // chance_level - (1 - eps)
  bool fell_back = false;          // optimizer result rejected, naive allocation used
};

struct AllocatorOptions {
  double k_max = 6.0;
  double w_k = 1.0;                   // weight on ||k||_2 in the spread objective
  double zero_probability = 1e-12;    // modes below this are pinned to k = 0
};

inline void require_epsilon(double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw DomainError("epsilon must lie in (0, 0.5)");
}

inline double chance_level(const ModeBelief& belief, const Eigen::VectorXd& k) {
  if (k.size() != belief.size()) throw DomainError("chance_level: size mismatch");
  double total = 0.0;
  for (int i = 0; i < belief.size(); ++i) total += belief[i] * std_normal_cdf(k(i));
  return total;
}

/// Uniform k = Phi^-1(1 - eps) for every mode; optionally rounded up to an integer.
inline KAllocation naive_allocate(const ModeBelief& belief, double eps, bool round_up = false) {
  require_epsilon(eps);
  double k = std_normal_cdf_inv(1.0 - eps);
  if (round_up) k = std::ceil(k - 1e-12);
  KAllocation out;
  out.k = Eigen::VectorXd::Constant(belief.size(), k);
  out.feasibility_slack = chance_level(belief, out.k) - (1.0 - eps);
  return out;
}

/// max_ij (mu_i - mu_j) + w_k ||k||_2.
inline double allocation_objective(std::span<const ModeTerms> terms, const Eigen::VectorXd& k,
                                   double w_k = 1.0) {
  double hi = -std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double mu = terms[i].mu(k(static_cast<Eigen::Index>(i)));
    hi = std::max(hi, mu);
    lo = std::min(lo, mu);
  }
  return (hi - lo) + w_k * k.norm();
}

namespace detail {

// Log-barrier interior-point solve of
//   min t_hi - t_lo + w ||k||  s.t.  t_lo <= a_i + g_i k_i <= t_hi,
//   0 <= k_i <= k_max,  sum p_i Phi(k_i) >= level.
// Phi is concave on k >= 0, so the feasible set is convex.
class SpreadProgram {
 public:
  SpreadProgram(std::span<const ModeTerms> terms, const ModeBelief& belief, double level,
                const AllocatorOptions& opts)
      : terms_(terms), belief_(belief), level_(level), opts_(opts) {
    for (int i = 0; i < belief.size(); ++i) {
      slot_.push_back(belief[i] >= opts.zero_probability ? static_cast<int>(free_.size()) : -1);
      if (slot_.back() >= 0) free_.push_back(i);
    }
    nk_ = static_cast<int>(free_.size());
    n_ = nk_ + 2;
    constraints_ = 2 * belief.size() + 2 * nk_ + 1;
  }

  int free_count() const { return nk_; }

  Eigen::VectorXd solve(double k_start) {
    Eigen::VectorXd z(n_);
    z.head(nk_).setConstant(k_start);
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (int i = 0; i < belief_.size(); ++i) {
      const double mu = terms_[i].mu(k_of(z, i));
      hi = std::max(hi, mu);
      lo = std::min(lo, mu);
    }
    z(nk_) = hi + 1.0;
    z(nk_ + 1) = lo - 1.0;

    double tau = 1.0;
    for (int outer = 0; outer < 40; ++outer) {
      center(z, tau);
      if (constraints_ / tau < 1e-10) break;
      tau *= 10.0;
    }
    Eigen::VectorXd k = Eigen::VectorXd::Zero(belief_.size());
    for (int j = 0; j < nk_; ++j) k(free_[j]) = z(j);
    return k;
  }

 private:
  double k_of(const Eigen::VectorXd& z, int mode) const {
    return slot_[mode] >= 0 ? z(slot_[mode]) : 0.0;
  }

  // Barrier-augmented objective; returns +inf outside the strict interior.
  double value(const Eigen::VectorXd& z, double tau) const {
    const auto k = z.head(nk_);
    double barrier = 0.0;
    for (int i = 0; i < belief_.size(); ++i) {
      const double mu = terms_[i].mu(k_of(z, i));
      const double upper = z(nk_) - mu;
      const double lower = mu - z(nk_ + 1);
      if (!(upper > 0.0 && lower > 0.0)) return std::numeric_limits<double>::infinity();
      barrier -= std::log(upper) + std::log(lower);
    }
    double chance = -level_;
    for (int j = 0; j < nk_; ++j) {
      if (!(k(j) > 0.0 && k(j) < opts_.k_max)) return std::numeric_limits<double>::infinity();
      barrier -= std::log(k(j)) + std::log(opts_.k_max - k(j));
      chance += belief_[free_[j]] * std_normal_cdf(k(j));
    }
    if (!(chance > 0.0)) return std::numeric_limits<double>::infinity();
    barrier -= std::log(chance);
    return tau * (z(nk_) - z(nk_ + 1) + opts_.w_k * k.norm()) + barrier;
  }

  void derivatives(const Eigen::VectorXd& z, double tau, Eigen::VectorXd& grad,
                   Eigen::MatrixXd& hess) const {
    grad.setZero(n_);
    hess.setZero(n_, n_);
    const Eigen::VectorXd k = z.head(nk_);
    const int hi = nk_;
    const int lo = nk_ + 1;

    grad(hi) += tau;
    grad(lo) -= tau;
    const double norm = k.norm();
    if (opts_.w_k > 0.0 && norm > 0.0) {
      grad.head(nk_) += tau * opts_.w_k * k / norm;
      hess.topLeftCorner(nk_, nk_) +=
          tau * opts_.w_k *
          (Eigen::MatrixXd::Identity(nk_, nk_) - k * k.transpose() / (norm * norm)) / norm;
    }

    // -log(s) for affine s with gradient a: grad -a/s, hessian a a^T / s^2.
    Eigen::VectorXd a(n_);
    auto add_affine = [&](double s) {
      grad -= a / s;
      hess += a * a.transpose() / (s * s);
    };
    for (int i = 0; i < belief_.size(); ++i) {
      const double mu = terms_[i].mu(k_of(z, i));
      a.setZero();
      a(hi) = 1.0;
      if (slot_[i] >= 0) a(slot_[i]) = -terms_[i].gamma;
      add_affine(z(hi) - mu);
      a.setZero();
      a(lo) = -1.0;
      if (slot_[i] >= 0) a(slot_[i]) = terms_[i].gamma;
      add_affine(mu - z(lo));
    }
    for (int j = 0; j < nk_; ++j) {
      a.setZero();
      a(j) = 1.0;
      add_affine(k(j));
      a(j) = -1.0;
      add_affine(opts_.k_max - k(j));
    }

    double chance = -level_;
    a.setZero();
    Eigen::VectorXd curvature = Eigen::VectorXd::Zero(n_);
    for (int j = 0; j < nk_; ++j) {
      const double p = belief_[free_[j]];
      chance += p * std_normal_cdf(k(j));
      a(j) = p * std_normal_pdf(k(j));
      curvature(j) = -p * k(j) * std_normal_pdf(k(j));
    }
    grad -= a / chance;
    hess += a * a.transpose() / (chance * chance);
    hess.diagonal() -= curvature / chance;
  }

  void center(Eigen::VectorXd& z, double tau) const {
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    for (int iter = 0; iter < 200; ++iter) {
      derivatives(z, tau, grad, hess);
      const Eigen::VectorXd step = -hess.ldlt().solve(grad);
      const double decrement = -grad.dot(step);
      if (!std::isfinite(decrement) || decrement <= 0.0 || decrement / 2.0 < 1e-14) return;
      const double f0 = value(z, tau);
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls, alpha *= 0.5) {
        const Eigen::VectorXd trial = z + alpha * step;
        if (value(trial, tau) <= f0 - 0.25 * alpha * decrement) {
          z = trial;
          moved = true;
          break;
        }
      }
      if (!moved) return;
    }
  }

  std::span<const ModeTerms> terms_;
  const ModeBelief& belief_;
  double level_;
  AllocatorOptions opts_;
  std::vector<int> free_;
  std::vector<int> slot_;
  int nk_ = 0;
  int n_ = 0;
  int constraints_ = 0;
};

}  // namespace detail

/// Spread-minimizing allocation. Starts from (just inside) the naive point and
/// falls back to the naive allocation if the result is infeasible or no better.
inline KAllocation optimal_allocate(std::span<const ModeTerms> terms, const ModeBelief& belief,
                                    double eps, const AllocatorOptions& opts = {}) {
  require_epsilon(eps);
  if (static_cast<int>(terms.size()) != belief.size())
    throw DomainError("optimal_allocate: one ModeTerms per mode required");
  for (const auto& t : terms)
    if (!(t.gamma >= 0.0) || !std::isfinite(t.drift))
      throw DomainError("optimal_allocate: gamma must be non-negative and drift finite");

  const double k_naive = std_normal_cdf_inv(1.0 - eps);
  if (!(k_naive < opts.k_max)) throw DomainError("optimal_allocate: epsilon too small for k_max");
  KAllocation naive = naive_allocate(belief, eps);
  const double naive_objective = allocation_objective(terms, naive.k, opts.w_k);

  KAllocation out;
  try {
    detail::SpreadProgram program(terms, belief, 1.0 - eps, opts);
    const double k_start =
        std::min(std_normal_cdf_inv(1.0 - 0.5 * eps), 0.5 * (k_naive + opts.k_max));
    out.k = program.solve(k_start);
  } catch (const Error&) {
    naive.fell_back = true;
    return naive;
  }
  out.feasibility_slack = chance_level(belief, out.k) - (1.0 - eps);
  const bool valid = out.k.allFinite() && out.feasibility_slack >= -1e-8 &&
                     allocation_objective(terms, out.k, opts.w_k) <= naive_objective + 1e-8;
  if (!valid) {
    naive.fell_back = true;
    return naive;
  }
  return out;
}

inline KAllocation optimal_allocate(const std::vector<ModeTerms>& terms, const ModeBelief& belief,
                                    double eps, const AllocatorOptions& opts = {}) {
  return optimal_allocate(std::span<const ModeTerms>(terms), belief, eps, opts);
}

}  // namespace mmsafe
