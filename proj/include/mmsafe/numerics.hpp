#pragma once

// Small dense numerical kernels: normal CDF, RK4, Riccati solvers, and
// zero-order-hold discretization. Everything here is a pure function.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mmsafe/errors.hpp"

namespace mmsafe {

template <int Rows, int Cols>
using Mat = Eigen::Matrix<double, Rows, Cols>;
template <int Rows>
using Vec = Eigen::Matrix<double, Rows, 1>;
template <int Cols>
using RowVec = Eigen::Matrix<double, 1, Cols>;

using Vec2 = Vec<2>;
using Vec4 = Vec<4>;
using Vec8 = Vec<8>;
using Mat2 = Mat<2, 2>;
using Mat4 = Mat<4, 4>;
using Mat8 = Mat<8, 8>;

namespace detail {

inline bool all_finite(double x) { return std::isfinite(x); }

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* name) {
  if (!m.allFinite()) throw DomainError(std::string(name) + " has non-finite entries");
}

template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

template <class Derived>
void require_symmetric_psd(const Eigen::MatrixBase<Derived>& m, const char* name, bool strict) {
  require_finite(m, name);
  const double scale = std::max(1.0, max_abs(m));
  if (detail::max_abs(m - m.transpose()) > 1e-12 * scale)
    throw DomainError(std::string(name) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.template cast<double>().eval());
  const double min_eig = es.eigenvalues().minCoeff();
  if (strict ? (min_eig <= 0.0) : (min_eig < -1e-12 * scale))
    throw DomainError(std::string(name) + (strict ? " is not positive definite"
                                                  : " is not positive semidefinite"));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Standard normal distribution
// ---------------------------------------------------------------------------

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

/// One-sided standard normal CDF, Phi(z).
inline double std_normal_cdf(double z) {
  if (!std::isfinite(z)) throw DomainError("std_normal_cdf: non-finite argument");
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/// Inverse of std_normal_cdf on (0, 1), by safeguarded Newton inside a bisection bracket.
inline double std_normal_cdf_inv(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("std_normal_cdf_inv: p must lie in (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  double z = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double f = std_normal_cdf(z) - p;
    if (f == 0.0) return z;
    if (f > 0.0)
      hi = z;
    else
      lo = z;
    if (hi - lo < 1e-10) break;
    const double slope = std_normal_pdf(z);
    double next = slope > 0.0 ? z - f / slope : 0.5 * (lo + hi);
    if (!(next >= lo && next <= hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) < 1e-15 * std::max(1.0, std::abs(z))) {
      z = next;
      break;
    }
    z = next;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// One classical fourth-order Runge-Kutta step of dx/dt = derivative(t, x).
template <class State, class Derivative>
State rk4_step(Derivative&& derivative, const State& x, double t, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("rk4_step: dt must be positive");
  auto checked = [&](double at, const State& v) -> State {
    if (!detail::all_finite(v)) throw IntegrationError("rk4_step: non-finite derivative", at);
    return v;
  };
  const double half = 0.5 * dt;
  const State k1 = checked(t, derivative(t, x));
  const State k2 = checked(t + half, derivative(t + half, State(x + half * k1)));
  const State k3 = checked(t + half, derivative(t + half, State(x + half * k2)));
  const State k4 = checked(t + dt, derivative(t + dt, State(x + dt * k3)));
  State next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!detail::all_finite(next)) throw IntegrationError("rk4_step: non-finite state", t + dt);
  return next;
}

// ---------------------------------------------------------------------------
// Matrix exponential and zero-order hold
// ---------------------------------------------------------------------------

/// exp(M) by scaling and squaring of a truncated Taylor series.
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& m) {
  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd scaled = m / std::ldexp(1.0, squarings);

  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  Eigen::MatrixXd term = result;
  for (int k = 1; k <= 30; ++k) {
    term = (term * scaled) / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-20) break;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

template <int N, int M>
struct DiscreteSystem {
  Mat<N, N> A;
  Mat<N, M> B;
};

/// Exact zero-order-hold discretization: A~ = exp(A dt), B~ = int_0^dt exp(A s) ds B.
template <int N, int M>
DiscreteSystem<N, M> discretize_zoh(const Mat<N, N>& a, const Mat<N, M>& b, double dt) {
  if (!(dt > 0.0)) throw DomainError("discretize_zoh: dt must be positive");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  Eigen::MatrixXd augmented = Eigen::MatrixXd::Zero(n + m, n + m);
  augmented.topLeftCorner(n, n) = a * dt;
  augmented.topRightCorner(n, m) = b * dt;
  const Eigen::MatrixXd e = matrix_exponential(augmented);
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

// ---------------------------------------------------------------------------
// Riccati equations
// ---------------------------------------------------------------------------

template <int N, int M>
Mat<N, N> dare_residual(const Mat<N, N>& a, const Mat<N, M>& b, const Mat<N, N>& q,
                        const Mat<M, M>& r, const Mat<N, N>& p) {
  const Mat<M, M> s = r + b.transpose() * p * b;
  const Mat<M, N> bpa = b.transpose() * p * a;
  return a.transpose() * p * a - bpa.transpose() * s.ldlt().solve(bpa) + q - p;
}

/// Stabilizing solution of the discrete algebraic Riccati equation, by fixed-point
/// iteration of the Riccati recursion from P = Q.
template <int N, int M>
Mat<N, N> solve_dare(const Mat<N, N>& a, const Mat<N, M>& b, const Mat<N, N>& q,
                     const Mat<M, M>& r) {
  detail::require_finite(a, "A");
  detail::require_finite(b, "B");
  detail::require_symmetric_psd(q, "Q", false);
  detail::require_symmetric_psd(r, "R", true);

  constexpr int kMaxIterations = 100000;
  constexpr double kStepTolerance = 1e-10;
  Mat<N, N> p = q;
  double step = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < kMaxIterations && step >= kStepTolerance; ++iter) {
    const Mat<M, M> s = r + b.transpose() * p * b;
    const Mat<M, N> bpa = b.transpose() * p * a;
    Mat<N, N> next = a.transpose() * p * a - bpa.transpose() * s.ldlt().solve(bpa) + q;
    next = 0.5 * (next + next.transpose()).eval();
    if (!next.allFinite()) break;
    step = detail::max_abs(next - p);
    p = next;
  }
  const double residual = detail::max_abs(dare_residual(a, b, q, r, p));
  if (!(residual < 1e-8)) throw SolverError("solve_dare: did not converge", residual);
  return p;
}

/// Solves A^T X + X A + C = 0 for X.
inline Eigen::MatrixXd solve_continuous_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd at = a.transpose();
  Eigen::MatrixXd kron = Eigen::MatrixXd::Zero(n * n, n * n);
  // vec(A^T X) = (I kron A^T) vec X, vec(X A) = (A^T kron I) vec X (column-major vec).
  for (Eigen::Index i = 0; i < n; ++i) {
    kron.block(i * n, i * n, n, n) += at;
    for (Eigen::Index j = 0; j < n; ++j)
      kron.block(i * n, j * n, n, n) += at(i, j) * Eigen::MatrixXd::Identity(n, n);
  }
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(c.data(), n * n);
  const Eigen::VectorXd x = kron.fullPivLu().solve(rhs);
  Eigen::MatrixXd out = Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n);
  return 0.5 * (out + out.transpose());
}

template <int N, int M>
Mat<N, N> care_residual(const Mat<N, N>& a, const Mat<N, M>& b, const Mat<N, N>& q,
                        const Mat<M, M>& r, const Mat<N, N>& p) {
  return a.transpose() * p + p * a - p * b * r.ldlt().solve(b.transpose() * p) + q;
}

template <class Derived>
double max_real_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(m.template cast<double>().eval(), false);
  return es.eigenvalues().real().maxCoeff();
}

template <int N, int M>
struct CareSolution {
  Mat<N, N> P;
  Mat<M, N> K;
};

/// Continuous-time LQR by Newton-Kleinman iteration, seeded with the gain of a
/// finely discretized problem.
template <int N, int M>
CareSolution<N, M> solve_care(const Mat<N, N>& a, const Mat<N, M>& b, const Mat<N, N>& q,
                              const Mat<M, M>& r) {
  detail::require_finite(a, "A");
  detail::require_finite(b, "B");
  detail::require_symmetric_psd(q, "Q", false);
  detail::require_symmetric_psd(r, "R", true);

  Mat<M, N> k = Mat<M, N>::Zero(b.cols(), a.rows());
  if (max_real_eigenvalue(a) >= 0.0) {
    bool seeded = false;
    for (double h : {0.1, 0.01, 0.001}) {
      const auto disc = discretize_zoh<N, M>(a, b, h);
      // Regularize Q so the discrete problem has a positive definite solution.
      const Mat<N, N> qh = (q + 1e-6 * Mat<N, N>::Identity(a.rows(), a.cols())) * h;
      const Mat<M, M> rh = r * h;
      Mat<N, N> pd;
      try {
        pd = solve_dare<N, M>(disc.A, disc.B, qh, rh);
      } catch (const SolverError&) {
        continue;
      }
      const Mat<M, M> s = rh + disc.B.transpose() * pd * disc.B;
      const Mat<M, N> cand = s.ldlt().solve(disc.B.transpose() * pd * disc.A);
      if (max_real_eigenvalue(a - b * cand) < 0.0) {
        k = cand;
        seeded = true;
        break;
      }
    }
    if (!seeded) throw SolverError("solve_care: no stabilizing seed gain", 0.0);
  }

  Mat<N, N> p = Mat<N, N>::Zero(a.rows(), a.cols());
  double change = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200 && change > 1e-13 * std::max(1.0, detail::max_abs(p)); ++iter) {
    const Mat<N, N> closed = a - b * k;
    const Mat<N, N> cost = q + k.transpose() * r * k;
    const Mat<N, N> next = solve_continuous_lyapunov(closed, cost);
    change = detail::max_abs(next - p);
    p = next;
    k = r.ldlt().solve(b.transpose() * p);
  }
  const double residual = detail::max_abs(care_residual<N, M>(a, b, q, r, p));
  if (!(residual < 1e-8)) throw SolverError("solve_care: did not converge", residual);
  if (!(max_real_eigenvalue(a - b * k) < 0.0))
    throw SolverError("solve_care: gain is not stabilizing", residual);
  return {p, k};
}

/// LQR gain K = R^-1 B^T P for the continuous Riccati solution P.
template <int N, int M>
Mat<M, N> solve_care_gain(const Mat<N, N>& a, const Mat<N, M>& b, const Mat<N, N>& q,
                          const Mat<M, M>& r) {
  return solve_care<N, M>(a, b, q, r).K;
}

}  // namespace mmsafe
