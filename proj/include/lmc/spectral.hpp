#pragma once

// Pointwise spectral layer: symmetric eigen-decomposition, the Lagrangian
// phase sum(arctan lambda_i), criticality classification, elementary
// symmetric polynomials and the ordered-eigenvalue / conformality checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/linalg.hpp"

namespace lmc {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kCriticalityTolerance = 1e-9;

/// (n - 2) * pi / 2, the regularity threshold for the phase.
inline double critical_phase(std::size_t n) {
  return (static_cast<double>(n) - 2.0) * kPi / 2.0;
}

/// Dense symmetric matrix. Construction rejects any entry pair that is not
/// bitwise symmetric; use `symmetrized` to average a nearly symmetric input.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t n) : m_(n) {}
  SymMatrix(std::size_t n, std::vector<double> entries) : m_(n, std::move(entries)) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (!(m_(i, j) == m_(j, i)) && !(std::isnan(m_(i, j)) && std::isnan(m_(j, i))))
          throw InvalidInput("SymMatrix: entries are not symmetric");
  }

  static SymMatrix symmetrized(const Matrix& a) {
    SymMatrix s(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i; j < a.size(); ++j) s.set(i, j, 0.5 * (a(i, j) + a(j, i)));
    return s;
  }
  static SymMatrix identity(std::size_t n) {
    SymMatrix s(n);
    for (std::size_t i = 0; i < n; ++i) s.set(i, i, 1.0);
    return s;
  }
  static SymMatrix diagonal(std::span<const double> d) {
    SymMatrix s(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) s.set(i, i, d[i]);
    return s;
  }

  std::size_t size() const noexcept { return m_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  void set(std::size_t i, std::size_t j, double v) {
    m_(i, j) = v;
    m_(j, i) = v;
  }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

/// Eigenvalues sorted descending with the matching orthonormal eigenvectors
/// stored as the columns of `frame`.
struct Spectrum {
  Vec lambda;
  Matrix frame;

  std::size_t size() const noexcept { return lambda.size(); }

  /// frame * diag(lambda) * frame^T
  Matrix reconstruct() const {
    const std::size_t n = lambda.size();
    Matrix out(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += frame(i, k) * lambda[k] * frame(j, k);
        out(i, j) = s;
      }
    return out;
  }
};

/// Cyclic Jacobi rotations. Equal eigenvalues keep the order in which they
/// appear on the rotated diagonal.
inline Spectrum eigen_decompose(const SymMatrix& m) {
  const std::size_t n = m.size();
  if (!all_finite(m.matrix().entries()))
    throw InvalidInput("eigen_decompose: non-finite matrix entry");

  Matrix a = m.matrix();
  Matrix v = Matrix::identity(n);

  auto off_norm2 = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a(p, q) * a(p, q);
    return s;
  };
  double total2 = 0.0;
  for (double x : a.entries()) total2 += x * x;
  const double eps = std::numeric_limits<double>::epsilon();

  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = off_norm2();
    if (off == 0.0 || off <= eps * eps * 1e-4 * total2) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        if (sweep > 3 && std::abs(apq) <= 1e-2 * eps * std::min(std::abs(app), std::abs(aqq))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = a(p, r) = c * arp - s * arq;
          a(r, q) = a(q, r) = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  Spectrum out{Vec(n), Matrix(n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.lambda[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.frame(r, k) = v(r, order[k]);
  }
  return out;
}

/// Largest singular value of a general square matrix.
inline double operator_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  const Spectrum s = eigen_decompose(SymMatrix::symmetrized(a.transpose() * a));
  return std::sqrt(std::max(0.0, s.lambda.front()));
}

inline double operator_norm(const SymMatrix& a) {
  if (a.size() == 0) return 0.0;
  const Spectrum s = eigen_decompose(a);
  return std::max(std::abs(s.lambda.front()), std::abs(s.lambda.back()));
}

inline double lagrangian_phase(std::span<const double> lambda) {
  double theta = 0.0;
  for (double l : lambda) theta += std::atan(l);
  return theta;
}
inline double lagrangian_phase(const Spectrum& s) { return lagrangian_phase(s.lambda); }

enum class Regime { subcritical, critical, supercritical };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::subcritical: return "subcritical";
    case Regime::critical: return "critical";
    case Regime::supercritical: return "supercritical";
  }
  return "?";
}

struct PhaseRegime {
  Regime value;
  double margin;  // |theta| - (n-2)pi/2
};

/// Classifies |theta| against (n-2)pi/2. The classification and margin depend
/// only on |theta|, so theta and -theta land in the same regime.
inline PhaseRegime phase_regime(double theta, std::size_t n,
                                double tolerance = kCriticalityTolerance) {
  if (n == 0) throw InvalidInput("phase_regime: dimension must be >= 1");
  if (!std::isfinite(theta) || std::abs(theta) >= static_cast<double>(n) * kPi / 2.0)
    throw InvalidPhase("phase_regime: |theta| must be below n*pi/2");
  const double margin = std::abs(theta) - critical_phase(n);
  Regime r = Regime::subcritical;
  if (std::abs(margin) <= tolerance)
    r = Regime::critical;
  else if (margin > tolerance)
    r = Regime::supercritical;
  return {r, margin};
}

/// Coefficients of prod_i (1 + t lambda_i): out[k] = sigma_k, k = 0..n.
inline Vec elementary_symmetric(std::span<const double> lambda) {
  Vec c(lambda.size() + 1, 0.0);
  c[0] = 1.0;
  for (std::size_t i = 0; i < lambda.size(); ++i)
    for (std::size_t k = i + 1; k >= 1; --k) c[k] += lambda[i] * c[k - 1];
  return c;
}

/// k-th elementary symmetric polynomial; sigma_0 = 1 and sigma_k = 0 outside [0, n].
inline double sigma_k(std::span<const double> lambda, int k) {
  if (k < 0 || k > static_cast<int>(lambda.size())) return 0.0;
  return elementary_symmetric(lambda)[static_cast<std::size_t>(k)];
}

struct OrderedEigenReport {
  bool applicable = false;
  bool positivity = false;      // lambda_1 >= ... >= lambda_{n-1} > 0, lambda_{n-1} >= |lambda_n|
  bool balance = false;         // lambda_1 + (n-1) lambda_n >= 0
  bool sigma_nonnegative = false;  // sigma_k >= 0, 1 <= k <= n-1
  bool lambda_max_floor = false;   // lambda_1 >= tan(pi/2 - pi/n)
  int first_negative_sigma = -1;

  bool all() const { return applicable && positivity && balance && sigma_nonnegative && lambda_max_floor; }
};

/// Properties of ordered eigenvalues whose phase is at least (n-2)pi/2.
/// Inequalities are checked up to `tol` times the natural magnitude of each side.
inline OrderedEigenReport ordered_eigen_properties(std::span<const double> lambda, double theta,
                                                   double tol = 1e-12) {
  OrderedEigenReport r;
  const std::size_t n = lambda.size();
  if (n < 2 || theta < critical_phase(n) - tol) return r;
  r.applicable = true;

  double scale = 1.0;
  for (double l : lambda) scale = std::max(scale, std::abs(l));
  const double slack = tol * scale;

  bool sorted = true;
  for (std::size_t i = 0; i + 1 < n; ++i) sorted = sorted && lambda[i] >= lambda[i + 1] - slack;
  r.positivity = sorted && lambda[n - 2] > -slack && lambda[n - 2] >= std::abs(lambda[n - 1]) - slack;
  r.balance = lambda[0] + static_cast<double>(n - 1) * lambda[n - 1] >= -slack * static_cast<double>(n);

  const Vec s = elementary_symmetric(lambda);
  Vec abs_l(lambda.begin(), lambda.end());
  for (double& v : abs_l) v = std::abs(v);
  const Vec s_abs = elementary_symmetric(abs_l);
  r.sigma_nonnegative = true;
  for (std::size_t k = 1; k <= n - 1; ++k) {
    if (s[k] < -tol * std::max(1.0, s_abs[k])) {
      r.sigma_nonnegative = false;
      if (r.first_negative_sigma < 0) r.first_negative_sigma = static_cast<int>(k);
    }
  }

  const double floor = std::tan(kPi / 2.0 - kPi / static_cast<double>(n));
  r.lambda_max_floor = lambda[0] >= floor - slack;
  return r;
}

inline OrderedEigenReport ordered_eigen_properties(const Spectrum& s, double theta, double tol = 1e-12) {
  return ordered_eigen_properties(s.lambda, theta, tol);
}

struct ConformalitySides {
  double lhs;
  double rhs;
  double volume;  // sqrt(prod(1 + lambda_i^2))
};

/// Both sides of the traced conformality identity
///   sum_j V/(1+lambda_j^2)
///     = cos(theta) sum_{0<=2k<n} (-1)^k (n-2k) sigma_{2k}
///     - sin(theta) sum_{0<=2k-1<n} (-1)^k (n-2k+1) sigma_{2k-1}.
inline ConformalitySides conformality_trace_sides(std::span<const double> lambda) {
  const std::size_t n = lambda.size();
  const int ni = static_cast<int>(n);
  double vol2 = 1.0;
  for (double l : lambda) vol2 *= 1.0 + l * l;
  const double volume = std::sqrt(vol2);
  double lhs = 0.0;
  for (double l : lambda) lhs += volume / (1.0 + l * l);

  const Vec s = elementary_symmetric(lambda);
  const double theta = lagrangian_phase(lambda);
  double even = 0.0;
  for (int k = 0; 2 * k < ni; ++k)
    even += ((k % 2) ? -1.0 : 1.0) * (ni - 2 * k) * s[static_cast<std::size_t>(2 * k)];
  double odd = 0.0;
  for (int k = 1; 2 * k - 1 < ni; ++k)
    odd += ((k % 2) ? -1.0 : 1.0) * (ni - 2 * k + 1) * s[static_cast<std::size_t>(2 * k - 1)];
  const double rhs = std::cos(theta) * even - std::sin(theta) * odd;
  return {lhs, rhs, volume};
}

/// |LHS - RHS| of the traced conformality identity, relative to the volume
/// element V >= 1 (both sides are sums of terms bounded by n*2^(n/2)*V).
inline double conformality_trace_residual(std::span<const double> lambda) {
  const ConformalitySides c = conformality_trace_sides(lambda);
  return std::abs(c.lhs - c.rhs) / c.volume;
}

}  // namespace lmc
