#pragma once

// Exponentiation of the arctangent operator into a concave one (n >= 3) and
// the upward rotation of a gradient graph.
//
// Concavification: e^{Af} d_ij e^{-Af} = -A H_ij with H conjugate (by the
// positive diagonal 1/(1+lambda_i^2)) to M = A 11^T + 2 diag(lambda), and
//   det M = 2^{n-1} (A sigma_{n-1} + 2 sigma_n).
//
// Rotation by gamma: xbar = cos(g) x - sin(g) Du, ybar = sin(g) x + cos(g) Du,
//   ubar = u - sin(g)cos(g)(|Du|^2 - |x|^2)/2 - sin^2(g) x.Du,
// so that arctan of each Hessian eigenvalue increases by gamma.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/graph_geometry.hpp"
#include "lmc/grid.hpp"
#include "lmc/linalg.hpp"
#include "lmc/phase_models.hpp"
#include "lmc/spectral.hpp"

namespace lmc {

// ---------------------------------------------------------------------------
// Concavification

struct ConcavifyParams {
  std::size_t n = 3;
  double K = 1.0;
  double T = kPi / 4.0;  // pi/2 - arctan K
  double tan_T = 1.0;
  double s = 0.5;        // tan(T)/2
  double eps = 0.25;     // s/(n-1); kept for inspection only
  double C = 0.5;        // tan(T)^{n-1}/2, lower bound for sigma_{n-1}
  double raw_threshold = 4.0;      // 2 K^n / C
  double printed_threshold = 4.0;  // 2 K / C
  double A = 4.4;
};

inline ConcavifyParams concavify_constant(std::size_t n, double K, double safety = 0.1) {
  if (n <= 2) throw DimensionError("concavify_constant: exponentiation needs n >= 3");
  if (!(K > 0.0) || !std::isfinite(K)) throw InvalidInput("concavify_constant: K must be positive");
  if (!(safety >= 0.0)) throw InvalidInput("concavify_constant: negative safety factor");
  ConcavifyParams p;
  p.n = n;
  p.K = K;
  p.T = kPi / 2.0 - std::atan(K);
  p.tan_T = std::tan(p.T);
  p.s = p.tan_T / 2.0;
  p.eps = p.s / static_cast<double>(n - 1);
  p.C = 0.5 * std::pow(p.tan_T, static_cast<double>(n - 1));
  const double kn = std::pow(K, static_cast<double>(n));
  p.raw_threshold = 2.0 * kn / p.C;
  p.printed_threshold = 2.0 * K / p.C;
  p.A = 2.0 * std::max(K, kn) / p.C * (1.0 + safety);
  return p;
}

/// M = A 11^T + 2 diag(lambda)
inline Matrix concavity_matrix(std::span<const double> lambda, double A) {
  const std::size_t n = lambda.size();
  Matrix m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = A + (i == j ? 2.0 * lambda[i] : 0.0);
  return m;
}

/// 2^{n-1} (A sigma_{n-1} + 2 sigma_n)
inline double concavity_determinant(std::span<const double> lambda, double A) {
  const std::size_t n = lambda.size();
  const Vec s = elementary_symmetric(lambda);
  return std::ldexp(A * s[n - 1] + 2.0 * s[n], static_cast<int>(n) - 1);
}

struct ConcavityCheck {
  bool applicable = true;  // Theta(lambda) >= (n-2)pi/2
  bool positive_definite = false;
  Vec minors;               // leading principal minors of M, lambda sorted descending
  double determinant = 0.0; // det M by elimination
  double formula = 0.0;     // 2^{n-1}(A sigma_{n-1} + 2 sigma_n)
  double identity_error = 0.0;  // |det - formula| / max(|formula|, 1)
};

inline ConcavityCheck concavified_hessian_check(std::span<const double> lambda, double A) {
  if (lambda.empty() || !all_finite(lambda) || !std::isfinite(A))
    throw InvalidInput("concavified_hessian_check: need finite eigenvalues and A");
  const std::size_t n = lambda.size();
  ConcavityCheck c;
  c.applicable = lagrangian_phase(lambda) >= critical_phase(n) - kCriticalityTolerance;
  Vec sorted(lambda.begin(), lambda.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const Matrix m = concavity_matrix(sorted, A);
  c.positive_definite = true;
  for (std::size_t k = 1; k <= n; ++k) {
    Matrix sub(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) sub(i, j) = m(i, j);
    c.minors.push_back(determinant(sub));
    if (!(c.minors.back() > 0.0)) c.positive_definite = false;
  }
  c.determinant = c.minors.back();
  c.formula = concavity_determinant(sorted, A);
  c.identity_error = std::abs(c.determinant - c.formula) / std::max(std::abs(c.formula), 1.0);
  return c;
}

struct SigmaFloorCheck {
  bool applicable = false;  // supercritical, max|lambda| <= K, n >= 3
  bool pass = false;        // sigma_{n-1} >= C
  double sigma = 0.0;
  double C = 0.0;
  /// lambda_{n-1} > tan T; only implied when the smallest eigenvalue is negative
  bool floor_applicable = false;
  bool floor_pass = false;
  double second_smallest = 0.0;
  double tan_T = 0.0;
};

inline SigmaFloorCheck sigma_floor_check(std::span<const double> lambda, double K) {
  if (lambda.empty() || !all_finite(lambda)) throw InvalidInput("sigma_floor_check: non-finite eigenvalues");
  const std::size_t n = lambda.size();
  SigmaFloorCheck r;
  if (n < 3) return r;
  double sup = 0.0;
  for (double l : lambda) sup = std::max(sup, std::abs(l));
  r.applicable = lagrangian_phase(lambda) >= critical_phase(n) - kCriticalityTolerance && sup <= K;
  if (!r.applicable) return r;
  const ConcavifyParams p = concavify_constant(n, K);
  r.C = p.C;
  r.tan_T = p.tan_T;
  r.sigma = sigma_k(lambda, static_cast<int>(n) - 1);
  r.pass = r.sigma >= p.C - 1e-10;
  Vec sorted(lambda.begin(), lambda.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  r.second_smallest = sorted[n - 2];
  r.floor_applicable = sorted[n - 1] < 0.0;
  r.floor_pass = !r.floor_applicable || r.second_smallest >= p.tan_T - 1e-10;
  return r;
}

/// Eigenvalue tuples with |lambda_i| <= K and sum arctan >= (n-2)pi/2. Angles
/// are drawn uniformly; a deficit below the critical phase is spread over
/// the available headroom, and half of those samples are then pushed a
/// random fraction further so both the critical surface and the interior are hit.
inline std::vector<Vec> sample_supercritical(std::size_t n, double K, std::size_t count, std::uint64_t seed) {
  const double a = std::atan(K);
  const double crit = critical_phase(n);
  if (static_cast<double>(n) * a < crit + 1e-12)
    throw InvalidInput("sample_supercritical: no tuple with |lambda| <= K reaches the critical phase");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Vec> out;
  out.reserve(count);
  while (out.size() < count) {
    Vec th(n);
    for (double& t : th) t = -a + 2.0 * a * unif(rng);
    const double sum = std::accumulate(th.begin(), th.end(), 0.0);
    if (sum < crit) {
      const double room = static_cast<double>(n) * a - sum;
      const double push = (crit - sum) + (out.size() % 2 ? unif(rng) * (room - (crit - sum)) : 0.0);
      for (double& t : th) t += push * (a - t) / room;
    }
    Vec lam(n);
    for (std::size_t i = 0; i < n; ++i) lam[i] = std::clamp(std::tan(th[i]), -K, K);
    if (lagrangian_phase(lam) >= crit - kCriticalityTolerance) out.push_back(std::move(lam));
  }
  return out;
}

struct ConcavitySweepRow {
  double A = 0.0;
  double min_det = 0.0;
  double pd_fraction = 0.0;
};

/// For each A: the smallest det M over the samples and the fraction with M positive definite.
inline std::vector<ConcavitySweepRow> concavity_sweep(std::size_t n, double K, std::span<const double> a_values,
                                                      std::size_t samples, std::uint64_t seed) {
  if (n <= 2) throw DimensionError("concavity_sweep: exponentiation needs n >= 3");
  const std::vector<Vec> lam = sample_supercritical(n, K, samples, seed);
  std::vector<ConcavitySweepRow> rows;
  for (double A : a_values) {
    ConcavitySweepRow r;
    r.A = A;
    r.min_det = std::numeric_limits<double>::infinity();
    std::size_t pd = 0;
    for (const Vec& l : lam) {
      const ConcavityCheck c = concavified_hessian_check(l, A);
      r.min_det = std::min(r.min_det, c.formula);
      pd += c.positive_definite;
    }
    r.pd_fraction = static_cast<double>(pd) / static_cast<double>(lam.size());
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Rotation

struct RotationParams {
  double gamma = 0.0;
  double K = 0.0;
  double contraction = 1.0;  // lower bound for the eigenvalues of cos(g) I - sin(g) D^2u
};

/// gamma = (pi/2 - arctan K)/2, the angle used for C^{1,1} potentials.
inline double default_rotation_angle(double K) { return 0.5 * (kPi / 2.0 - std::atan(K)); }

inline RotationParams rotation_params(double gamma, double K) {
  if (!std::isfinite(gamma) || !(K >= 0.0)) throw InvalidInput("rotation_params: need finite gamma and K >= 0");
  RotationParams p{gamma, K, std::cos(gamma) - K * std::abs(std::sin(gamma))};
  if (!(p.contraction > 0.0))
    throw RotationDegenerate("rotation: gamma must satisfy |gamma| < arctan(1/K) (K = " + format_number(K) + ")");
  return p;
}

/// Same, from the Hessian eigenvalue range [lambda_min, lambda_max]: the
/// contraction is the smallest eigenvalue of cos(g) I - sin(g) D^2u, which
/// only sees lambda_max for g > 0 and lambda_min for g < 0.
inline RotationParams rotation_params(double gamma, double lambda_min, double lambda_max) {
  if (!std::isfinite(gamma) || !(lambda_min <= lambda_max))
    throw InvalidInput("rotation_params: need finite gamma and lambda_min <= lambda_max");
  const double s = std::sin(gamma);
  RotationParams p{gamma, std::max(std::abs(lambda_min), std::abs(lambda_max)),
                   std::cos(gamma) - s * (s > 0.0 ? lambda_max : lambda_min)};
  if (!(p.contraction > 0.0))
    throw RotationDegenerate("rotation: cos(gamma) I - sin(gamma) D^2u is not positive definite (gamma = " +
                             format_number(gamma) + ", Hessian eigenvalues in [" + format_number(lambda_min) +
                             ", " + format_number(lambda_max) + "])");
  return p;
}

/// D^2 ubar = (sin g I + cos g H)(cos g I - sin g H)^{-1}
inline SymMatrix rotated_hessian(const SymMatrix& H, double gamma) {
  const std::size_t n = H.size();
  const double c = std::cos(gamma), s = std::sin(gamma);
  Matrix lhs(n), rhs(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double id = i == j ? 1.0 : 0.0;
      lhs(i, j) = c * id - s * H(i, j);
      rhs(i, j) = s * id + c * H(i, j);
    }
  Matrix out(n);
  for (std::size_t j = 0; j < n; ++j) {
    Vec col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = rhs(i, j);
    if (!solve_dense(lhs, col)) throw RotationDegenerate("rotated_hessian: cos(g) I - sin(g) H is singular");
    for (std::size_t i = 0; i < n; ++i) out(i, j) = col[i];
  }
  return SymMatrix::symmetrized(out);
}

inline double rotated_potential_value(double u, std::span<const double> du, std::span<const double> x, double gamma) {
  const double c = std::cos(gamma), s = std::sin(gamma);
  return u - s * c * (dot(du, du) - dot(x, x)) / 2.0 - s * s * dot(x, du);
}

struct RotationResult {
  RotationParams params;
  Grid source;
  std::vector<char> used;      // source nodes with a finite 3^n stencil
  std::vector<Vec> xbar;       // image of each used source node
  Vec ubar_source;             // closed-form ubar at used source nodes
  Vec phase_source;            // sum arctan eig(D^2 u) at used source nodes
  double measured_K = 0.0;
  // Regular grid in xbar; NaN where no image simplex covers the node.
  Grid target;
  ScalarField ubar;
  std::vector<ScalarField> ybar;      // D ubar at the target nodes
  std::vector<ScalarField> preimage;  // x with xbar(x) = target node
  ScalarField source_phase;           // phase of u carried to the target nodes
  std::size_t covered = 0;
  std::size_t degenerate_simplices = 0;
  // Lipschitz diagnostics on sampled pairs of used nodes.
  std::size_t pairs = 0;
  double min_ratio = std::numeric_limits<double>::infinity();  // |dxbar| / |dx|
  double min_distance = std::numeric_limits<double>::infinity();
  std::size_t lipschitz_violations = 0;
};

namespace detail {

/// Node is interior and its 3^n box holds finite values.
inline bool stencil_finite(const ScalarField& u, std::size_t idx) {
  const Grid& g = u.grid;
  if (g.is_boundary(idx)) return false;
  const std::size_t n = g.dim();
  std::size_t total = 1;
  for (std::size_t a = 0; a < n; ++a) total *= 3;
  for (std::size_t code = 0; code < total; ++code) {
    std::ptrdiff_t off = 0;
    std::size_t c = code;
    for (std::size_t a = 0; a < n; ++a, c /= 3)
      off += (static_cast<std::ptrdiff_t>(c % 3) - 1) * static_cast<std::ptrdiff_t>(g.stride(a));
    if (!std::isfinite(u.values[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(idx) + off)])) return false;
  }
  return true;
}

inline Matrix inverse(const Matrix& m, bool& ok) {
  const std::size_t n = m.size();
  Matrix inv(n);
  ok = true;
  for (std::size_t j = 0; j < n; ++j) {
    Vec e(n, 0.0);
    e[j] = 1.0;
    if (!solve_dense(m, e, 1e-13)) {
      ok = false;
      return inv;
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = e[i];
  }
  return inv;
}

}  // namespace detail

/// Rotates the gradient graph of `u` by gamma and resamples the rotated
/// potential on a regular grid in xbar by linear interpolation over the
/// images of the Kuhn simplices of the source cells. Valid target values are
/// the finite ones.
inline RotationResult rotate_potential(const ScalarField& u, double gamma, std::uint64_t seed = 1) {
  const Grid& g = u.grid;
  const std::size_t n = g.dim();
  if (n > 4) throw DimensionError("rotate_potential: resampling supports n <= 4");
  require_wide_grid(g, 3, "rotate_potential");
  if (!std::isfinite(gamma)) throw InvalidInput("rotate_potential: non-finite angle");

  RotationResult r;
  r.source = g;
  r.used.assign(g.size(), 0);
  r.xbar.assign(g.size(), Vec());
  r.ubar_source.assign(g.size(), std::numeric_limits<double>::quiet_NaN());
  r.phase_source.assign(g.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<Vec> ybar_src(g.size());
  std::size_t used = 0;
  double lam_min = std::numeric_limits<double>::infinity(), lam_max = -lam_min;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!detail::stencil_finite(u, i)) continue;
    r.used[i] = 1;
    ++used;
    const SymMatrix H = fd_hessian(u, i);
    const Spectrum sp = eigen_decompose(H);
    r.measured_K = std::max({r.measured_K, std::abs(sp.lambda.front()), std::abs(sp.lambda.back())});
    lam_max = std::max(lam_max, sp.lambda.front());
    lam_min = std::min(lam_min, sp.lambda.back());
    r.phase_source[i] = lagrangian_phase(sp);
  }
  if (used == 0) throw InvalidInput("rotate_potential: no node with a finite second-difference stencil");
  r.params = rotation_params(gamma, lam_min, lam_max);

  const double c = std::cos(gamma), s = std::sin(gamma);
  Vec lo(n, std::numeric_limits<double>::infinity()), hi(n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!r.used[i]) continue;
    const Vec x = g.point(i);
    const Vec du = fd_gradient(u, i);
    Vec xb(n), yb(n);
    for (std::size_t a = 0; a < n; ++a) {
      xb[a] = c * x[a] - s * du[a];
      yb[a] = s * x[a] + c * du[a];
      lo[a] = std::min(lo[a], xb[a]);
      hi[a] = std::max(hi[a], xb[a]);
    }
    r.ubar_source[i] = rotated_potential_value(u.values[i], du, x, gamma);
    r.xbar[i] = std::move(xb);
    ybar_src[i] = std::move(yb);
  }

  // Lipschitz diagnostics: all pairs for small grids, otherwise random pairs
  // plus every neighbour pair.
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (r.used[i]) ids.push_back(i);
  auto check_pair = [&](std::size_t i, std::size_t j) {
    const Vec xi = g.point(i), xj = g.point(j);
    double dx = 0.0, db = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      dx += (xi[a] - xj[a]) * (xi[a] - xj[a]);
      db += (r.xbar[i][a] - r.xbar[j][a]) * (r.xbar[i][a] - r.xbar[j][a]);
    }
    dx = std::sqrt(dx);
    db = std::sqrt(db);
    ++r.pairs;
    r.min_distance = std::min(r.min_distance, db);
    const double ratio = db / dx;
    r.min_ratio = std::min(r.min_ratio, ratio);
    if (ratio < r.params.contraction * (1.0 - 1e-9)) ++r.lipschitz_violations;
  };
  if (ids.size() <= 2048) {
    for (std::size_t a = 0; a < ids.size(); ++a)
      for (std::size_t b = a + 1; b < ids.size(); ++b) check_pair(ids[a], ids[b]);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    for (int k = 0; k < 200000; ++k) {
      const std::size_t a = pick(rng), b = pick(rng);
      if (a != b) check_pair(ids[a], ids[b]);
    }
    for (std::size_t i : ids)
      for (std::size_t a = 0; a < n; ++a)
        if (g.axis_index(i, a) + 1 < g.counts()[a] && r.used[i + g.stride(a)]) check_pair(i, i + g.stride(a));
  }

  // Target grid: square cells covering the image, with as many cells along
  // the widest axis as the used source nodes span.
  double extent = 0.0;
  std::size_t span = 1;
  for (std::size_t a = 0; a < n; ++a) {
    extent = std::max(extent, hi[a] - lo[a]);
    std::size_t first = g.counts()[a], last = 0;
    for (std::size_t i : ids) {
      first = std::min(first, g.axis_index(i, a));
      last = std::max(last, g.axis_index(i, a));
    }
    span = std::max(span, last - first);
  }
  const double hb = extent > 0.0 ? extent / static_cast<double>(span) : g.spacing();
  std::vector<std::size_t> counts(n);
  for (std::size_t a = 0; a < n; ++a)
    counts[a] = static_cast<std::size_t>(std::floor((hi[a] - lo[a]) / hb + 1e-9)) + 1;
  r.target = Grid(lo, counts, hb);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.ubar = ScalarField(r.target, nan);
  r.source_phase = ScalarField(r.target, nan);
  r.ybar.assign(n, ScalarField(r.target, nan));
  r.preimage.assign(n, ScalarField(r.target, nan));

  // Kuhn triangulation: one simplex per axis permutation.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<std::size_t>> perms;
  do perms.push_back(perm);
  while (std::next_permutation(perm.begin(), perm.end()));

  std::vector<std::size_t> cell_counts(g.counts());
  for (auto& v : cell_counts) v -= 1;
  const Grid cells(Vec(n, 0.0), cell_counts, 1.0);
  std::vector<std::size_t> vert(n + 1);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const std::vector<std::size_t> m = cells.multi_index(ci);
    const std::size_t base = g.index(m);
    for (const auto& p : perms) {
      vert[0] = base;
      bool ok = r.used[base] != 0;
      for (std::size_t k = 0; k < n && ok; ++k) {
        vert[k + 1] = vert[k] + g.stride(p[k]);
        ok = r.used[vert[k + 1]] != 0;
      }
      if (!ok) continue;
      Matrix B(n);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t a = 0; a < n; ++a) B(a, k) = r.xbar[vert[k + 1]][a] - r.xbar[vert[0]][a];
      bool inv_ok = false;
      const Matrix Binv = detail::inverse(B, inv_ok);
      if (!inv_ok) {
        ++r.degenerate_simplices;
        continue;
      }
      std::vector<std::size_t> tlo(n), thi(n);
      bool empty = false;
      for (std::size_t a = 0; a < n; ++a) {
        double mn = std::numeric_limits<double>::infinity(), mx = -mn;
        for (std::size_t v : vert) {
          mn = std::min(mn, r.xbar[v][a]);
          mx = std::max(mx, r.xbar[v][a]);
        }
        const double first = std::ceil((mn - lo[a]) / hb - 1e-9);
        const double last = std::floor((mx - lo[a]) / hb + 1e-9);
        if (last < first || last < 0.0 || first > static_cast<double>(counts[a] - 1)) {
          empty = true;
          break;
        }
        tlo[a] = static_cast<std::size_t>(std::max(first, 0.0));
        thi[a] = static_cast<std::size_t>(std::min(last, static_cast<double>(counts[a] - 1)));
      }
      if (empty) continue;
      std::vector<std::size_t> t(tlo);
      for (;;) {
        const std::size_t ti = r.target.index(t);
        if (!std::isfinite(r.ubar.values[ti])) {
          const Vec q = r.target.point(ti);
          Vec bary(n + 1);
          double rest = 1.0;
          bool inside = true;
          for (std::size_t k = 0; k < n; ++k) {
            double v = 0.0;
            for (std::size_t a = 0; a < n; ++a) v += Binv(k, a) * (q[a] - r.xbar[vert[0]][a]);
            bary[k + 1] = v;
            rest -= v;
            if (v < -1e-10) inside = false;
          }
          bary[0] = rest;
          if (inside && rest >= -1e-10) {
            double ub = 0.0, ph = 0.0;
            Vec yb(n, 0.0), xp(n, 0.0);
            for (std::size_t k = 0; k <= n; ++k) {
              const std::size_t v = vert[k];
              ub += bary[k] * r.ubar_source[v];
              ph += bary[k] * r.phase_source[v];
              const Vec x = g.point(v);
              for (std::size_t a = 0; a < n; ++a) {
                yb[a] += bary[k] * ybar_src[v][a];
                xp[a] += bary[k] * x[a];
              }
            }
            r.ubar.values[ti] = ub;
            r.source_phase.values[ti] = ph;
            for (std::size_t a = 0; a < n; ++a) {
              r.ybar[a].values[ti] = yb[a];
              r.preimage[a].values[ti] = xp[a];
            }
            ++r.covered;
          }
        }
        std::size_t a = n;
        while (a-- > 0) {
          if (t[a] < thi[a]) {
            ++t[a];
            break;
          }
          t[a] = tlo[a];
        }
        if (a == static_cast<std::size_t>(-1)) break;
      }
    }
  }
  return r;
}

struct PhaseShiftReport {
  RotationParams params;
  std::size_t nodes = 0;
  double max_residual = 0.0;   // |sum arctan lambdabar - (sum arctan lambda + n gamma)|
  double mean_residual = 0.0;
  /// Against Theta(x, u, Du) + n gamma at the preimage, when a model is given.
  std::optional<double> max_model_residual;
  double target_spacing = 0.0;
};

/// Phase of the resampled rotated potential (centered differences of the
/// resampled D ubar) against the carried-over phase of u plus n gamma.
inline PhaseShiftReport rotation_phase_shift_check(const ScalarField& u, double gamma,
                                                   const PhaseModel* model = nullptr) {
  const RotationResult r = rotate_potential(u, gamma);
  const Grid& tg = r.target;
  const std::size_t n = tg.dim();
  if (model && model->dim() != n) throw InvalidInput("rotation_phase_shift_check: model dimension mismatch");
  PhaseShiftReport rep;
  rep.params = r.params;
  rep.target_spacing = tg.spacing();
  const double inv2h = 0.5 / tg.spacing();
  const double c = std::cos(gamma), s = std::sin(gamma);
  double sum = 0.0, worst_model = 0.0;
  for (std::size_t i = 0; i < tg.size(); ++i) {
    if (!std::isfinite(r.source_phase.values[i])) continue;
    bool ok = true;
    for (std::size_t a = 0; a < n && ok; ++a) ok = detail::stencil_finite(r.ybar[a], i);
    if (!ok) continue;
    Matrix J(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t sb = tg.stride(b);
        J(a, b) = (r.ybar[a].values[i + sb] - r.ybar[a].values[i - sb]) * inv2h;
      }
    const double phase = lagrangian_phase(eigen_decompose(SymMatrix::symmetrized(J)));
    const double res = std::abs(phase - (r.source_phase.values[i] + static_cast<double>(n) * gamma));
    rep.max_residual = std::max(rep.max_residual, res);
    sum += res;
    ++rep.nodes;
    if (model) {
      Vec x(n), du(n);
      for (std::size_t a = 0; a < n; ++a) x[a] = r.preimage[a].values[i];
      // invert ybar = s x + c Du and ubar's closed form at the preimage
      for (std::size_t a = 0; a < n; ++a) du[a] = (r.ybar[a].values[i] - s * x[a]) / c;
      const double uval = r.ubar.values[i] + s * c * (dot(du, du) - dot(x, x)) / 2.0 + s * s * dot(x, du);
      const double theta = model->value(x, uval, du);
      worst_model = std::max(worst_model, std::abs(phase - (theta + static_cast<double>(n) * gamma)));
    }
  }
  if (rep.nodes == 0) throw InvalidInput("rotation_phase_shift_check: no resampled node with a full stencil");
  rep.mean_residual = sum / static_cast<double>(rep.nodes);
  if (model) rep.max_model_residual = worst_model;
  return rep;
}

/// Multilinear interpolation of a field at x; NaN outside the box or next to a NaN node.
inline double interpolate(const ScalarField& f, std::span<const double> x) {
  const Grid& g = f.grid;
  const std::size_t n = g.dim();
  std::vector<std::size_t> base(n);
  Vec frac(n);
  for (std::size_t a = 0; a < n; ++a) {
    const double t = (x[a] - g.lower()[a]) / g.spacing();
    const double top = static_cast<double>(g.counts()[a] - 1);
    if (t < -1e-12 || t > top + 1e-12) return std::numeric_limits<double>::quiet_NaN();
    const double tc = std::clamp(t, 0.0, top);
    const double fl = std::min(std::floor(tc), std::max(top - 1.0, 0.0));
    base[a] = static_cast<std::size_t>(fl);
    frac[a] = tc - fl;
  }
  double acc = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
    double w = 1.0;
    std::size_t idx = 0;
    for (std::size_t a = 0; a < n; ++a) {
      const bool up = (corner >> a) & 1u;
      if (up && g.counts()[a] == 1) {
        w = 0.0;
        break;
      }
      w *= up ? frac[a] : 1.0 - frac[a];
      idx += (base[a] + (up ? 1 : 0)) * g.stride(a);
    }
    if (w == 0.0) continue;
    acc += w * f.values[idx];
  }
  return acc;
}

}  // namespace lmc
