#pragma once

// Finite-difference calculus on the gradient graph (x, Du(x)): derivative
// fields, the induced metric g = I + (D^2u)^2, the divergence-form
// Laplace-Beltrami operator, mean curvature, the slope potential b_m, the
// pointwise Jacobi diagnostic and the sigma_k divergence identity.
//
// All geometric fields live on the stencil-shrunk interior: first and second
// derivatives at depth d+1 for a field valid at depth d, third derivatives at
// depth d+2. No one-sided stencils are used.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/grid.hpp"
#include "lmc/linalg.hpp"
#include "lmc/phase_models.hpp"
#include "lmc/spectral.hpp"

namespace lmc {

/// (1/8) ln(4/3)
inline const double kSlopeOffset = std::log(4.0 / 3.0) / 8.0;

// ---------------------------------------------------------------------------
// Pointwise stencils

/// Centered first differences at `idx`.
inline Vec fd_gradient(const ScalarField& u, std::size_t idx) {
  const Grid& g = u.grid;
  const double inv2h = 0.5 / g.spacing();
  Vec d(g.dim());
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const std::size_t s = g.stride(a);
    d[a] = (u.values[idx + s] - u.values[idx - s]) * inv2h;
  }
  return d;
}

/// Compact centered second differences; mixed terms use the 4-point stencil.
/// Exact on quadratics (and on cubics along each axis).
inline SymMatrix fd_hessian(const ScalarField& u, std::size_t idx) {
  const Grid& g = u.grid;
  const double h = g.spacing();
  const double inv_h2 = 1.0 / (h * h);
  const std::size_t n = g.dim();
  const auto& v = u.values;
  SymMatrix H(n);
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t sa = g.stride(a);
    H.set(a, a, (v[idx + sa] - 2.0 * v[idx] + v[idx - sa]) * inv_h2);
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t sb = g.stride(b);
      H.set(a, b, (v[idx + sa + sb] - v[idx + sa - sb] - v[idx - sa + sb] + v[idx - sa - sb]) *
                      0.25 * inv_h2);
    }
  }
  return H;
}

inline void require_wide_grid(const Grid& g, std::size_t min_nodes, const char* who) {
  for (std::size_t c : g.counts())
    if (c < min_nodes)
      throw InvalidInput(std::string(who) + ": grid needs at least " + std::to_string(min_nodes) +
                         " nodes per axis");
}

// ---------------------------------------------------------------------------
// Derivative fields

struct DerivativeFields {
  Grid grid;
  std::size_t first_depth = 1;  // gradient and Hessian
  std::size_t third_depth = 2;
  std::vector<Vec> gradient;
  std::vector<SymMatrix> hessian;
  /// u_ijk flattened as third[idx][(i*n + j)*n + k].
  std::vector<Vec> third;
};

/// Centered gradient and Hessian, third derivatives from centered
/// differences of the Hessian field (symmetrized over index permutations).
inline DerivativeFields differentiate(const ScalarField& u) {
  const Grid& g = u.grid;
  require_wide_grid(g, 5, "differentiate");
  const std::size_t n = g.dim();
  DerivativeFields d;
  d.grid = g;
  d.first_depth = u.depth + 1;
  d.third_depth = u.depth + 2;
  d.gradient.resize(g.size());
  d.hessian.resize(g.size());
  d.third.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d.first_depth) continue;
    d.gradient[i] = fd_gradient(u, i);
    d.hessian[i] = fd_hessian(u, i);
  }
  const double inv2h = 0.5 / g.spacing();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d.third_depth) continue;
    Vec raw(n * n * n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t s = g.stride(k);
      const SymMatrix& hp = d.hessian[i + s];
      const SymMatrix& hm = d.hessian[i - s];
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) raw[(a * n + b) * n + k] = (hp(a, b) - hm(a, b)) * inv2h;
    }
    Vec t(n * n * n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < n; ++c)
          t[(a * n + b) * n + c] =
              (raw[(a * n + b) * n + c] + raw[(a * n + c) * n + b] + raw[(b * n + c) * n + a]) / 3.0;
    d.third[i] = std::move(t);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Induced metric

struct MetricField {
  Grid grid;
  std::size_t depth = 1;
  std::vector<SymMatrix> g;
  std::vector<SymMatrix> ginv;
  std::vector<double> volume;  // sqrt(det g)

  bool valid(std::size_t idx) const { return grid.depth(idx) >= depth; }
};

struct PointMetric {
  SymMatrix g;
  SymMatrix ginv;
  double volume;
};

inline PointMetric point_metric(const Spectrum& s) {
  const std::size_t n = s.size();
  SymMatrix g(n), gi(n);
  double vol2 = 1.0;
  for (double l : s.lambda) vol2 *= 1.0 + l * l;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double a = 0.0, b = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double l2 = 1.0 + s.lambda[k] * s.lambda[k];
        const double qq = s.frame(i, k) * s.frame(j, k);
        a += qq * l2;
        b += qq / l2;
      }
      g.set(i, j, a);
      gi.set(i, j, b);
    }
  return {g, gi, std::sqrt(vol2)};
}

inline PointMetric point_metric(const SymMatrix& hessian) {
  return point_metric(eigen_decompose(hessian));
}

/// g = I + H^2, g^{-1} and V = sqrt(prod(1 + lambda_i^2)) at every node where
/// the Hessian is defined.
inline MetricField induced_metric(const std::vector<SymMatrix>& hessian, const Grid& grid,
                                  std::size_t depth) {
  MetricField m;
  m.grid = grid;
  m.depth = depth;
  m.g.resize(grid.size());
  m.ginv.resize(grid.size());
  m.volume.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.depth(i) < depth) continue;
    PointMetric pm = point_metric(hessian[i]);
    m.g[i] = std::move(pm.g);
    m.ginv[i] = std::move(pm.ginv);
    m.volume[i] = pm.volume;
  }
  return m;
}

inline MetricField induced_metric(const DerivativeFields& d) {
  return induced_metric(d.hessian, d.grid, d.first_depth);
}

// ---------------------------------------------------------------------------
// Laplace-Beltrami

/// Delta_g v = (1/V) d_i (V g^{ij} d_j v) in flux form: face coefficients are
/// averages of the two adjacent nodes, normal derivatives are compact,
/// tangential ones are averages of centered differences. With g = I this is
/// the standard (2n+1)-point Laplacian.
inline ScalarField laplace_beltrami(const ScalarField& v, const MetricField& metric) {
  const Grid& g = v.grid;
  if (!g.same_as(metric.grid)) throw InvalidInput("laplace_beltrami: field and metric grids differ");
  const std::size_t n = g.dim();
  const double h = g.spacing();
  const std::size_t depth = std::max(v.depth, metric.depth) + 1;
  ScalarField out(g, std::numeric_limits<double>::quiet_NaN(), depth);

  auto centered = [&](std::size_t idx, std::size_t a) {
    const std::size_t s = g.stride(a);
    return (v.values[idx + s] - v.values[idx - s]) / (2.0 * h);
  };
  // flux through the face between idx and idx + s_a (sign = +1) or idx - s_a (sign = -1)
  auto face_flux = [&](std::size_t idx, std::size_t a, int sign) {
    const std::size_t s = g.stride(a);
    const std::size_t nb = sign > 0 ? idx + s : idx - s;
    double f = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double coef = 0.5 * (metric.volume[idx] * metric.ginv[idx](a, b) +
                                 metric.volume[nb] * metric.ginv[nb](a, b));
      double dv;
      if (b == a)
        dv = sign * (v.values[nb] - v.values[idx]) / h;
      else
        dv = 0.5 * (centered(idx, b) + centered(nb, b));
      f += coef * dv;
    }
    return f;
  };

  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < depth) continue;
    double div = 0.0;
    for (std::size_t a = 0; a < n; ++a) div += (face_flux(i, a, +1) - face_flux(i, a, -1)) / h;
    out.values[i] = div / metric.volume[i];
  }
  return out;
}

/// |grad_g v|^2 = g^{ij} v_i v_j with centered differences.
inline ScalarField metric_gradient_norm2(const ScalarField& v, const MetricField& metric) {
  const Grid& g = v.grid;
  const std::size_t depth = std::max(v.depth + 1, metric.depth);
  ScalarField out(g, std::numeric_limits<double>::quiet_NaN(), depth);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < depth) continue;
    const Vec d = fd_gradient(v, i);
    const Vec gd = metric.ginv[i].matrix() * d;
    out.values[i] = dot(d, gd);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean curvature

/// Total derivative d_i Theta(x, u, Du) = Theta_{x_i} + Theta_z u_i + sum_k Theta_{p_k} u_{ki}.
inline Vec total_phase_derivative(const PhaseJet& j, std::span<const double> du, const SymMatrix& hess) {
  const std::size_t n = du.size();
  Vec d(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = j.dx[i] + j.dz * du[i];
    for (std::size_t k = 0; k < n; ++k) s += j.dp[k] * hess(k, i);
    d[i] = s;
  }
  return d;
}

struct MeanCurvatureField {
  Grid grid;
  std::size_t depth = 1;
  /// H = J grad_g Theta in R^{2n}: (-D^2u w, w) with w = g^{-1} dTheta.
  std::vector<Vec> vector;
  ScalarField magnitude;
};

/// |H|^2 = dTheta^T g^{-1} dTheta, which in a diagonalizing frame is
/// sum_j (Theta_{x_j} + Theta_z u_j + Theta_{p_j} lambda_j)^2 / (1 + lambda_j^2).
inline MeanCurvatureField mean_curvature(const ScalarField& u, const PhaseModel& model) {
  const Grid& g = u.grid;
  require_wide_grid(g, 3, "mean_curvature");
  if (model.dim() != g.dim()) throw InvalidInput("mean_curvature: phase dimension mismatch");
  const std::size_t n = g.dim();
  const std::size_t depth = u.depth + 1;
  MeanCurvatureField out{g, depth, std::vector<Vec>(g.size()),
                         ScalarField(g, std::numeric_limits<double>::quiet_NaN(), depth)};
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < depth) continue;
    const Vec x = g.point(i);
    const Vec du = fd_gradient(u, i);
    const SymMatrix hess = fd_hessian(u, i);
    const PhaseJet j = model.eval(x, u.values[i], du, JetOrder::first);
    const Vec dtheta = total_phase_derivative(j, du, hess);
    const PointMetric pm = point_metric(hess);
    const Vec w = pm.ginv.matrix() * dtheta;
    const Vec hw = hess.matrix() * w;
    Vec H(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
      H[k] = -hw[k];
      H[n + k] = w[k];
    }
    out.magnitude.values[i] = std::sqrt(std::max(0.0, dot(dtheta, w)));
    out.vector[i] = std::move(H);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Slope potential and diagnostics

/// b_m = (1/m) sum_{i<=m} ln sqrt(1 + lambda_i^2) for descending lambda.
inline double slope_value(std::span<const double> lambda, std::size_t m) {
  if (m < 1 || m > lambda.size()) throw InvalidInput("slope potential: need 1 <= m <= n");
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += 0.5 * std::log1p(lambda[i] * lambda[i]);
  return s / static_cast<double>(m);
}

/// ln sqrt(1 + tan^2(pi/2 - pi/n)): lower bound of b_1 at critical or
/// supercritical phase, n >= 3.
inline double slope_lower_bound(std::size_t n) {
  const double t = std::tan(kPi / 2.0 - kPi / static_cast<double>(n));
  return 0.5 * std::log1p(t * t);
}

struct GraphDiagnostics {
  Grid grid;
  std::size_t spectrum_depth = 1;
  std::size_t full_depth = 2;
  std::vector<Spectrum> spectra;
  ScalarField phase;
  ScalarField b1;
  ScalarField grad_b_norm2;
  ScalarField laplace_b;
  ScalarField mean_curvature;
  /// h_ijk = sqrt(g^ii g^jj g^kk) u_ijk in the diagonalizing frame, flattened (i*n+j)*n+k.
  std::vector<Vec> second_fundamental_form;
  double c0 = kSlopeOffset;
};

inline ScalarField slope_potential(const GraphDiagnostics& d, std::size_t m) {
  ScalarField out(d.grid, std::numeric_limits<double>::quiet_NaN(), d.spectrum_depth);
  for (std::size_t i = 0; i < d.grid.size(); ++i)
    if (d.grid.depth(i) >= d.spectrum_depth) out.values[i] = slope_value(d.spectra[i].lambda, m);
  return out;
}

inline GraphDiagnostics graph_diagnostics(const ScalarField& u, const PhaseModel& model) {
  const DerivativeFields der = differentiate(u);
  const Grid& g = u.grid;
  const std::size_t n = g.dim();
  GraphDiagnostics d;
  d.grid = g;
  d.spectrum_depth = der.first_depth;
  d.full_depth = der.third_depth;
  d.spectra.resize(g.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  d.phase = ScalarField(g, nan, der.first_depth);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < der.first_depth) continue;
    d.spectra[i] = eigen_decompose(der.hessian[i]);
    d.phase.values[i] = lagrangian_phase(d.spectra[i]);
  }
  d.b1 = slope_potential(d, 1);
  const MetricField metric = induced_metric(der);
  d.grad_b_norm2 = metric_gradient_norm2(d.b1, metric);
  d.laplace_b = laplace_beltrami(d.b1, metric);
  d.mean_curvature = mean_curvature(u, model).magnitude;

  d.second_fundamental_form.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < der.third_depth) continue;
    const Spectrum& s = d.spectra[i];
    const Vec& t = der.third[i];
    Vec hf(n * n * n, 0.0);
    Vec w(n);
    for (std::size_t a = 0; a < n; ++a) w[a] = 1.0 / std::sqrt(1.0 + s.lambda[a] * s.lambda[a]);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < n; ++c) {
          double acc = 0.0;
          for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = 0; q < n; ++q)
              for (std::size_t r = 0; r < n; ++r)
                acc += s.frame(p, a) * s.frame(q, b) * s.frame(r, c) * t[(p * n + q) * n + r];
          hf[(a * n + b) * n + c] = w[a] * w[b] * w[c] * acc;
        }
    d.second_fundamental_form[i] = std::move(hf);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Jacobi diagnostic

enum class JacobiNode : unsigned char { used = 0, skipped_multiplicity = 1, not_applicable = 2, outside = 3 };

struct JacobiReport {
  ScalarField laplace_b;
  ScalarField grad_b_norm2;
  ScalarField weight;  // 1 + |Du|^2
  std::vector<JacobiNode> status;
  std::size_t used = 0;
  std::size_t skipped = 0;
  std::size_t not_applicable = 0;
  /// Smallest C >= 0 with Delta_g b + C (1 + |Du|^2) >= 0 at every used node.
  double C_emp = 0.0;
  /// Largest c with Delta_g b + C_emp (1 + |Du|^2) - c |grad_g b|^2 >= 0 at
  /// every used node (+inf when |grad_g b| vanishes everywhere).
  double c_emp = std::numeric_limits<double>::infinity();
};

/// Multiplicity of the top eigenvalue, with a relative gap tolerance.
inline std::size_t top_multiplicity(std::span<const double> lambda, double rel_gap = 1e-6) {
  std::size_t m = 1;
  while (m < lambda.size() && lambda[0] - lambda[m] < rel_gap * (1.0 + std::abs(lambda[0]))) ++m;
  return m;
}

/// Evaluates both sides of Delta_g b_1 >= c |grad_g b_1|^2 - C (1 + |Du|^2).
/// Nodes where the top-eigenvalue multiplicity changes within the stencil
/// (b_1 not smooth) are skipped; subcritical nodes are not applicable.
inline JacobiReport jacobi_diagnostic(const ScalarField& u, const PhaseModel& model) {
  const GraphDiagnostics d = graph_diagnostics(u, model);
  const Grid& g = u.grid;
  const std::size_t n = g.dim();
  JacobiReport r;
  r.laplace_b = d.laplace_b;
  r.grad_b_norm2 = d.grad_b_norm2;
  r.weight = ScalarField(g, std::numeric_limits<double>::quiet_NaN(), d.spectrum_depth);
  r.status.assign(g.size(), JacobiNode::outside);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d.spectrum_depth) continue;
    const Vec du = fd_gradient(u, i);
    r.weight.values[i] = 1.0 + dot(du, du);
  }

  const std::size_t depth = d.laplace_b.depth;
  std::vector<std::size_t> mult(g.size(), 0);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.depth(i) >= d.spectrum_depth) mult[i] = top_multiplicity(d.spectra[i].lambda);

  // offsets of the 3^n neighbourhood
  std::vector<std::ptrdiff_t> offsets{0};
  for (std::size_t a = 0; a < n; ++a) {
    const auto s = static_cast<std::ptrdiff_t>(g.stride(a));
    std::vector<std::ptrdiff_t> next;
    for (auto o : offsets)
      for (std::ptrdiff_t k : {-1, 0, 1}) next.push_back(o + k * s);
    offsets = std::move(next);
  }

  double C = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < depth) continue;
    if (d.phase.values[i] < critical_phase(n) - kCriticalityTolerance) {
      r.status[i] = JacobiNode::not_applicable;
      ++r.not_applicable;
      continue;
    }
    bool stable = true;
    for (auto o : offsets)
      stable = stable && mult[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + o)] == mult[i];
    if (!stable) {
      r.status[i] = JacobiNode::skipped_multiplicity;
      ++r.skipped;
      continue;
    }
    r.status[i] = JacobiNode::used;
    ++r.used;
    C = std::max(C, -r.laplace_b.values[i] / r.weight.values[i]);
  }
  r.C_emp = C;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (r.status[i] != JacobiNode::used) continue;
    const double gb = r.grad_b_norm2.values[i];
    if (gb <= 1e-14) continue;
    r.c_emp = std::min(r.c_emp, (r.laplace_b.values[i] + C * r.weight.values[i]) / gb);
  }
  return r;
}

// ---------------------------------------------------------------------------
// sigma_k divergence structure

/// Newton tensor T_{k-1}(A) = sum_{j<k} (-1)^j sigma_{k-1-j}(A) A^j, which is
/// the derivative of sigma_k(A) with respect to the entries a_ij.
inline Matrix sigma_k_derivative(const SymMatrix& a, int k) {
  const std::size_t n = a.size();
  const Spectrum s = eigen_decompose(a);
  const Vec sig = elementary_symmetric(s.lambda);
  Matrix out(n);
  Matrix power = Matrix::identity(n);
  for (int j = 0; j < k; ++j) {
    const int idx = k - 1 - j;
    const double c = ((j % 2) ? -1.0 : 1.0) * (idx <= static_cast<int>(n) ? sig[static_cast<std::size_t>(idx)] : 0.0);
    out += c * power;
    power = power * a.matrix();
  }
  return out;
}

/// |k sigma_k(D^2u) - div(L_{sigma_k} Du)| per node, with the divergence taken
/// by centered differences of the flux L Du.
inline ScalarField sigma_divergence_residual(const ScalarField& u, int k) {
  const Grid& g = u.grid;
  const std::size_t n = g.dim();
  if (k < 1 || k > static_cast<int>(n)) throw InvalidInput("sigma_divergence_residual: need 1 <= k <= n");
  require_wide_grid(g, 5, "sigma_divergence_residual");
  const std::size_t d1 = u.depth + 1, d2 = u.depth + 2;
  std::vector<Vec> flux(g.size());
  std::vector<double> lhs(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d1) continue;
    const SymMatrix hess = fd_hessian(u, i);
    flux[i] = sigma_k_derivative(hess, k) * fd_gradient(u, i);
    lhs[i] = k * sigma_k(eigen_decompose(hess).lambda, k);
  }
  ScalarField out(g, std::numeric_limits<double>::quiet_NaN(), d2);
  const double inv2h = 0.5 / g.spacing();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d2) continue;
    double div = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t s = g.stride(a);
      div += (flux[i + s][a] - flux[i - s][a]) * inv2h;
    }
    out.values[i] = std::abs(lhs[i] - div);
  }
  return out;
}

}  // namespace lmc
