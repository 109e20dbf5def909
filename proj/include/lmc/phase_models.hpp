#pragma once

// Phase functions Theta(x, z, p) with their first and second partials, the
// self-similar soliton families, and sampled checkers for the structure
// conditions used by the interior estimates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/linalg.hpp"
#include "lmc/spectral.hpp"

namespace lmc {

/// Value and partial derivatives of Theta at one (x, z, p). Second partials
/// are stored as dxp(i, j) = d^2 Theta / dx_i dp_j.
struct PhaseJet {
  double value = 0.0;
  Vec dx;
  double dz = 0.0;
  Vec dp;
  Matrix dxx;
  Vec dxz;
  Matrix dxp;
  double dzz = 0.0;
  Vec dzp;
  Matrix dpp;

  PhaseJet() = default;
  explicit PhaseJet(std::size_t n)
      : dx(n, 0.0), dp(n, 0.0), dxx(n), dxz(n, 0.0), dxp(n), dzp(n, 0.0), dpp(n) {}
};

/// How much of the jet a caller needs; custom evaluators may skip the rest.
enum class JetOrder { value = 0, first = 1, second = 2 };

struct ConstantPhase {
  double c = 0.0;
};
/// s1 + s2 (x.p - 2z): shrinker for s2 > 0, expander for s2 < 0.
struct ShrinkerExpanderPhase {
  double s1 = 0.0;
  double s2 = 0.0;
};
/// g1 + g2.x + g3.p
struct TranslatorPhase {
  double g1 = 0.0;
  Vec g2;
  Vec g3;
};
/// r1 + (r2/2)(|x|^2 + |p|^2)
struct RotatorPhase {
  double r1 = 0.0;
  double r2 = 0.0;
};
struct CustomPhase {
  using Evaluator = std::function<PhaseJet(std::span<const double> x, double z,
                                           std::span<const double> p, JetOrder order)>;
  std::string name;
  Evaluator eval;
};

using PhaseVariant =
    std::variant<ConstantPhase, ShrinkerExpanderPhase, TranslatorPhase, RotatorPhase, CustomPhase>;

struct SampleRegion;

class PhaseModel {
 public:
  static PhaseModel constant(std::size_t n, double c) { return PhaseModel(n, ConstantPhase{c}); }
  static PhaseModel shrinker_expander(std::size_t n, double s1, double s2) {
    return PhaseModel(n, ShrinkerExpanderPhase{s1, s2});
  }
  static PhaseModel translator(double g1, Vec g2, Vec g3) {
    if (g2.size() != g3.size() || g2.empty())
      throw InvalidInput("translator: gamma2 and gamma3 must have the same nonzero length");
    const std::size_t n = g2.size();
    return PhaseModel(n, TranslatorPhase{g1, std::move(g2), std::move(g3)});
  }
  static PhaseModel rotator(std::size_t n, double r1, double r2) {
    return PhaseModel(n, RotatorPhase{r1, r2});
  }
  /// Wraps a programmatic evaluator. Unless `probe` is empty, the supplied
  /// derivatives are checked against central differences and rejected when
  /// the relative error exceeds `tolerance`.
  static PhaseModel custom(std::size_t n, std::string name, CustomPhase::Evaluator eval,
                           std::optional<SampleRegion> probe, double tolerance = 1e-6);

  std::size_t dim() const noexcept { return n_; }
  const PhaseVariant& variant() const noexcept { return v_; }
  bool is_custom() const { return std::holds_alternative<CustomPhase>(v_); }
  bool is_constant() const { return std::holds_alternative<ConstantPhase>(v_); }

  std::string name() const {
    return std::visit(
        [](const auto& v) -> std::string {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ConstantPhase>) return "constant";
          else if constexpr (std::is_same_v<T, ShrinkerExpanderPhase>)
            return v.s2 >= 0.0 ? "shrinker" : "expander";
          else if constexpr (std::is_same_v<T, TranslatorPhase>) return "translator";
          else if constexpr (std::is_same_v<T, RotatorPhase>) return "rotator";
          else return v.name;
        },
        v_);
  }

  PhaseJet eval(std::span<const double> x, double z, std::span<const double> p,
                JetOrder order = JetOrder::second) const {
    if (x.size() != n_ || p.size() != n_)
      throw InvalidInput("eval_phase: point dimension does not match the phase model");
    const std::size_t n = n_;
    return std::visit(
        [&](const auto& v) -> PhaseJet {
          using T = std::decay_t<decltype(v)>;
          PhaseJet j(n);
          if constexpr (std::is_same_v<T, ConstantPhase>) {
            j.value = v.c;
          } else if constexpr (std::is_same_v<T, ShrinkerExpanderPhase>) {
            j.value = v.s1 + v.s2 * (dot(x, p) - 2.0 * z);
            for (std::size_t i = 0; i < n; ++i) {
              j.dx[i] = v.s2 * p[i];
              j.dp[i] = v.s2 * x[i];
              j.dxp(i, i) = v.s2;
            }
            j.dz = -2.0 * v.s2;
          } else if constexpr (std::is_same_v<T, TranslatorPhase>) {
            j.value = v.g1 + dot(v.g2, x) + dot(v.g3, p);
            j.dx = v.g2;
            j.dp = v.g3;
          } else if constexpr (std::is_same_v<T, RotatorPhase>) {
            j.value = v.r1 + 0.5 * v.r2 * (dot(x, x) + dot(p, p));
            for (std::size_t i = 0; i < n; ++i) {
              j.dx[i] = v.r2 * x[i];
              j.dp[i] = v.r2 * p[i];
              j.dxx(i, i) = v.r2;
              j.dpp(i, i) = v.r2;
            }
          } else {
            j = v.eval(x, z, p, order);
          }
          return j;
        },
        v_);
  }

  double value(std::span<const double> x, double z, std::span<const double> p) const {
    return eval(x, z, p, JetOrder::value).value;
  }

 private:
  PhaseModel(std::size_t n, PhaseVariant v) : n_(n), v_(std::move(v)) {
    if (n_ == 0) throw InvalidInput("phase model dimension must be >= 1");
  }

  std::size_t n_ = 0;
  PhaseVariant v_;
};

inline PhaseJet eval_phase(const PhaseModel& model, std::span<const double> x, double z,
                           std::span<const double> p) {
  return model.eval(x, z, p);
}

// ---------------------------------------------------------------------------
// Sampling of Gamma_R-like regions

/// Product region {|x| <= x_radius} x [z_min, z_max] x {p_inner <= |p| <= p_outer}.
/// Sampling is deterministic for a fixed seed, and the unit-scale draws do not
/// depend on the radii, so nested regions see scaled copies of the same points.
struct SampleRegion {
  std::size_t n = 1;
  double x_radius = 1.0;
  double z_min = -1.0;
  double z_max = 1.0;
  double p_inner = 0.0;
  double p_outer = 1.0;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
};

struct SamplePoint {
  Vec x;
  double z = 0.0;
  Vec p;
};

inline std::vector<SamplePoint> sample_region(const SampleRegion& r) {
  if (r.count == 0 || r.n == 0 || !(r.x_radius >= 0.0) || !(r.z_max >= r.z_min) ||
      !(r.p_outer >= r.p_inner) || r.p_inner < 0.0)
    throw InvalidInput("sample_region: empty or malformed region");
  std::mt19937_64 rng(r.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double inv_n = 1.0 / static_cast<double>(r.n);

  auto direction = [&] {
    Vec d(r.n);
    double len = 0.0;
    do {
      for (double& v : d) v = gauss(rng);
      len = norm(d);
    } while (len < 1e-12);
    for (double& v : d) v /= len;
    return d;
  };
  // Mix of uniform-in-ball, log-spaced and boundary radii.
  auto fraction = [&](std::size_t mode) {
    const double u = unif(rng);
    switch (mode) {
      case 2: return std::pow(10.0, -6.0 * u);
      case 3: return 1.0;
      default: return std::pow(u, inv_n);
    }
  };

  std::vector<SamplePoint> out;
  out.reserve(r.count);
  for (std::size_t i = 0; i < r.count; ++i) {
    const std::size_t mode = i % 4;
    SamplePoint s;
    Vec dx = direction();
    const double fx = fraction(mode);
    s.x.resize(r.n);
    for (std::size_t k = 0; k < r.n; ++k) s.x[k] = r.x_radius * fx * dx[k];
    const double uz = unif(rng);
    s.z = mode == 3 ? ((i / 4) % 2 ? r.z_max : r.z_min) : r.z_min + (r.z_max - r.z_min) * uz;
    Vec dp = direction();
    const double fp = fraction(mode);
    const double pr = r.p_inner + (r.p_outer - r.p_inner) * fp;
    s.p.resize(r.n);
    for (std::size_t k = 0; k < r.n; ++k) s.p[k] = pr * dp[k];
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derivative consistency

namespace detail {

/// Gradient of Theta in the stacked variable (x, z, p).
inline Vec stacked_gradient(const PhaseJet& j) {
  const std::size_t n = j.dx.size();
  Vec g(2 * n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = j.dx[i];
    g[n + 1 + i] = j.dp[i];
  }
  g[n] = j.dz;
  return g;
}

inline Matrix stacked_hessian(const PhaseJet& j) {
  const std::size_t n = j.dx.size();
  Matrix h(2 * n + 1);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      h(a, b) = j.dxx(a, b);
      h(a, n + 1 + b) = j.dxp(a, b);
      h(n + 1 + b, a) = j.dxp(a, b);
      h(n + 1 + a, n + 1 + b) = j.dpp(a, b);
    }
    h(a, n) = h(n, a) = j.dxz[a];
    h(n + 1 + a, n) = h(n, n + 1 + a) = j.dzp[a];
  }
  h(n, n) = j.dzz;
  return h;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace detail

/// Largest relative discrepancy between the analytic partials of `model` and
/// central differences (of the value for first partials, of the analytic first
/// partials for second partials), over the sample of `region`.
inline double derivative_consistency_error(const PhaseModel& model, const SampleRegion& region) {
  const std::size_t n = model.dim();
  SampleRegion r = region;
  r.n = n;
  double worst = 0.0;
  for (const SamplePoint& s : sample_region(r)) {
    Vec v(2 * n + 1);
    std::copy(s.x.begin(), s.x.end(), v.begin());
    v[n] = s.z;
    std::copy(s.p.begin(), s.p.end(), v.begin() + static_cast<std::ptrdiff_t>(n + 1));
    auto split_eval = [&](const Vec& w, JetOrder order) {
      std::span<const double> ws(w);
      return model.eval(ws.subspan(0, n), w[n], ws.subspan(n + 1, n), order);
    };
    const PhaseJet jet = split_eval(v, JetOrder::second);
    const Vec g = detail::stacked_gradient(jet);
    const Matrix h = detail::stacked_hessian(jet);
    for (std::size_t a = 0; a < 2 * n + 1; ++a) {
      const double step = 1e-5 * std::max(1.0, std::abs(v[a]));
      Vec vp = v, vm = v;
      vp[a] += step;
      vm[a] -= step;
      const PhaseJet jp = split_eval(vp, JetOrder::first);
      const PhaseJet jm = split_eval(vm, JetOrder::first);
      const double fd = (jp.value - jm.value) / (2.0 * step);
      worst = std::max(worst, detail::rel_err(g[a], fd));
      const Vec gp = detail::stacked_gradient(jp);
      const Vec gm = detail::stacked_gradient(jm);
      for (std::size_t b = 0; b < 2 * n + 1; ++b)
        worst = std::max(worst, detail::rel_err(h(b, a), (gp[b] - gm[b]) / (2.0 * step)));
    }
  }
  return worst;
}

inline PhaseModel PhaseModel::custom(std::size_t n, std::string name, CustomPhase::Evaluator eval,
                                     std::optional<SampleRegion> probe, double tolerance) {
  if (!eval) throw InvalidInput("custom phase: empty evaluator");
  PhaseModel m(n, CustomPhase{std::move(name), std::move(eval)});
  if (probe) {
    const double err = derivative_consistency_error(m, *probe);
    if (!(err <= tolerance))
      throw InvalidInput("custom phase '" + m.name() +
                         "': supplied derivatives disagree with finite differences (relative error " +
                         std::to_string(err) + ")");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Structure bounds and condition checks

struct StructureBounds {
  double nu1 = 0.0;  // sup |Theta_x|, |Theta_z|, |Theta_p|
  double nu2 = 0.0;  // sup |Theta_xx|, |Theta_xz|, |Theta_xp|, |Theta_zz|, |Theta_zp|
  SampleRegion region;
};

inline StructureBounds structure_bounds(const PhaseModel& model, const SampleRegion& region) {
  SampleRegion r = region;
  r.n = model.dim();
  StructureBounds b{0.0, 0.0, r};
  for (const SamplePoint& s : sample_region(r)) {
    const PhaseJet j = model.eval(s.x, s.z, s.p);
    b.nu1 = std::max({b.nu1, norm(j.dx), std::abs(j.dz), norm(j.dp)});
    b.nu2 = std::max({b.nu2, operator_norm(j.dxx), norm(j.dxz), operator_norm(j.dxp),
                      std::abs(j.dzz), norm(j.dzp)});
  }
  return b;
}

struct ConditionResult {
  bool pass = true;
  /// Smallest constant that would make the sampled inequality hold
  /// (for the Theta_z condition: the minimum sampled Theta_z).
  double minimal_constant = 0.0;
  std::optional<SamplePoint> witness;
  double witness_value = 0.0;
};

struct GradientConditionReport {
  ConditionResult cond_a;  // |D_x Theta| <= C (Theta - (n-2)pi/2)^(1/2), plus uniform Theta_xx
  ConditionResult cond_b;  // Theta_z >= 0
  ConditionResult cond_c;  // |p| |D_p Theta| <= C (Theta - (n-2)pi/2)
  double constant = 1.0;
  /// sup |Theta_xx| over the region with the p-range scaled by 1, 2, 4, 8.
  std::vector<double> xx_sup_by_scale;
  bool xx_uniform = true;
  std::size_t evaluated = 0;
  std::size_t skipped_subcritical = 0;
};

inline GradientConditionReport gradient_conditions_check(const PhaseModel& model,
                                                         const SampleRegion& region,
                                                         double constant = 1.0) {
  const std::size_t n = model.dim();
  const double crit = critical_phase(n);
  SampleRegion r = region;
  r.n = n;

  GradientConditionReport rep;
  rep.constant = constant;
  rep.cond_b.minimal_constant = std::numeric_limits<double>::infinity();
  double worst_a = 0.0, worst_c = 0.0;

  auto ratio = [](double lhs, double denom) {
    if (lhs <= 1e-14) return 0.0;
    return denom > 0.0 ? lhs / denom : std::numeric_limits<double>::infinity();
  };

  for (const SamplePoint& s : sample_region(r)) {
    const PhaseJet j = model.eval(s.x, s.z, s.p, JetOrder::first);
    if (j.dz < rep.cond_b.minimal_constant) {
      rep.cond_b.minimal_constant = j.dz;
      if (j.dz < -1e-14) {
        rep.cond_b.pass = false;
        rep.cond_b.witness = s;
        rep.cond_b.witness_value = j.dz;
      }
    }
    const double margin = j.value - crit;
    if (margin < 0.0) {
      ++rep.skipped_subcritical;
      continue;
    }
    ++rep.evaluated;
    const double ra = ratio(norm(j.dx), std::sqrt(margin));
    if (ra > worst_a) {
      worst_a = ra;
      rep.cond_a.witness = s;
      rep.cond_a.witness_value = ra;
    }
    const double rc = ratio(norm(s.p) * norm(j.dp), margin);
    if (rc > worst_c) {
      worst_c = rc;
      rep.cond_c.witness = s;
      rep.cond_c.witness_value = rc;
    }
  }

  for (double scale : {1.0, 2.0, 4.0, 8.0}) {
    SampleRegion rs = r;
    rs.p_inner = r.p_inner;
    rs.p_outer = r.p_inner + scale * (r.p_outer - r.p_inner);
    double sup = 0.0;
    for (const SamplePoint& s : sample_region(rs))
      sup = std::max(sup, operator_norm(model.eval(s.x, s.z, s.p).dxx));
    rep.xx_sup_by_scale.push_back(sup);
  }
  rep.xx_uniform = rep.xx_sup_by_scale.back() <= 2.0 * rep.xx_sup_by_scale.front() + 1e-9;

  rep.cond_a.minimal_constant = worst_a;
  rep.cond_a.pass = worst_a <= constant * (1.0 + 1e-12) && rep.xx_uniform;
  if (rep.cond_a.pass) rep.cond_a.witness.reset();
  rep.cond_c.minimal_constant = worst_c;
  rep.cond_c.pass = worst_c <= constant * (1.0 + 1e-12);
  if (rep.cond_c.pass) rep.cond_c.witness.reset();
  return rep;
}

struct ConvexityReport {
  bool pass = true;
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  std::optional<SamplePoint> witness;
};

/// Theta_pp positive semidefinite (min eigenvalue >= -1e-10) at every sample.
inline ConvexityReport partial_convexity_check(const PhaseModel& model, const SampleRegion& region) {
  SampleRegion r = region;
  r.n = model.dim();
  ConvexityReport rep;
  for (const SamplePoint& s : sample_region(r)) {
    const PhaseJet j = model.eval(s.x, s.z, s.p);
    const double lmin = eigen_decompose(SymMatrix::symmetrized(j.dpp)).lambda.back();
    if (lmin < rep.min_eigenvalue) {
      rep.min_eigenvalue = lmin;
      if (lmin < -1e-10) {
        rep.pass = false;
        rep.witness = s;
      }
    }
  }
  return rep;
}

}  // namespace lmc
