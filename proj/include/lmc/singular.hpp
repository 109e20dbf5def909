#pragma once

// Closed-form Hoelder-but-not-Lipschitz solutions of one-dimensional
// equations arctan u'' = Theta(x, u, u'), their matched phases, touching
// tests with quadratic test functions, and quadratic lifts to n dimensions.
//
//   OddPower(q, m): u = sign(x)|x|^a, a = (q-2)/(2m+q),
//                   u^{2m+1} (u')^q = -C1 u'',   Theta = -arctan(z^{2m+1} p^q / C1)
//   XPower(q, m):   u = sign(x)|x|^a, a = (q-3-2m)/(q-1),
//                   x^{2m+1} (u')^q = C u'',     Theta =  arctan(x^{2m+1} p^q / C)
//   LogType:        u' = sqrt(L), L = -ln|x|,
//                   2u'' = -x e^{2(u')^2} / u',  Theta = -arctan(x e^{2p^2} / (2p))

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/linalg.hpp"
#include "lmc/phase_models.hpp"
#include "lmc/spectral.hpp"

namespace lmc {

struct OddPower {
  int q = 4;
  int m = 0;
};
struct XPower {
  int q = 5;
  int m = 0;
};
struct LogType {};

using BaseFamily = std::variant<OddPower, XPower, LogType>;

/// u(x) = v(x_1) + sum_i a_i x_{i+1}^2 / 2 for a one-dimensional base v.
struct Lift {
  BaseFamily base;
  Vec a;
};

using SingularFamily = std::variant<OddPower, XPower, LogType, Lift>;

inline std::string family_name(const BaseFamily& f) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, OddPower>)
          return "odd_power(" + std::to_string(v.q) + "," + std::to_string(v.m) + ")";
        else if constexpr (std::is_same_v<T, XPower>)
          return "x_power(" + std::to_string(v.q) + "," + std::to_string(v.m) + ")";
        else
          return "log_type";
      },
      f);
}

inline std::string family_name(const SingularFamily& f) {
  if (const auto* l = std::get_if<Lift>(&f)) return "lift[" + family_name(l->base) + "]";
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Lift>) return "";
        else return family_name(BaseFamily(v));
      },
      f);
}

// ---------------------------------------------------------------------------
// Closed-form solutions

/// One-dimensional solution with its matched phase Theta(x, z, p). For lifts
/// the evaluators describe the base profile and `lift` holds the a_i.
struct ClosedFormSolution {
  std::string name;
  std::function<double(double)> u;
  std::function<double(double)> du;
  std::function<double(double)> ddu;
  PhaseModel phase = PhaseModel::constant(1, 0.0);
  std::optional<double> alpha;  // Hoelder exponent for power families
  double coefficient = 0.0;     // C1 (odd power), C (x power), 1/2 (log type)
  double domain_min = 0.0;      // admissible |x| range
  double domain_max = std::numeric_limits<double>::infinity();
  bool odd = true;
  Vec lift;

  std::size_t dim() const { return 1 + lift.size(); }

  /// sum arctan a_i
  double lift_shift() const {
    double s = 0.0;
    for (double a : lift) s += std::atan(a);
    return s;
  }

  /// Full potential in dim() variables.
  double value(std::span<const double> x) const {
    double v = u(x[0]);
    for (std::size_t i = 0; i < lift.size(); ++i) v += 0.5 * lift[i] * x[i + 1] * x[i + 1];
    return v;
  }

  /// arctan u''(x) - Theta(x, u(x), u'(x)) for the base profile.
  double base_residual(double x) const {
    const double ux = u(x), px = du(x);
    return std::atan(ddu(x)) - phase.value(std::span<const double>(&x, 1), ux, std::span<const double>(&px, 1));
  }

  /// Quadratic control case u = a x^2/2 with constant phase arctan a.
  static ClosedFormSolution quadratic(double a) {
    ClosedFormSolution s;
    s.name = "quadratic";
    s.u = [a](double x) { return 0.5 * a * x * x; };
    s.du = [a](double x) { return a * x; };
    s.ddu = [a](double) { return a; };
    s.phase = PhaseModel::constant(1, std::atan(a));
    s.coefficient = a;
    s.odd = false;
    return s;
  }
};

namespace detail {

/// c * b^k for integer k, with 0 whenever c == 0 (so b^{-1} at b = 0 never appears).
inline double mono(double c, double b, int k) {
  if (c == 0.0) return 0.0;
  if (k >= 0) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= b;
    return c * r;
  }
  return c / mono(1.0, b, -k);
}

/// Jet of -arctan(w) in the single variables (x, z, p), given w and its
/// first and second partials ordered (x, z, p).
inline PhaseJet neg_arctan_jet(double w, const double dw[3], const double d2w[3][3], JetOrder order) {
  PhaseJet j(1);
  j.value = -std::atan(w);
  if (order == JetOrder::value) return j;
  // Written with w/(1+w^2) and w^2/(1+w^2) so large |w| neither overflows nor
  // produces inf/inf.
  const bool big = std::abs(w) > 1.0;
  const double h = big ? 1.0 / (w + 1.0 / w) : w / (1.0 + w * w);
  const double inv = big ? h / w : 1.0 / (1.0 + w * w);
  double first[3];
  for (int a = 0; a < 3; ++a) first[a] = -dw[a] * inv;
  j.dx[0] = first[0];
  j.dz = first[1];
  j.dp[0] = first[2];
  if (order == JetOrder::first) return j;
  auto second = [&](int a, int b) {
    if (big) return -d2w[a][b] * inv + 2.0 * (dw[a] / w) * (dw[b] / w) * h * (w * h);
    return -d2w[a][b] * inv + 2.0 * w * dw[a] * dw[b] * inv * inv;
  };
  j.dxx(0, 0) = second(0, 0);
  j.dxz[0] = second(0, 1);
  j.dxp(0, 0) = second(0, 2);
  j.dzz = second(1, 1);
  j.dzp[0] = second(1, 2);
  j.dpp(0, 0) = second(2, 2);
  return j;
}

inline double sgn(double x) { return (x > 0.0) - (x < 0.0); }

inline void power_profile(ClosedFormSolution& s, double a) {
  s.u = [a](double x) { return sgn(x) * std::pow(std::abs(x), a); };
  s.du = [a](double x) { return a * std::pow(std::abs(x), a - 1.0); };
  s.ddu = [a](double x) { return a * (a - 1.0) * sgn(x) * std::pow(std::abs(x), a - 2.0); };
  s.alpha = a;
  s.domain_min = 0.0;
  s.odd = true;
}

inline ClosedFormSolution build_base(const BaseFamily& family) {
  ClosedFormSolution s;
  s.name = family_name(family);
  if (const auto* f = std::get_if<OddPower>(&family)) {
    if (f->q < 3 || f->m < 0) throw InvalidFamily(s.name + ": need q >= 3 and m >= 0");
    const double a = static_cast<double>(f->q - 2) / static_cast<double>(2 * f->m + f->q);
    if (!(a > 0.0 && a < 1.0)) throw InvalidFamily(s.name + ": exponent outside (0,1)");
    power_profile(s, a);
    // u^{2m+1}(u')^q = a^q/(a(a-1)) u'' = -C1 u''
    const double c1 = std::pow(a, f->q) / (a * (1.0 - a));
    s.coefficient = c1;
    const int e = 2 * f->m + 1, q = f->q;
    auto eval = [c1, e, q](std::span<const double>, double z, std::span<const double> p, JetOrder order) {
      const double pp = p[0];
      const double w = mono(1.0 / c1, z, e) * mono(1.0, pp, q);
      const double dw[3] = {0.0, mono(e / c1, z, e - 1) * mono(1.0, pp, q), mono(q / c1, z, e) * mono(1.0, pp, q - 1)};
      const double zz = mono(static_cast<double>(e) * (e - 1) / c1, z, e - 2) * mono(1.0, pp, q);
      const double zp = mono(static_cast<double>(e) * q / c1, z, e - 1) * mono(1.0, pp, q - 1);
      const double ppw = mono(static_cast<double>(q) * (q - 1) / c1, z, e) * mono(1.0, pp, q - 2);
      const double d2w[3][3] = {{0.0, 0.0, 0.0}, {0.0, zz, zp}, {0.0, zp, ppw}};
      return neg_arctan_jet(w, dw, d2w, order);
    };
    s.phase = PhaseModel::custom(1, s.name, eval, std::nullopt);
  } else if (const auto* f = std::get_if<XPower>(&family)) {
    if (f->q < 2 || f->m < 0) throw InvalidFamily(s.name + ": need q >= 2 and m >= 0");
    const double a = static_cast<double>(f->q - 3 - 2 * f->m) / static_cast<double>(f->q - 1);
    if (!(a > 0.0 && a < 1.0)) throw InvalidFamily(s.name + ": exponent outside (0,1)");
    power_profile(s, a);
    // x^{2m+1}(u')^q = a^q/(a(a-1)) u'' = C u''
    const double c = std::pow(a, f->q) / (a * (a - 1.0));
    s.coefficient = c;
    const int e = 2 * f->m + 1, q = f->q;
    // Theta = arctan(x^e p^q / C) = -arctan(w), w = -x^e p^q / C
    const double k = -1.0 / c;
    auto eval = [k, e, q](std::span<const double> x, double, std::span<const double> p, JetOrder order) {
      const double xx = x[0], pp = p[0];
      const double w = mono(k, xx, e) * mono(1.0, pp, q);
      const double dw[3] = {mono(k * e, xx, e - 1) * mono(1.0, pp, q), 0.0, mono(k * q, xx, e) * mono(1.0, pp, q - 1)};
      const double x2 = mono(k * e * (e - 1), xx, e - 2) * mono(1.0, pp, q);
      const double xp = mono(k * e * q, xx, e - 1) * mono(1.0, pp, q - 1);
      const double p2 = mono(k * q * (q - 1), xx, e) * mono(1.0, pp, q - 2);
      const double d2w[3][3] = {{x2, 0.0, xp}, {0.0, 0.0, 0.0}, {xp, 0.0, p2}};
      return neg_arctan_jet(w, dw, d2w, order);
    };
    s.phase = PhaseModel::custom(1, s.name, eval, std::nullopt);
  } else {
    // u(x) = sign(x) [ |x| sqrt(L) + (sqrt(pi)/2) erfc(sqrt(L)) ],  L = -ln|x|
    s.u = [](double x) {
      const double ax = std::abs(x);
      if (ax == 0.0) return 0.0;
      const double r = std::sqrt(-std::log(ax));
      return sgn(x) * (ax * r + 0.5 * std::sqrt(kPi) * std::erfc(r));
    };
    s.du = [](double x) { return std::sqrt(-std::log(std::abs(x))); };
    s.ddu = [](double x) { return -1.0 / (2.0 * x * std::sqrt(-std::log(std::abs(x)))); };
    s.coefficient = 0.5;
    s.domain_min = 1e-12;
    s.domain_max = 0.9;
    s.odd = true;
    auto eval = [](std::span<const double> x, double, std::span<const double> p, JetOrder order) {
      const double xx = x[0], pp = p[0];
      const double e2 = std::exp(2.0 * pp * pp);
      const double g = e2 / pp;                                      // e^{2p^2}/p
      const double g1 = e2 * (4.0 * pp * pp - 1.0) / (pp * pp);      // g'
      const double g2 = e2 * (16.0 * pp - 4.0 / pp + 2.0 / (pp * pp * pp));  // g''
      const double w = 0.5 * xx * g;
      const double dw[3] = {0.5 * g, 0.0, 0.5 * xx * g1};
      const double d2w[3][3] = {{0.0, 0.0, 0.5 * g1}, {0.0, 0.0, 0.0}, {0.5 * g1, 0.0, 0.5 * xx * g2}};
      return neg_arctan_jet(w, dw, d2w, order);
    };
    s.phase = PhaseModel::custom(1, s.name, eval, std::nullopt);
  }
  return s;
}

}  // namespace detail

/// Evaluators and matched phase for a family; lifts keep the base profile and
/// record the quadratic coefficients.
inline ClosedFormSolution build(const SingularFamily& family) {
  if (const auto* l = std::get_if<Lift>(&family)) {
    ClosedFormSolution s = detail::build_base(l->base);
    if (!all_finite(l->a)) throw InvalidFamily("lift: non-finite coefficient");
    s.lift = l->a;
    s.name = family_name(family);
    return s;
  }
  return std::visit(
      [](const auto& v) -> ClosedFormSolution {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Lift>) return {};
        else return detail::build_base(BaseFamily(v));
      },
      family);
}

/// Max |arctan u''(x) - Theta(x, u(x), u'(x))| over the samples.
inline double ode_residual(const ClosedFormSolution& sol, std::span<const double> points) {
  double worst = 0.0;
  for (double x : points) {
    if (!(std::abs(x) >= 1e-6)) throw InvalidInput("ode_residual: sample within 1e-6 of the singular point");
    if (std::abs(x) > sol.domain_max) throw InvalidInput("ode_residual: sample outside the family's domain");
    worst = std::max(worst, std::abs(sol.base_residual(x)));
  }
  return worst;
}

/// `count` log-spaced points in [lo, hi].
inline Vec log_spaced(double lo, double hi, std::size_t count) {
  Vec v(count);
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i)
    v[i] = std::pow(10.0, count == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  return v;
}

// ---------------------------------------------------------------------------
// Difference quotients near the singular point

/// sup over pairs {x, x + r} with x in [-r, 0] of |u(x+r) - u(x)| / r^beta.
inline double difference_quotient(const ClosedFormSolution& sol, double r, double beta, std::size_t offsets = 201) {
  double best = 0.0;
  for (std::size_t i = 0; i < offsets; ++i) {
    const double x = -r * static_cast<double>(i) / static_cast<double>(offsets - 1);
    best = std::max(best, std::abs(sol.u(x + r) - sol.u(x)) / std::pow(r, beta));
  }
  return best;
}

inline double lipschitz_quotient(const ClosedFormSolution& sol, double r) { return difference_quotient(sol, r, 1.0); }

inline double holder_quotient(const ClosedFormSolution& sol, double r) {
  if (!sol.alpha) throw InvalidFamily("holder_quotient: family has no power exponent");
  return difference_quotient(sol, r, *sol.alpha);
}

// ---------------------------------------------------------------------------
// Touching tests

/// Quadratic test functions phi(x) = u(x0) + p (x - x0) + M (x - x0)^2 / 2 with
/// |p| <= p_max, |M| <= m_max, compared with u on punctured neighbourhoods
/// {x0 + d : r_min <= |d| <= r_max}. Level k uses r_min = r_max 10^{-D_k} with
/// D_k = decades * growth^k; at a classical point D_k is capped at
/// `classical_decades` because difference quotients lose digits below that.
struct TouchOptions {
  double p_max = 1e3;
  double m_max = 1e3;
  std::size_t m_steps = 201;
  double r_max = 1e-1;
  double decades = 1.0;
  double growth = 10.0;
  int levels = 7;
  double classical_decades = 2.0;
  std::size_t offsets_per_level = 400;
  double tolerance = 1e-6;
};

struct TouchLevel {
  double decades = 0.0;  // log10(r_max / r_min)
  bool touches_above = false;
  bool touches_below = false;
  /// smallest M touching from above / largest M touching from below (NaN if none)
  double m_above = std::numeric_limits<double>::quiet_NaN();
  double m_below = std::numeric_limits<double>::quiet_NaN();
  /// lower end of the admissible slope window from above at M = m_max
  double min_slope_above = std::numeric_limits<double>::quiet_NaN();
};

struct TouchReport {
  double x0 = 0.0;
  std::vector<TouchLevel> levels;
  bool touches_above = false;  // at the finest level
  bool touches_below = false;
  std::size_t tested = 0;      // (M, side) combinations with a nonempty slope window
  std::size_t violations = 0;  // touching functions breaking the sub/supersolution inequality
  double worst_violation = 0.0;
  /// |arctan u''(x0) - Theta(x0, u, u')| when x0 is a classical point.
  std::optional<double> classical_residual;
  /// arctan(M*) - Theta(x0, u, u') at the extremal touching curvatures.
  std::optional<double> above_gap;
  std::optional<double> below_gap;

  bool admissible_touch() const { return touches_above || touches_below; }
};

namespace detail {

/// Offset d together with the secant slope (u(x0 + d) - u(x0)) / d.
struct Secant {
  double d;
  bool right;  // d > 0, kept separately because e^{-L} underflows
  double slope;
};

struct SlopeWindow {
  double lo;
  double hi;
  bool feasible() const { return lo <= hi; }
};

/// Slopes p with phi - u >= 0 (above) or <= 0 (below) at every offset, for fixed M.
inline SlopeWindow slope_window(const std::vector<Secant>& s, double M, bool above, double p_max) {
  double lo = -p_max, hi = p_max;
  for (const Secant& c : s) {
    const double a = c.slope - 0.5 * M * c.d;
    if (c.right == above) lo = std::max(lo, a);
    else hi = std::min(hi, a);
  }
  return {lo, hi};
}

/// e^{s^2} erfc(s)
inline double erfcx(double s) {
  if (s < 20.0) return std::exp(s * s) * std::erfc(s);
  const double t = 1.0 / (s * s);
  return (1.0 - 0.5 * t + 0.75 * t * t - 1.875 * t * t * t) / (s * std::sqrt(kPi));
}

}  // namespace detail

/// u(r)/r as a function of L = -ln r for the odd families, which lets the
/// origin scan reach offsets far below the smallest double.
inline std::function<double(double)> origin_secant(const ClosedFormSolution& sol) {
  if (!sol.odd) return {};
  if (sol.alpha) {
    const double a = *sol.alpha;
    return [a](double L) { return std::exp((1.0 - a) * L); };
  }
  if (sol.name.find("log_type") != std::string::npos)
    return [](double L) {
      const double r = std::sqrt(L);
      return r + 0.5 * std::sqrt(kPi) * detail::erfcx(r);
    };
  return {};
}

inline TouchReport viscosity_touch_test(const ClosedFormSolution& sol, double x0, const TouchOptions& opts = {}) {
  if (!(opts.p_max > 0.0 && opts.m_max > 0.0 && opts.r_max > 0.0 && opts.decades > 0.0 && opts.levels > 0 &&
        opts.m_steps >= 2 && opts.offsets_per_level >= 2))
    throw InvalidInput("viscosity_touch_test: malformed test family");
  TouchReport rep;
  rep.x0 = x0;
  const std::function<double(double)> secant = x0 == 0.0 ? origin_secant(sol) : nullptr;
  const bool singular = static_cast<bool>(secant);
  const double u0 = sol.u(x0);
  if (!singular) {
    if (std::abs(x0) > sol.domain_max || std::abs(x0) < sol.domain_min)
      throw InvalidInput("viscosity_touch_test: point outside the family's domain");
    rep.classical_residual = std::abs(sol.base_residual(x0));
  }
  auto theta_at = [&](double p) { return sol.phase.value(std::span<const double>(&x0, 1), u0, std::span<const double>(&p, 1)); };

  for (int level = 0; level < opts.levels; ++level) {
    double dec = opts.decades * std::pow(opts.growth, level);
    if (!singular) dec = std::min(dec, opts.classical_decades);
    std::vector<detail::Secant> sec;
    const double l0 = -std::log(opts.r_max), l1 = l0 + dec * std::log(10.0);
    for (std::size_t i = 0; i < opts.offsets_per_level; ++i) {
      const double L = l0 + (l1 - l0) * static_cast<double>(i) / static_cast<double>(opts.offsets_per_level - 1);
      const double r = std::exp(-L);
      if (secant) {
        // odd profile: the secant slope is the same on both sides
        const double q = secant(L);
        sec.push_back({r, true, q});
        sec.push_back({-r, false, q});
        continue;
      }
      for (double s : {1.0, -1.0}) {
        const double x = x0 + s * r;
        if (std::abs(x) > sol.domain_max || x == x0) continue;
        sec.push_back({x - x0, s > 0.0, (sol.u(x) - u0) / (x - x0)});
      }
    }
    TouchLevel lv;
    lv.decades = dec;
    for (std::size_t k = 0; k < opts.m_steps; ++k) {
      const double M = -opts.m_max + 2.0 * opts.m_max * static_cast<double>(k) / static_cast<double>(opts.m_steps - 1);
      for (bool above : {true, false}) {
        const detail::SlopeWindow w = detail::slope_window(sec, M, above, opts.p_max);
        if (!w.feasible()) continue;
        ++rep.tested;
        // coarse grids admit spurious touchers; check the inequality on the finest only
        if (singular || level + 1 < opts.levels) continue;
        // subsolution: F(M) >= Theta when touching from above; supersolution reversed
        for (double p : {w.lo, w.hi}) {
          const double gap = std::atan(M) - theta_at(p);
          const double bad = above ? -gap : gap;
          if (bad > opts.tolerance) {
            ++rep.violations;
            rep.worst_violation = std::max(rep.worst_violation, bad);
          }
        }
      }
    }
    // Feasibility is monotone in M (upward from above, downward from below),
    // so the extremal curvature is found by bisection.
    auto extremal = [&](bool above) {
      double good = above ? opts.m_max : -opts.m_max;
      if (!detail::slope_window(sec, good, above, opts.p_max).feasible()) return std::numeric_limits<double>::quiet_NaN();
      double bad = -good;
      if (detail::slope_window(sec, bad, above, opts.p_max).feasible()) return bad;
      for (int it = 0; it < 200 && std::abs(good - bad) > 1e-14 * std::max(1.0, std::abs(good)); ++it) {
        const double mid = 0.5 * (good + bad);
        if (detail::slope_window(sec, mid, above, opts.p_max).feasible()) good = mid;
        else bad = mid;
      }
      return good;
    };
    lv.m_above = extremal(true);
    lv.m_below = extremal(false);
    lv.touches_above = std::isfinite(lv.m_above);
    lv.touches_below = std::isfinite(lv.m_below);
    lv.min_slope_above = detail::slope_window(sec, opts.m_max, true, std::numeric_limits<double>::infinity()).lo;
    rep.levels.push_back(lv);
  }
  const TouchLevel& fin = rep.levels.back();
  rep.touches_above = fin.touches_above;
  rep.touches_below = fin.touches_below;
  if (rep.classical_residual) {
    const double p0 = sol.du(x0);
    if (fin.touches_above) rep.above_gap = std::atan(fin.m_above) - theta_at(p0);
    if (fin.touches_below) rep.below_gap = std::atan(fin.m_below) - theta_at(p0);
  }
  return rep;
}
// ---------------------------------------------------------------------------
// Lifts

struct LiftPhaseRange {
  double base_min = 0.0;
  double base_max = 0.0;
  double shift = 0.0;
  double total_min = 0.0;
  double total_max = 0.0;
  double critical = 0.0;
  /// Sample x_1 where the total phase falls below (n-2)pi/2.
  std::optional<double> witness;
  double witness_phase = 0.0;
  /// max |sum arctan eig(D^2u) - (base + shift)| over the samples.
  double additivity_error = 0.0;
};

/// Range of the total phase arctan v''(x_1) + sum arctan a_i over samples of
/// x_1 log-spaced toward the singular point on both sides.
inline LiftPhaseRange lift_phase_range(const Lift& family, std::size_t samples = 2000) {
  const ClosedFormSolution s = build(SingularFamily(family));
  const std::size_t n = s.dim();
  LiftPhaseRange r;
  r.shift = s.lift_shift();
  r.critical = critical_phase(n);
  r.base_min = std::numeric_limits<double>::infinity();
  r.base_max = -r.base_min;
  const double lo = std::max(s.domain_min, 1e-12);
  const double hi = std::min(s.domain_max, 0.9);
  double best = std::numeric_limits<double>::infinity();
  for (double ax : log_spaced(lo, hi, samples))
    for (double x : {ax, -ax}) {
      const double v2 = s.ddu(x);
      const double base = std::atan(v2);
      r.base_min = std::min(r.base_min, base);
      r.base_max = std::max(r.base_max, base);
      Vec diag{v2};
      diag.insert(diag.end(), s.lift.begin(), s.lift.end());
      const double total = lagrangian_phase(eigen_decompose(SymMatrix::diagonal(diag)));
      r.additivity_error = std::max(r.additivity_error, std::abs(total - (base + r.shift)));
      if (total < best) {
        best = total;
        if (total < r.critical) {
          r.witness = x;
          r.witness_phase = total;
        }
      }
    }
  r.total_min = r.base_min + r.shift;
  r.total_max = r.base_max + r.shift;
  return r;
}

/// n-dimensional phase Theta(x, p) = Theta_1(x_1, u(x_1), p_1) + sum arctan a_i of a lift.
/// The base phase only sees the first coordinate; z is passed through for the
/// u-coupled base.
inline PhaseModel lift_phase_model(const ClosedFormSolution& s) {
  const std::size_t n = s.dim();
  const double shift = s.lift_shift();
  PhaseModel base = s.phase;
  auto eval = [base, shift, n](std::span<const double> x, double z, std::span<const double> p, JetOrder order) {
    const PhaseJet b = base.eval(x.subspan(0, 1), z, p.subspan(0, 1), order);
    PhaseJet j(n);
    j.value = b.value + shift;
    j.dx[0] = b.dx[0];
    j.dz = b.dz;
    j.dp[0] = b.dp[0];
    j.dxx(0, 0) = b.dxx(0, 0);
    j.dxz[0] = b.dxz[0];
    j.dxp(0, 0) = b.dxp(0, 0);
    j.dzz = b.dzz;
    j.dzp[0] = b.dzp[0];
    j.dpp(0, 0) = b.dpp(0, 0);
    return j;
  };
  return PhaseModel::custom(n, s.name, eval, std::nullopt);
}

}  // namespace lmc
