#pragma once

// Dirichlet problems for sum_i arctan lambda_i(D^2u) = Theta(x, u, Du) on box
// grids: damped Newton on the finite-difference residual, the explicit
// potential flow u_t = sum arctan lambda_i, soliton residuals and
// manufactured problems with known solutions.

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/graph_geometry.hpp"
#include "lmc/grid.hpp"
#include "lmc/linalg.hpp"
#include "lmc/phase_models.hpp"
#include "lmc/spectral.hpp"

namespace lmc {

// ---------------------------------------------------------------------------
// Closed-form potentials

/// u* with derivatives up to third order. `third` is flattened as (i*n+j)*n+k.
struct ClosedFormPotential {
  std::size_t n = 0;
  std::string name;
  std::function<double(std::span<const double>)> value;
  std::function<Vec(std::span<const double>)> gradient;
  std::function<SymMatrix(std::span<const double>)> hessian;
  std::function<Vec(std::span<const double>)> third;

  /// phi(|x|^2) with phi(s) = sum_k c[k] s^k (c[0] is the constant term).
  static ClosedFormPotential radial_polynomial(std::size_t n, Vec c, std::string name = "radial") {
    if (n == 0) throw InvalidInput("radial potential: dimension must be >= 1");
    auto deriv = [c](double s, int order) {
      double acc = 0.0;
      for (std::size_t k = static_cast<std::size_t>(order); k < c.size(); ++k) {
        double f = 1.0;
        for (int j = 0; j < order; ++j) f *= static_cast<double>(k) - j;
        acc += f * c[k] * std::pow(s, static_cast<double>(k) - order);
      }
      return acc;
    };
    ClosedFormPotential p;
    p.n = n;
    p.name = std::move(name);
    p.value = [deriv](std::span<const double> x) { return deriv(dot(x, x), 0); };
    p.gradient = [deriv](std::span<const double> x) {
      const double d1 = deriv(dot(x, x), 1);
      Vec g(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * d1 * x[i];
      return g;
    };
    p.hessian = [deriv](std::span<const double> x) {
      const double s = dot(x, x), d1 = deriv(s, 1), d2 = deriv(s, 2);
      SymMatrix h(x.size());
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i; j < x.size(); ++j) h.set(i, j, 4.0 * d2 * x[i] * x[j] + (i == j ? 2.0 * d1 : 0.0));
      return h;
    };
    p.third = [deriv](std::span<const double> x) {
      const std::size_t m = x.size();
      const double s = dot(x, x), d2 = deriv(s, 2), d3 = deriv(s, 3);
      Vec t(m * m * m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t k = 0; k < m; ++k)
            t[(i * m + j) * m + k] =
                8.0 * d3 * x[i] * x[j] * x[k] +
                4.0 * d2 * ((i == j ? x[k] : 0.0) + (i == k ? x[j] : 0.0) + (j == k ? x[i] : 0.0));
      return t;
    };
    return p;
  }

  /// a|x|^2/2
  static ClosedFormPotential quadratic(std::size_t n, double a) {
    return radial_polynomial(n, {0.0, 0.5 * a}, "quadratic");
  }
  /// a|x|^2/2 + b|x|^4
  static ClosedFormPotential quartic(std::size_t n, double a, double b) {
    return radial_polynomial(n, {0.0, 0.5 * a, b}, "quartic");
  }
};

// ---------------------------------------------------------------------------
// Problems, configuration, reports

struct DirichletProblem {
  Grid grid;
  PhaseModel phase = PhaseModel::constant(1, 0.0);
  /// Boundary values are read at depth-0 nodes; other entries are ignored.
  ScalarField boundary;
  std::optional<ScalarField> initial;
  /// Known solution, when the problem was manufactured.
  std::optional<ClosedFormPotential> exact;
};

struct SolverConfig {
  double tolerance = 1e-8;
  int max_iterations = 50;
  double backtrack = 0.5;
  double min_step = 1e-4;
  double linear_tolerance = 1e-12;
  int linear_max_iterations = 2000;

  void validate() const {
    if (!(tolerance > 0.0)) throw InvalidInput("solver: tolerance must be positive");
    if (max_iterations < 1) throw InvalidInput("solver: max_iterations must be >= 1");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw InvalidInput("solver: backtracking factor must lie in (0,1)");
    if (!(min_step > 0.0 && min_step <= 1.0)) throw InvalidInput("solver: min_step must lie in (0,1]");
    if (!(linear_tolerance > 0.0)) throw InvalidInput("solver: linear tolerance must be positive");
  }
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  std::vector<double> history;  // sup-norm residual before each iteration and at exit
  std::vector<double> steps;    // accepted damping factors
  double hessian_at_origin = 0.0;  // |D^2u(0)| at the node nearest the origin
  double gradient_at_origin = 0.0;
  double gradient_sup = 0.0;       // ||Du||_inf over interior nodes
  double oscillation = 0.0;
  double min_margin = 0.0;         // min/max over interior nodes of |Theta_h| - (n-2)pi/2
  double max_margin = 0.0;
  std::size_t subcritical_nodes = 0;
  std::optional<double> error_vs_exact;  // sup |u - u*| for manufactured problems
  std::string message;
};

struct SolveResult {
  ScalarField u;
  SolveReport report;
};

// ---------------------------------------------------------------------------
// Residuals

/// F(D^2_h u) - Theta(x, u, D_h u) at depth >= u.depth + 1 (signed).
inline ScalarField equation_residual(const ScalarField& u, const PhaseModel& model) {
  const Grid& g = u.grid;
  if (model.dim() != g.dim()) throw InvalidInput("residual: phase dimension does not match the grid");
  const std::size_t depth = u.depth + 1;
  ScalarField r(g, std::numeric_limits<double>::quiet_NaN(), depth);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < depth) continue;
    const Vec x = g.point(i);
    const double f = lagrangian_phase(eigen_decompose(fd_hessian(u, i)));
    r.values[i] = f - model.value(x, u.values[i], fd_gradient(u, i));
  }
  return r;
}

/// |sum arctan lambda_i - Theta| for a shrinker/expander, translator or rotator phase.
inline ScalarField self_similar_residual(const ScalarField& u, const PhaseModel& model) {
  if (model.is_constant() || model.is_custom())
    throw InvalidFamily("self_similar_residual: phase '" + model.name() + "' is not a soliton family");
  ScalarField r = equation_residual(u, model);
  for (std::size_t i = 0; i < r.values.size(); ++i)
    if (r.valid(i)) r.values[i] = std::abs(r.values[i]);
  return r;
}

inline double interior_sup(const ScalarField& f) {
  double m = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (f.valid(i) && f.grid.depth(i) >= 1) m = std::max(m, std::abs(f.values[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Sparse linear algebra

namespace detail {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SpMatCol = Eigen::SparseMatrix<double>;

/// Interior node numbering: unknown index per grid node, or npos on the boundary.
struct InteriorMap {
  std::vector<std::size_t> index;
  std::vector<std::size_t> nodes;
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  explicit InteriorMap(const Grid& g) : index(g.size(), npos) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g.depth(i) >= 1) {
        index[i] = nodes.size();
        nodes.push_back(i);
      }
  }
  std::size_t size() const { return nodes.size(); }
};

/// Direct sparse LU for n <= 2, Jacobi-preconditioned BiCGSTAB otherwise with
/// an LU fallback when the iteration stalls.
inline Eigen::VectorXd solve_sparse(const SpMat& a, const Eigen::VectorXd& b, std::size_t dim,
                                    double tol, int max_iter) {
  auto direct = [&]() {
    SpMatCol ac(a);
    ac.makeCompressed();
    Eigen::SparseLU<SpMatCol, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(ac);
    if (lu.info() != Eigen::Success) throw SolverFailure("linear solve: singular linearization");
    Eigen::VectorXd x = lu.solve(b);
    if (lu.info() != Eigen::Success || !x.allFinite()) throw SolverFailure("linear solve: singular linearization");
    return x;
  };
  if (dim <= 2) return direct();
  Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> it;
  it.setTolerance(tol);
  it.setMaxIterations(max_iter);
  it.compute(a);
  if (it.info() == Eigen::Success) {
    Eigen::VectorXd x = it.solve(b);
    if (it.info() == Eigen::Success && x.allFinite()) return x;
  }
  return direct();
}

}  // namespace detail

/// Discrete harmonic function with the boundary values of `boundary`.
inline ScalarField harmonic_extension(const ScalarField& boundary) {
  const Grid& g = boundary.grid;
  const detail::InteriorMap map(g);
  ScalarField u(g, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.depth(i) == 0) u.values[i] = boundary.values[i];
  if (map.size() == 0) return u;
  const std::size_t n = g.dim();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(map.size() * (2 * n + 1));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(map.size()));
  for (std::size_t r = 0; r < map.size(); ++r) {
    const std::size_t i = map.nodes[r];
    trip.emplace_back(r, r, 2.0 * static_cast<double>(n));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t nb : {i + g.stride(a), i - g.stride(a)}) {
        if (map.index[nb] == detail::InteriorMap::npos)
          rhs[static_cast<Eigen::Index>(r)] += u.values[nb];
        else
          trip.emplace_back(r, map.index[nb], -1.0);
      }
  }
  detail::SpMat a(static_cast<Eigen::Index>(map.size()), static_cast<Eigen::Index>(map.size()));
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::VectorXd x;
  if (n <= 2) {
    x = detail::solve_sparse(a, rhs, n, 1e-13, 5000);
  } else {
    Eigen::ConjugateGradient<detail::SpMat, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-13);
    cg.setMaxIterations(10000);
    cg.compute(a);
    x = cg.solve(rhs);
    if (cg.info() != Eigen::Success) x = detail::solve_sparse(a, rhs, 2, 1e-13, 0);
  }
  for (std::size_t r = 0; r < map.size(); ++r) u.values[map.nodes[r]] = x[static_cast<Eigen::Index>(r)];
  return u;
}

// ---------------------------------------------------------------------------
// Newton solver

namespace detail {

inline Eigen::VectorXd interior_residual(const ScalarField& u, const PhaseModel& model, const InteriorMap& map) {
  const Grid& g = u.grid;
  Eigen::VectorXd r(static_cast<Eigen::Index>(map.size()));
  for (std::size_t k = 0; k < map.size(); ++k) {
    const std::size_t i = map.nodes[k];
    const Vec x = g.point(i);
    const double f = lagrangian_phase(eigen_decompose(fd_hessian(u, i)));
    r[static_cast<Eigen::Index>(k)] = f - model.value(x, u.values[i], fd_gradient(u, i));
  }
  return r;
}

/// Linearization of the residual: sum_ab G_ab D_ab - Theta_p . D - Theta_z with
/// G = (I + (D^2u)^2)^{-1}, the derivative of sum arctan lambda_i.
inline SpMat linearize(const ScalarField& u, const PhaseModel& model, const InteriorMap& map) {
  const Grid& g = u.grid;
  const std::size_t n = g.dim();
  const double h = g.spacing();
  const double ih2 = 1.0 / (h * h), i2h = 0.5 / h, i4h2 = 0.25 * ih2;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(map.size() * (1 + 2 * n + 2 * n * (n - 1)));
  auto add = [&](std::size_t row, std::size_t node, double v) {
    const std::size_t col = map.index[node];
    if (col != InteriorMap::npos && v != 0.0) trip.emplace_back(row, col, v);
  };
  for (std::size_t r = 0; r < map.size(); ++r) {
    const std::size_t i = map.nodes[r];
    const SymMatrix hess = fd_hessian(u, i);
    const PointMetric pm = point_metric(hess);
    const PhaseJet j = model.eval(g.point(i), u.values[i], fd_gradient(u, i), JetOrder::first);
    double diag = -j.dz;
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t sa = g.stride(a);
      const double gaa = pm.ginv(a, a);
      diag -= 2.0 * gaa * ih2;
      add(r, i + sa, gaa * ih2 - j.dp[a] * i2h);
      add(r, i - sa, gaa * ih2 + j.dp[a] * i2h);
      for (std::size_t b = a + 1; b < n; ++b) {
        const std::size_t sb = g.stride(b);
        const double c = 2.0 * pm.ginv(a, b) * i4h2;
        add(r, i + sa + sb, c);
        add(r, i - sa - sb, c);
        add(r, i + sa - sb, -c);
        add(r, i - sa + sb, -c);
      }
    }
    trip.emplace_back(r, r, diag);
  }
  SpMat a(static_cast<Eigen::Index>(map.size()), static_cast<Eigen::Index>(map.size()));
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

}  // namespace detail

/// Measured quantities of a field against its phase model.
inline void measure(const ScalarField& u, SolveReport& rep) {
  const Grid& g = u.grid;
  const std::size_t n = g.dim();
  rep.oscillation = u.oscillation();
  rep.gradient_sup = 0.0;
  rep.min_margin = std::numeric_limits<double>::infinity();
  rep.max_margin = -std::numeric_limits<double>::infinity();
  rep.subcritical_nodes = 0;
  const double half_span = static_cast<double>(n) * kPi / 2.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < 1) continue;
    rep.gradient_sup = std::max(rep.gradient_sup, norm(fd_gradient(u, i)));
    const double theta = lagrangian_phase(eigen_decompose(fd_hessian(u, i)));
    const double margin = std::min(std::abs(theta), half_span) - critical_phase(n);
    rep.min_margin = std::min(rep.min_margin, margin);
    rep.max_margin = std::max(rep.max_margin, margin);
    if (margin < -kCriticalityTolerance) ++rep.subcritical_nodes;
  }
  const std::size_t origin = g.nearest(Vec(n, 0.0));
  if (g.depth(origin) >= 1) {
    rep.hessian_at_origin = operator_norm(fd_hessian(u, origin));
    rep.gradient_at_origin = norm(fd_gradient(u, origin));
  }
}

inline void validate_problem(const DirichletProblem& p) {
  const Grid& g = p.grid;
  if (p.phase.dim() != g.dim()) throw InvalidInput("problem: phase dimension does not match the grid");
  if (!p.boundary.grid.same_as(g)) throw InvalidInput("problem: boundary field lives on a different grid");
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.depth(i) == 0 && !std::isfinite(p.boundary.values[i]))
      throw InvalidInput("problem: non-finite boundary value");
  if (p.initial) {
    if (!p.initial->grid.same_as(g)) throw InvalidInput("problem: initial guess lives on a different grid");
    if (!all_finite(p.initial->values)) throw InvalidInput("problem: non-finite initial guess");
  }
  bool interior = false;
  for (std::size_t i = 0; i < g.size() && !interior; ++i) interior = g.depth(i) >= 1;
  if (!interior) throw InvalidInput("problem: grid has no interior nodes");
}

/// Damped Newton iteration on the interior residual with boundary values
/// held fixed. Backtracking halves the step until the sup-norm residual
/// decreases; a step below `min_step` ends the run unconverged.
inline SolveResult newton_solve(const DirichletProblem& problem, const SolverConfig& config = {}) {
  config.validate();
  validate_problem(problem);
  const Grid& g = problem.grid;
  const detail::InteriorMap map(g);

  ScalarField u = problem.initial ? *problem.initial : harmonic_extension(problem.boundary);
  u.depth = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.depth(i) == 0) u.values[i] = problem.boundary.values[i];

  SolveReport rep;
  Eigen::VectorXd r = detail::interior_residual(u, problem.phase, map);
  double rnorm = r.lpNorm<Eigen::Infinity>();
  rep.history.push_back(rnorm);

  while (rnorm > config.tolerance && rep.iterations < config.max_iterations) {
    const detail::SpMat jac = detail::linearize(u, problem.phase, map);
    const Eigen::VectorXd delta =
        detail::solve_sparse(jac, -r, g.dim(), config.linear_tolerance, config.linear_max_iterations);
    double t = 1.0;
    bool accepted = false;
    ScalarField trial = u;
    Eigen::VectorXd rt;
    while (t >= config.min_step) {
      for (std::size_t k = 0; k < map.size(); ++k)
        trial.values[map.nodes[k]] = u.values[map.nodes[k]] + t * delta[static_cast<Eigen::Index>(k)];
      rt = detail::interior_residual(trial, problem.phase, map);
      const double tn = rt.lpNorm<Eigen::Infinity>();
      if (std::isfinite(tn) && tn < rnorm) {
        accepted = true;
        break;
      }
      t *= config.backtrack;
    }
    ++rep.iterations;
    if (!accepted) {
      rep.message = "line search stalled";
      break;
    }
    u = std::move(trial);
    r = std::move(rt);
    rnorm = r.lpNorm<Eigen::Infinity>();
    rep.steps.push_back(t);
    rep.history.push_back(rnorm);
  }
  rep.residual = rnorm;
  rep.converged = rnorm <= config.tolerance;
  if (!rep.converged && rep.message.empty()) rep.message = "iteration limit reached";
  measure(u, rep);
  if (problem.exact) {
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) e = std::max(e, std::abs(u.values[i] - problem.exact->value(g.point(i))));
    rep.error_vs_exact = e;
  }
  return {std::move(u), std::move(rep)};
}

// ---------------------------------------------------------------------------
// Potential flow

struct FlowOptions {
  double dt = 0.0;
  int steps = 0;
  int record_every = 1;  // keep every k-th state (the last is always kept)
};

struct FlowTrajectory {
  std::vector<double> times;
  std::vector<ScalarField> states;
};

using BoundaryCallback = std::function<double(std::span<const double> x, double t)>;

/// Largest stable forward-Euler step, h^2 / (2n).
inline double flow_stability_bound(const Grid& g) {
  return g.spacing() * g.spacing() / (2.0 * static_cast<double>(g.dim()));
}

/// Forward Euler for u_t = sum arctan lambda_i(D^2u) on interior nodes; the
/// boundary is reset from the callback after every step.
inline FlowTrajectory flow_evolve(const ScalarField& u0, const FlowOptions& opt, const BoundaryCallback& boundary) {
  const Grid& g = u0.grid;
  if (!(opt.dt > 0.0)) throw InvalidInput("flow: dt must be positive");
  if (opt.steps < 0 || opt.record_every < 1) throw InvalidInput("flow: bad step counts");
  const double bound = flow_stability_bound(g);
  if (opt.dt > bound * (1.0 + 1e-12))
    throw StabilityError("flow: dt = " + format_number(opt.dt) + " exceeds the explicit bound h^2/(2n) = " +
                         format_number(bound));
  require_wide_grid(g, 3, "flow_evolve");
  const detail::InteriorMap map(g);
  FlowTrajectory out;
  ScalarField u = u0;
  u.depth = 0;
  out.times.push_back(0.0);
  out.states.push_back(u);
  std::vector<double> rate(map.size());
  for (int s = 1; s <= opt.steps; ++s) {
    for (std::size_t k = 0; k < map.size(); ++k) rate[k] = lagrangian_phase(eigen_decompose(fd_hessian(u, map.nodes[k])));
    for (std::size_t k = 0; k < map.size(); ++k) u.values[map.nodes[k]] += opt.dt * rate[k];
    const double t = opt.dt * s;
    if (boundary)
      for (std::size_t i = 0; i < g.size(); ++i)
        if (g.depth(i) == 0) u.values[i] = boundary(g.point(i), t);
    if (s % opt.record_every == 0 || s == opt.steps) {
      out.times.push_back(t);
      out.states.push_back(u);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manufactured problems

enum class Coupling { pure_x, z_coupled, p_coupled, full };

inline const char* to_string(Coupling c) {
  switch (c) {
    case Coupling::pure_x: return "pure-x";
    case Coupling::z_coupled: return "z-coupled";
    case Coupling::p_coupled: return "p-coupled";
    case Coupling::full: return "full";
  }
  return "?";
}

/// Weight for the p-coupled mode: w_i(x) = 1 + sin(x_i)/2, |Dw| <= 1/2.
inline double coupling_weight(double xi) { return 1.0 + 0.5 * std::sin(xi); }
inline double coupling_weight_derivative(double xi) { return 0.5 * std::cos(xi); }
/// eta = 0.1 / (1 + ||Dw||_inf)
inline constexpr double kCouplingEta = 0.1 / 1.5;

/// Theta built so that u* solves the equation:
///   pure-x:    Theta(x)       = F(D^2u*(x))
///   z-coupled: + (z - u*(x))
///   p-coupled: + eta (p - Du*(x)) . w(x)
///   full:      both couplings.
inline PhaseModel manufactured_phase(const ClosedFormPotential& us, Coupling mode) {
  const std::size_t n = us.n;
  const bool zc = mode == Coupling::z_coupled || mode == Coupling::full;
  const bool pc = mode == Coupling::p_coupled || mode == Coupling::full;

  // Value and x-gradient of the coupled phase at fixed (z, p).
  auto value_and_dx = [us, n, zc, pc](std::span<const double> x, double z, std::span<const double> p, Vec* dx) {
    const SymMatrix h = us.hessian(x);
    const Spectrum s = eigen_decompose(h);
    double v = lagrangian_phase(s);
    Vec du;
    if (zc || pc) du = us.gradient(x);
    if (zc) v += z - us.value(x);
    if (pc)
      for (std::size_t i = 0; i < n; ++i) v += kCouplingEta * (p[i] - du[i]) * coupling_weight(x[i]);
    if (dx) {
      const PointMetric pm = point_metric(s);
      const Vec t = us.third(x);
      dx->assign(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t b = 0; b < n; ++b) acc += pm.ginv(a, b) * t[(a * n + b) * n + k];
        (*dx)[k] = acc;
      }
      if (zc)
        for (std::size_t k = 0; k < n; ++k) (*dx)[k] -= du[k];
      if (pc) {
        const SymMatrix& hh = h;
        for (std::size_t k = 0; k < n; ++k) {
          double acc = (p[k] - du[k]) * coupling_weight_derivative(x[k]);
          for (std::size_t i = 0; i < n; ++i) acc -= hh(i, k) * coupling_weight(x[i]);
          (*dx)[k] += kCouplingEta * acc;
        }
      }
    }
    return v;
  };

  auto eval = [n, zc, pc, value_and_dx](std::span<const double> x, double z, std::span<const double> p,
                                        JetOrder order) {
    PhaseJet j(n);
    if (order == JetOrder::value) {
      j.value = value_and_dx(x, z, p, nullptr);
      return j;
    }
    j.value = value_and_dx(x, z, p, &j.dx);
    j.dz = zc ? 1.0 : 0.0;
    if (pc)
      for (std::size_t i = 0; i < n; ++i) j.dp[i] = kCouplingEta * coupling_weight(x[i]);
    if (order == JetOrder::second) {
      // Theta_xx by central differences of the analytic Theta_x; the other
      // second partials are closed form.
      Vec xp(x.begin(), x.end()), xm(x.begin(), x.end());
      for (std::size_t k = 0; k < n; ++k) {
        const double step = 1e-5 * std::max(1.0, std::abs(x[k]));
        xp[k] = x[k] + step;
        xm[k] = x[k] - step;
        Vec gp, gm;
        value_and_dx(xp, z, p, &gp);
        value_and_dx(xm, z, p, &gm);
        for (std::size_t a = 0; a < n; ++a) j.dxx(a, k) = (gp[a] - gm[a]) / (2.0 * step);
        xp[k] = xm[k] = x[k];
      }
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) j.dxx(a, b) = j.dxx(b, a) = 0.5 * (j.dxx(a, b) + j.dxx(b, a));
      if (pc)
        for (std::size_t i = 0; i < n; ++i) j.dxp(i, i) = kCouplingEta * coupling_weight_derivative(x[i]);
    }
    return j;
  };
  return PhaseModel::custom(n, std::string("manufactured-") + to_string(mode) + "-" + us.name, eval, std::nullopt);
}

/// Dirichlet problem on `grid` whose exact solution is u*.
inline DirichletProblem manufactured_problem(const ClosedFormPotential& us, Coupling mode, const Grid& grid) {
  if (us.n != grid.dim()) throw InvalidInput("manufactured_problem: potential dimension does not match the grid");
  DirichletProblem p;
  p.grid = grid;
  p.phase = manufactured_phase(us, mode);
  p.boundary = ScalarField::sample(grid, [&](const Vec& x) { return us.value(x); });
  p.exact = us;
  return p;
}

}  // namespace lmc
