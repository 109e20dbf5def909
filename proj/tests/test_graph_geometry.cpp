#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lmc/graph_geometry.hpp"

using namespace lmc;

namespace {

double max_abs_at_depth(const ScalarField& f, std::size_t depth) {
  double m = 0.0;
  for (std::size_t i = 0; i < f.grid.size(); ++i)
    if (f.grid.depth(i) >= depth) m = std::max(m, std::abs(f.values[i]));
  return m;
}

ScalarField quadratic(const Grid& g, double a) {
  return ScalarField::sample(g, [a](const Vec& x) { return 0.5 * a * dot(x, x); });
}

}  // namespace

TEST(GridTest, IndexingAndDepth) {
  const Grid g = Grid::box(2, 1.0, 5);
  EXPECT_EQ(g.size(), 25u);
  EXPECT_DOUBLE_EQ(g.spacing(), 0.5);
  EXPECT_EQ(g.stride(0), 5u);
  EXPECT_EQ(g.stride(1), 1u);
  EXPECT_EQ(g.point(7), (Vec{-0.5, 0.0}));
  EXPECT_EQ(g.depth(12), 2u);
  EXPECT_TRUE(g.is_boundary(4));
  EXPECT_EQ(g.nearest(Vec{0.1, -0.1}), 12u);
  const std::vector<std::size_t> m{3, 1};
  EXPECT_EQ(g.index(m), 16u);
  EXPECT_EQ(g.multi_index(16), m);
  const Grid r = g.refined();
  EXPECT_EQ(r.counts()[0], 9u);
  EXPECT_DOUBLE_EQ(r.spacing(), 0.25);
}

TEST(GridTest, CsvAndBinaryDumps) {
  const Grid g = Grid::box(2, 1.0, 3);
  ScalarField f = ScalarField::sample(g, [](const Vec& x) { return x[0] + 10.0 * x[1]; });
  const std::string csv = field_to_csv(f);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,x1,x2,value");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);

  const std::string path = ::testing::TempDir() + "field.bin";
  write_field_binary(f, path);
  const ScalarField back = read_field_binary(path);
  EXPECT_TRUE(back.grid.same_as(g));
  EXPECT_EQ(back.values, f.values);
}

TEST(Differentiate, QuadraticExact) {
  const Grid g = Grid::box(3, 1.0, 7);
  const DerivativeFields d = differentiate(quadratic(g, 1.7));
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < 1) continue;
    const Vec x = g.point(i);
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_NEAR(d.gradient[i][a], 1.7 * x[a], 1e-13);
      for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(d.hessian[i](a, b), a == b ? 1.7 : 0.0, 1e-12);
    }
    if (g.depth(i) >= 2) {
      for (double t : d.third[i]) EXPECT_NEAR(t, 0.0, 1e-10);
    }
  }
}

TEST(Differentiate, CubicSecondDifferenceExact) {
  const Grid g(Vec{0.5}, {11}, 0.1);  // x in [0.5, 1.5]
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) { return x[0] * x[0] * x[0]; });
  const std::size_t at_one = g.nearest(Vec{1.0});
  EXPECT_NEAR(fd_hessian(u, at_one)(0, 0), 6.0, 1e-11);
  const DerivativeFields d = differentiate(u);
  EXPECT_NEAR(d.third[at_one][0], 6.0, 1e-9);
}

TEST(Differentiate, SecondOrderConvergenceOnSine) {
  auto err = [](std::size_t nodes) {
    const Grid g = Grid::box(2, 1.0, nodes);
    const ScalarField u = ScalarField::sample(g, [](const Vec& x) { return std::sin(x[0]) * std::cos(0.5 * x[1]); });
    const DerivativeFields d = differentiate(u);
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.depth(i) < 1) continue;
      const Vec x = g.point(i);
      const double s = std::sin(x[0]), c = std::cos(x[0]), s2 = std::sin(0.5 * x[1]), c2 = std::cos(0.5 * x[1]);
      e = std::max({e, std::abs(d.hessian[i](0, 0) + s * c2), std::abs(d.hessian[i](0, 1) + 0.5 * c * s2),
                    std::abs(d.hessian[i](1, 1) + 0.25 * s * c2)});
    }
    return e;
  };
  const double ratio = err(17) / err(33);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(Differentiate, SmallGridRejected) {
  EXPECT_THROW(differentiate(ScalarField(Grid::box(2, 1.0, 4))), InvalidInput);
}

TEST(InducedMetric, PointExamples) {
  PointMetric flat = point_metric(SymMatrix(2));
  EXPECT_DOUBLE_EQ(flat.volume, 1.0);
  EXPECT_DOUBLE_EQ(flat.g(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(flat.g(0, 1), 0.0);

  PointMetric ones = point_metric(SymMatrix::diagonal(Vec{1.0, 1.0}));
  EXPECT_DOUBLE_EQ(ones.volume, 2.0);
  EXPECT_DOUBLE_EQ(ones.g(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(ones.ginv(1, 1), 0.5);

  PointMetric d = point_metric(SymMatrix::diagonal(Vec{3.0, 1.0, -0.2}));
  EXPECT_NEAR(d.volume, std::sqrt(10.0 * 2.0 * 1.04), 1e-14);
}

TEST(InducedMetric, ProductOfMetricAndInverseIsIdentity) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int t = 0; t < 200; ++t) {
    SymMatrix h(3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = i; j < 3; ++j) h.set(i, j, u(rng));
    const PointMetric pm = point_metric(h);
    const Matrix direct = Matrix::identity(3) + h.matrix() * h.matrix();
    EXPECT_LE((pm.g.matrix() - direct).max_abs(), 1e-12 * direct.max_abs());
    EXPECT_LE((pm.g.matrix() * pm.ginv.matrix() - Matrix::identity(3)).max_abs(), 1e-11);
    EXPECT_NEAR(pm.volume * pm.volume, determinant(direct), 1e-10 * determinant(direct));
    EXPECT_GE(pm.volume, 1.0);
    EXPECT_GT(eigen_decompose(pm.g).lambda.back(), 0.0);
  }
}

TEST(LaplaceBeltrami, FlatExamples) {
  const Grid g = Grid::box(2, 1.0, 9);
  const MetricField flat = induced_metric(differentiate(ScalarField(g)));
  const ScalarField v = quadratic(g, 1.0);
  const ScalarField lv = laplace_beltrami(v, flat);
  EXPECT_EQ(lv.depth, 2u);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (lv.valid(i)) { EXPECT_NEAR(lv.values[i], 2.0, 1e-12); }

  const ScalarField w = ScalarField::sample(g, [](const Vec& x) { return x[0] * x[1]; });
  EXPECT_LE(max_abs_at_depth(laplace_beltrami(w, flat), 2), 1e-12);
}

TEST(LaplaceBeltrami, ConstantMetricContraction) {
  const double a = 1.5;
  for (std::size_t n : {1u, 2u, 3u}) {
    const Grid g = Grid::box(n, 1.0, 7);
    const MetricField m = induced_metric(differentiate(quadratic(g, a)));
    const ScalarField lv = laplace_beltrami(quadratic(g, 1.0), m);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (lv.valid(i)) { EXPECT_NEAR(lv.values[i], n / (1.0 + a * a), 1e-11); }
  }
}

TEST(LaplaceBeltrami, FlatReductionMatchesStandardLaplacian) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Grid g = Grid::box(3, 1.0, 7);
  // affine u: zero Hessian everywhere
  const MetricField m = induced_metric(differentiate(ScalarField::sample(g, [](const Vec& x) { return 2.0 * x[0] - x[2]; })));
  ScalarField v(g);
  for (double& val : v.values) val = u(rng);
  const ScalarField lv = laplace_beltrami(v, m);
  const double h2 = g.spacing() * g.spacing();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!lv.valid(i)) continue;
    double lap = 0.0;
    for (std::size_t a = 0; a < 3; ++a)
      lap += (v.values[i + g.stride(a)] - 2.0 * v.values[i] + v.values[i - g.stride(a)]) / h2;
    EXPECT_NEAR(lv.values[i], lap, 1e-10 * (1.0 + std::abs(lap)));
  }
}

TEST(LaplaceBeltrami, ConvergesForVaryingMetric) {
  // u = x1^4/12 gives lambda = x1^2, g_11 = 1 + x1^4, V = sqrt(1 + x1^4).
  // For v = x1: Delta_g v = (1/V) d/dx1 (V / (1 + x1^4)) = -2 x1^3 / (1 + x1^4)^2.
  auto err = [](std::size_t nodes) {
    const Grid g = Grid::box(1, 1.0, nodes);
    const MetricField m = induced_metric(differentiate(ScalarField::sample(g, [](const Vec& x) { return std::pow(x[0], 4) / 12.0; })));
    const ScalarField lv = laplace_beltrami(ScalarField::sample(g, [](const Vec& x) { return x[0]; }), m);
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!lv.valid(i)) continue;
      const double x = g.point(i)[0];
      e = std::max(e, std::abs(lv.values[i] + 2.0 * x * x * x / std::pow(1.0 + std::pow(x, 4), 2)));
    }
    return e;
  };
  const double ratio = err(33) / err(65);
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}

TEST(MeanCurvature, ConstantPhaseVanishes) {
  const Grid g = Grid::box(2, 1.0, 9);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) { return std::cosh(x[0]) + x[1] * x[1] * x[0]; });
  const MeanCurvatureField h = mean_curvature(u, PhaseModel::constant(2, 0.3));
  EXPECT_EQ(h.magnitude.max_abs(), 0.0);
}

TEST(MeanCurvature, TranslatorOnParaboloid) {
  const Grid g = Grid::box(2, 1.0, 9);
  const MeanCurvatureField h =
      mean_curvature(quadratic(g, 1.0), PhaseModel::translator(0.0, {1.0, 0.0}, {0.0, 1.0}));
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!h.magnitude.valid(i)) continue;
    EXPECT_NEAR(h.magnitude.values[i], 1.0, 1e-12);
    // w = g^{-1}(1,1) = (1/2, 1/2); H = (-w, w)
    EXPECT_NEAR(h.vector[i][0], -0.5, 1e-12);
    EXPECT_NEAR(h.vector[i][3], 0.5, 1e-12);
  }
}

TEST(MeanCurvature, OneDimensionalLinearPhase) {
  const double a = 2.0, eps = 0.3;
  const Grid g = Grid::box(1, 1.0, 9);
  const PhaseModel m = PhaseModel::translator(std::atan(a), {eps}, {0.0});
  const MeanCurvatureField h = mean_curvature(quadratic(g, a), m);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (h.magnitude.valid(i)) { EXPECT_NEAR(h.magnitude.values[i], eps / std::sqrt(1.0 + a * a), 1e-12); }
}

TEST(MeanCurvature, MatchesDiagonalFrameFormula) {
  // rotator on a non-diagonal quadratic: compare with the eigenframe sum
  const Grid g = Grid::box(2, 1.0, 7);
  const SymMatrix A(2, {2.0, 0.7, 0.7, -0.5});
  const ScalarField u = ScalarField::sample(g, [&](const Vec& x) { return 0.5 * dot(x, A.matrix() * x); });
  const PhaseModel m = PhaseModel::rotator(2, 0.1, 0.6);
  const MeanCurvatureField h = mean_curvature(u, m);
  const Spectrum s = eigen_decompose(A);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!h.magnitude.valid(i)) continue;
    const Vec x = g.point(i);
    const Vec du = A.matrix() * x;
    const PhaseJet j = m.eval(x, u.values[i], du);
    double sum = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      // components in the eigenframe
      double tx = 0.0, tp = 0.0, tu = 0.0;
      for (std::size_t r = 0; r < 2; ++r) {
        tx += s.frame(r, k) * j.dx[r];
        tp += s.frame(r, k) * j.dp[r];
        tu += s.frame(r, k) * du[r];
      }
      const double term = tx + j.dz * tu + tp * s.lambda[k];
      sum += term * term / (1.0 + s.lambda[k] * s.lambda[k]);
    }
    EXPECT_NEAR(h.magnitude.values[i], std::sqrt(sum), 1e-11);
  }
}

TEST(SlopePotential, PointValues) {
  EXPECT_EQ(slope_value(Vec{0.0, -1.0}, 1), 0.0);
  EXPECT_NEAR(slope_value(Vec{1.0, 0.5}, 1), std::log(std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(slope_value(Vec{1.0, 0.5}, 1), 0.346574, 1e-6);
  EXPECT_NEAR(slope_value(Vec{3.0, 1.0}, 2), 0.25 * (std::log(10.0) + std::log(2.0)), 1e-15);
  EXPECT_THROW(slope_value(Vec{1.0}, 2), InvalidInput);
  EXPECT_NEAR(kSlopeOffset, std::log(4.0 / 3.0) / 8.0, 0.0);
}

TEST(SlopePotential, LowerBoundAtSupercriticalPhase) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ang(-kPi / 2.0, kPi / 2.0);
  for (std::size_t n = 3; n <= 6; ++n) {
    int tested = 0;
    while (tested < 2000) {
      Vec l(n);
      for (auto& v : l) v = std::tan(ang(rng));
      std::sort(l.begin(), l.end(), std::greater<>());
      if (lagrangian_phase(l) < critical_phase(n)) continue;
      ++tested;
      EXPECT_GE(slope_value(l, 1), slope_lower_bound(n) - 1e-9);
    }
  }
}

TEST(GraphDiagnosticsTest, FieldsAndBounds) {
  const Grid g = Grid::box(3, 0.5, 9);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) {
    return x[0] * x[0] + std::pow(x[0], 4) / 12.0 + 0.5 * (x[1] * x[1] + x[2] * x[2]) + 0.1 * x[0] * x[1] * x[2];
  });
  const GraphDiagnostics d = graph_diagnostics(u, PhaseModel::constant(3, 2.0));
  EXPECT_EQ(d.c0, kSlopeOffset);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d.spectrum_depth) continue;
    EXPECT_GE(d.b1.values[i], 0.0);
    if (d.phase.values[i] >= critical_phase(3)) { EXPECT_GE(d.b1.values[i], slope_lower_bound(3) - 1e-9); }
    EXPECT_EQ(d.mean_curvature.values[i], 0.0);
    if (g.depth(i) >= d.full_depth) {
      EXPECT_TRUE(all_finite(d.second_fundamental_form[i]));
      EXPECT_TRUE(std::isfinite(d.laplace_b.values[i]));
    }
  }
}

TEST(GraphDiagnosticsTest, SecondFundamentalFormOfCubic) {
  // u = x1^3/6: lambda_1 = x1, u_111 = 1, h_111 = (1 + x1^2)^{-3/2}
  const Grid g = Grid::box(2, 1.0, 9);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) { return std::pow(x[0], 3) / 6.0 - 0.5 * x[1] * x[1]; });
  const GraphDiagnostics d = graph_diagnostics(u, PhaseModel::constant(2, 0.0));
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.depth(i) < d.full_depth) continue;
    const double x1 = g.point(i)[0];
    // eigenframe column for lambda = x1 is +-e1; h is odd in the frame sign
    const Spectrum& s = d.spectra[i];
    const std::size_t k = std::abs(s.frame(0, 0)) > 0.5 ? 0 : 1;
    const double sign = s.frame(0, k) > 0 ? 1.0 : -1.0;
    const std::size_t n = 2;
    EXPECT_NEAR(sign * d.second_fundamental_form[i][(k * n + k) * n + k], std::pow(1.0 + x1 * x1, -1.5), 1e-10);
  }
}

TEST(Jacobi, QuadraticHasConstantSlope) {
  const Grid g = Grid::box(3, 1.0, 7);
  const JacobiReport r = jacobi_diagnostic(quadratic(g, 1.0), PhaseModel::constant(3, 3.0 * kPi / 4.0));
  EXPECT_GT(r.used, 0u);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_EQ(r.not_applicable, 0u);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (r.status[i] != JacobiNode::used) continue;
    EXPECT_NEAR(r.laplace_b.values[i], 0.0, 1e-12);
    EXPECT_NEAR(r.grad_b_norm2.values[i], 0.0, 1e-20);
  }
  EXPECT_LE(r.C_emp, 1e-12);
  EXPECT_TRUE(std::isinf(r.c_emp));
}

TEST(Jacobi, ManufacturedSupercriticalProfile) {
  // D^2u = diag(2 + x1^2, 1, 1): simple top eigenvalue, phase above pi/2
  const Grid g = Grid::box(3, 0.5, 13);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) {
    return x[0] * x[0] + std::pow(x[0], 4) / 12.0 + 0.5 * (x[1] * x[1] + x[2] * x[2]);
  });
  const JacobiReport r = jacobi_diagnostic(u, PhaseModel::constant(3, 2.0));
  EXPECT_GT(r.used, 0u);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_EQ(r.not_applicable, 0u);
  EXPECT_TRUE(std::isfinite(r.c_emp));
  EXPECT_GT(r.c_emp, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (r.status[i] != JacobiNode::used) continue;
    const double lhs = r.laplace_b.values[i];
    const double rhs = r.c_emp * r.grad_b_norm2.values[i] - r.C_emp * r.weight.values[i];
    EXPECT_GE(lhs, rhs - 1e-12 * (1.0 + std::abs(lhs)));
  }
}

TEST(Jacobi, SubcriticalNodesNotApplicable) {
  const Grid g = Grid::box(3, 1.0, 7);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) { return 0.5 * (x[0] * x[0] - x[1] * x[1] - x[2] * x[2]); });
  const JacobiReport r = jacobi_diagnostic(u, PhaseModel::constant(3, -kPi / 4.0));
  EXPECT_EQ(r.used, 0u);
  EXPECT_GT(r.not_applicable, 0u);
}

TEST(Jacobi, EigenvalueCrossingSkipped) {
  // lambda = (1 + x1, 1): crossing at x1 = 0
  const Grid g = Grid::box(2, 1.0, 11);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) {
    return 0.5 * x[0] * x[0] + std::pow(x[0], 3) / 6.0 + 0.5 * x[1] * x[1];
  });
  const JacobiReport r = jacobi_diagnostic(u, PhaseModel::constant(2, 1.0));
  EXPECT_GT(r.skipped, 0u);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (r.status[i] == JacobiNode::skipped_multiplicity) { EXPECT_LE(std::abs(g.point(i)[0]), 0.2 + 1e-12); }
}

TEST(SigmaDivergence, ConstantHessian) {
  const Grid g = Grid::box(3, 1.0, 7);
  const ScalarField r = sigma_divergence_residual(quadratic(g, 1.0), 2);
  EXPECT_LE(r.max_abs(), 1e-12);
}

TEST(SigmaDivergence, LaplacianOfCubicK1) {
  const Grid g = Grid::box(2, 1.0, 9);
  const ScalarField u = ScalarField::sample(g, [](const Vec& x) { return x[0] * x[0] * x[1]; });
  EXPECT_LE(sigma_divergence_residual(u, 1).max_abs(), 1e-12);
}

TEST(SigmaDivergence, SecondOrderOnQuartic) {
  auto err = [](std::size_t nodes, int k) {
    const Grid g = Grid::box(3, 1.0, nodes);
    const ScalarField u = ScalarField::sample(g, [](const Vec& x) {
      return 0.5 * dot(x, x) + 0.1 * std::pow(x[0], 4) + 0.2 * x[0] * x[0] * x[1] * x[1] + 0.05 * x[2] * x[1] * x[1] * x[1];
    });
    return sigma_divergence_residual(u, k).max_abs();
  };
  for (int k : {2, 3}) {
    const double ratio = err(17, k) / err(33, k);
    EXPECT_GT(ratio, 3.5) << k;
    EXPECT_LT(ratio, 4.5) << k;
  }
}

TEST(SigmaDivergence, NewtonTensorMatchesFiniteDifferenceOfSigma) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    SymMatrix a(4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i; j < 4; ++j) a.set(i, j, u(rng));
    for (int k = 1; k <= 4; ++k) {
      const Matrix T = sigma_k_derivative(a, k);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          // perturb a single (non-symmetric) entry through the characteristic polynomial
          const double step = 1e-6;
          Matrix p = a.matrix(), m = a.matrix();
          p(i, j) += step;
          m(i, j) -= step;
          // sigma_k of a general matrix = sum of principal k-minors
          auto sig = [k](const Matrix& b) {
            double s = 0.0;
            for (unsigned mask = 0; mask < 16u; ++mask) {
              if (__builtin_popcount(mask) != k) continue;
              std::vector<std::size_t> idx;
              for (std::size_t r = 0; r < 4; ++r)
                if (mask & (1u << r)) idx.push_back(r);
              Matrix sub(idx.size());
              for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < idx.size(); ++c) sub(r, c) = b(idx[r], idx[c]);
              s += determinant(sub);
            }
            return s;
          };
          EXPECT_NEAR(T(j, i), (sig(p) - sig(m)) / (2.0 * step), 1e-6) << k;
        }
    }
  }
}
