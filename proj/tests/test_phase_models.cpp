#include <gtest/gtest.h>

#include <cmath>

#include "lmc/phase_models.hpp"

using namespace lmc;

namespace {

SampleRegion region(std::size_t n, double xr, double zr, double pr, std::size_t count = 1000,
                    std::uint64_t seed = 1) {
  SampleRegion r;
  r.n = n;
  r.x_radius = xr;
  r.z_min = -zr;
  r.z_max = zr;
  r.p_inner = 0.0;
  r.p_outer = pr;
  r.count = count;
  r.seed = seed;
  return r;
}

// Theta = atan(x1) + 0.3 z^2 + sin(p1 p2) style custom phase with full jets.
PhaseJet smooth_custom(std::span<const double> x, double z, std::span<const double> p, JetOrder) {
  PhaseJet j(2);
  const double s = std::sin(p[0] * p[1]), c = std::cos(p[0] * p[1]);
  j.value = std::atan(x[0]) + 0.3 * z * z + s + x[1] * z;
  j.dx[0] = 1.0 / (1.0 + x[0] * x[0]);
  j.dx[1] = z;
  j.dz = 0.6 * z + x[1];
  j.dp[0] = c * p[1];
  j.dp[1] = c * p[0];
  j.dxx(0, 0) = -2.0 * x[0] / std::pow(1.0 + x[0] * x[0], 2);
  j.dxz[1] = 1.0;
  j.dzz = 0.6;
  j.dpp(0, 0) = -s * p[1] * p[1];
  j.dpp(1, 1) = -s * p[0] * p[0];
  j.dpp(0, 1) = j.dpp(1, 0) = c - s * p[0] * p[1];
  return j;
}

}  // namespace

TEST(EvalPhase, TranslatorExample) {
  const PhaseModel m = PhaseModel::translator(0.0, {1.0, 0.0}, {0.0, 1.0});
  const PhaseJet j = eval_phase(m, Vec{0.0, 0.0}, 0.0, Vec{5.0, 7.0});
  EXPECT_EQ(j.value, 7.0);
  EXPECT_EQ(j.dx, (Vec{1.0, 0.0}));
  EXPECT_EQ(j.dz, 0.0);
  EXPECT_EQ(j.dp, (Vec{0.0, 1.0}));
}

TEST(EvalPhase, ShrinkerExample) {
  const PhaseModel m = PhaseModel::shrinker_expander(2, kPi / 2.0, 1.0);
  const PhaseJet j = eval_phase(m, Vec{1.0, 0.0}, 0.5, Vec{2.0, 0.0});
  EXPECT_DOUBLE_EQ(j.value, kPi / 2.0 + 1.0);
  EXPECT_EQ(j.dz, -2.0);
  EXPECT_EQ(j.dx, (Vec{2.0, 0.0}));
  EXPECT_EQ(j.dp, (Vec{1.0, 0.0}));
  EXPECT_EQ(j.dxp(0, 0), 1.0);
  EXPECT_EQ(j.dxp(0, 1), 0.0);
  EXPECT_EQ(m.name(), "shrinker");
  EXPECT_EQ(PhaseModel::shrinker_expander(2, 0.0, -1.0).name(), "expander");
}

TEST(EvalPhase, RotatorExample) {
  const PhaseModel m = PhaseModel::rotator(2, 0.0, 2.0);
  const PhaseJet j = eval_phase(m, Vec{1.0, 1.0}, 0.0, Vec{0.0, 2.0});
  EXPECT_DOUBLE_EQ(j.value, 6.0);
  EXPECT_EQ(j.dx, (Vec{2.0, 2.0}));
  EXPECT_EQ(j.dp, (Vec{0.0, 4.0}));
  EXPECT_EQ(j.dxp.max_abs(), 0.0);
}

TEST(EvalPhase, DimensionMismatchRejected) {
  const PhaseModel m = PhaseModel::rotator(2, 0.0, 1.0);
  EXPECT_THROW(m.eval(Vec{1.0}, 0.0, Vec{1.0, 2.0}), InvalidInput);
  EXPECT_THROW(PhaseModel::translator(0.0, {1.0}, {1.0, 2.0}), InvalidInput);
}

TEST(EvalPhase, BuiltinsMatchFiniteDifferences) {
  const std::vector<PhaseModel> models{
      PhaseModel::constant(3, 1.2), PhaseModel::shrinker_expander(3, 0.5, 1.3),
      PhaseModel::shrinker_expander(3, 0.5, -0.7), PhaseModel::translator(0.1, {1.0, -2.0, 0.5}, {0.3, 0.0, 2.0}),
      PhaseModel::rotator(3, 0.2, 0.8)};
  for (const auto& m : models) EXPECT_LE(derivative_consistency_error(m, region(3, 2.0, 2.0, 3.0)), 1e-8) << m.name();
}

TEST(EvalPhase, RotatorIdentities) {
  const PhaseModel m = PhaseModel::rotator(3, 0.4, -1.5);
  for (const SamplePoint& s : sample_region(region(3, 2.0, 1.0, 2.0, 200))) {
    const PhaseJet j = m.eval(s.x, s.z, s.p);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_DOUBLE_EQ(j.dx[i], -1.5 * s.x[i]);
      EXPECT_DOUBLE_EQ(j.dp[i], -1.5 * s.p[i]);
    }
    EXPECT_EQ(j.dxp.max_abs(), 0.0);
  }
}

TEST(CustomPhaseTest, ConsistentDerivativesAccepted) {
  EXPECT_NO_THROW(PhaseModel::custom(2, "smooth", smooth_custom, region(2, 1.0, 1.0, 1.0, 200)));
}

TEST(CustomPhaseTest, WrongDerivativesRejected) {
  auto bad = [](std::span<const double> x, double z, std::span<const double> p, JetOrder o) {
    PhaseJet j = smooth_custom(x, z, p, o);
    j.dz += 1e-3;
    return j;
  };
  EXPECT_THROW(PhaseModel::custom(2, "bad", bad, region(2, 1.0, 1.0, 1.0, 50)), InvalidInput);
}

TEST(StructureBoundsTest, ConstantIsZero) {
  const StructureBounds b = structure_bounds(PhaseModel::constant(3, 2.0), region(3, 1.0, 1.0, 1.0));
  EXPECT_EQ(b.nu1, 0.0);
  EXPECT_EQ(b.nu2, 0.0);
}

TEST(StructureBoundsTest, TranslatorFirstPartialsOnly) {
  const StructureBounds b =
      structure_bounds(PhaseModel::translator(0.0, {1.0, 0.0}, {0.0, 1.0}), region(2, 5.0, 5.0, 5.0));
  EXPECT_DOUBLE_EQ(b.nu1, 1.0);
  EXPECT_EQ(b.nu2, 0.0);
}

TEST(StructureBoundsTest, ShrinkerOnUnitBox) {
  // |Theta_x| = |p| <= 2, |Theta_z| = 2, |Theta_p| = |x| <= 1, Theta_xp = I
  const StructureBounds b =
      structure_bounds(PhaseModel::shrinker_expander(2, 0.0, 1.0), region(2, 1.0, 1.0, 2.0));
  EXPECT_DOUBLE_EQ(b.nu1, 2.0);
  EXPECT_DOUBLE_EQ(b.nu2, 1.0);
}

TEST(StructureBoundsTest, MonotoneUnderNestedRegions) {
  const PhaseModel m = PhaseModel::custom(2, "smooth", smooth_custom, std::nullopt);
  StructureBounds prev{0.0, 0.0, {}};
  for (double scale : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    const StructureBounds b = structure_bounds(m, region(2, scale, scale, scale, 400, 9));
    EXPECT_GE(b.nu1, prev.nu1);
    EXPECT_GE(b.nu2, prev.nu2);
    prev = b;
  }
}

TEST(StructureBoundsTest, EmptyRegionRejected) {
  SampleRegion r = region(2, 1.0, 1.0, 1.0, 0);
  EXPECT_THROW(structure_bounds(PhaseModel::constant(2, 0.0), r), InvalidInput);
}

TEST(GradientConditions, ConstantAtOrAboveCriticalPasses) {
  for (double c : {kPi / 2.0, 2.0}) {
    const GradientConditionReport r =
        gradient_conditions_check(PhaseModel::constant(3, c), region(3, 1.0, 1.0, 10.0));
    EXPECT_TRUE(r.cond_a.pass);
    EXPECT_TRUE(r.cond_b.pass);
    EXPECT_TRUE(r.cond_c.pass);
    EXPECT_EQ(r.skipped_subcritical, 0u);
  }
}

TEST(GradientConditions, ShrinkerFailsMonotonicity) {
  const GradientConditionReport r =
      gradient_conditions_check(PhaseModel::shrinker_expander(3, 2.0, 1.0), region(3, 1.0, 1.0, 1.0));
  EXPECT_FALSE(r.cond_b.pass);
  ASSERT_TRUE(r.cond_b.witness.has_value());
  EXPECT_EQ(r.cond_b.witness_value, -2.0);
}

TEST(GradientConditions, ShrinkerSignTracksS2) {
  for (double s2 : {-1.0, -0.1, 0.0, 0.1, 1.0}) {
    const GradientConditionReport r =
        gradient_conditions_check(PhaseModel::shrinker_expander(3, 2.0, s2), region(3, 1.0, 1.0, 1.0, 200));
    EXPECT_EQ(r.cond_b.pass, s2 <= 0.0) << s2;
  }
}

TEST(GradientConditions, TranslatorWithMomentumTermFailsDecay) {
  // theta = pi/2 + 0.5 p_1 on p in [0, 50]: near-critical points with large |p| exist
  const PhaseModel m = PhaseModel::translator(kPi / 2.0 + 1e-3, {0.0, 0.0, 0.0}, {0.5, 0.0, 0.0});
  const GradientConditionReport r = gradient_conditions_check(m, region(3, 1.0, 1.0, 50.0, 2000));
  EXPECT_FALSE(r.cond_c.pass);
  ASSERT_TRUE(r.cond_c.witness.has_value());
  EXPECT_GT(r.cond_c.minimal_constant, 1.0);
  EXPECT_GT(r.skipped_subcritical, 0u);
}

TEST(PartialConvexity, TranslatorAndRotatorPass) {
  EXPECT_TRUE(partial_convexity_check(PhaseModel::translator(0.0, {1.0, 2.0}, {3.0, 4.0}),
                                      region(2, 1.0, 1.0, 1.0))
                  .pass);
  const ConvexityReport r = partial_convexity_check(PhaseModel::rotator(3, 0.0, 1.0), region(3, 1.0, 1.0, 1.0));
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.min_eigenvalue, 1.0, 1e-14);
}

TEST(PartialConvexity, ConcaveCustomFails) {
  auto concave = [](std::span<const double> x, double, std::span<const double> p, JetOrder) {
    PhaseJet j(x.size());
    j.value = -0.5 * dot(p, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      j.dp[i] = -p[i];
      j.dpp(i, i) = -1.0;
    }
    return j;
  };
  const PhaseModel m = PhaseModel::custom(2, "concave", concave, region(2, 1.0, 1.0, 1.0, 50));
  const ConvexityReport r = partial_convexity_check(m, region(2, 1.0, 1.0, 1.0));
  EXPECT_FALSE(r.pass);
  EXPECT_TRUE(r.witness.has_value());
  EXPECT_NEAR(r.min_eigenvalue, -1.0, 1e-14);
}

TEST(Sampling, DeterministicForSeed) {
  const auto a = sample_region(region(3, 1.0, 1.0, 1.0, 100, 42));
  const auto b = sample_region(region(3, 1.0, 1.0, 1.0, 100, 42));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].z, b[i].z);
    EXPECT_EQ(a[i].p, b[i].p);
  }
}
