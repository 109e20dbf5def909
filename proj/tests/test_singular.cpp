#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lmc/singular.hpp"

using namespace lmc;

namespace {

Vec residual_points(std::size_t count) {
  Vec pts = log_spaced(1e-6, 0.9, count);
  // nudge off the endpoints of the open interval
  pts.front() = 1.0000001e-6;
  pts.back() = 0.8999999;
  return pts;
}

SampleRegion one_d(double xr, double zr, double pin, double pout, std::size_t count = 2000) {
  SampleRegion r;
  r.n = 1;
  r.x_radius = xr;
  r.z_min = -zr;
  r.z_max = zr;
  r.p_inner = pin;
  r.p_outer = pout;
  r.count = count;
  r.seed = 3;
  return r;
}

}  // namespace

TEST(Build, ExponentsAndCoefficients) {
  const ClosedFormSolution a = build(OddPower{4, 0});
  EXPECT_DOUBLE_EQ(*a.alpha, 0.5);
  EXPECT_DOUBLE_EQ(a.coefficient, 0.25);
  const ClosedFormSolution b = build(OddPower{4, 1});
  EXPECT_DOUBLE_EQ(*b.alpha, 1.0 / 3.0);
  EXPECT_NEAR(b.coefficient, 1.0 / 18.0, 1e-15);
  const ClosedFormSolution c = build(XPower{5, 0});
  EXPECT_DOUBLE_EQ(*c.alpha, 0.5);
  EXPECT_DOUBLE_EQ(c.coefficient, -0.125);
  const ClosedFormSolution d = build(LogType{});
  EXPECT_FALSE(d.alpha.has_value());
  EXPECT_DOUBLE_EQ(d.domain_max, 0.9);
}

TEST(Build, OddPowerMZeroMatchesClosedForm) {
  // m = 0: C1^{-1} = (1 - a) a^{1-q}
  for (int q : {3, 4, 5, 6, 8}) {
    const ClosedFormSolution s = build(OddPower{q, 0});
    const double a = static_cast<double>(q - 2) / q;
    EXPECT_NEAR(1.0 / s.coefficient, (1.0 - a) * std::pow(a, 1.0 - q), 1e-12) << q;
  }
}

TEST(Build, ExponentOutsideUnitIntervalRejected) {
  EXPECT_THROW(build(OddPower{2, 0}), InvalidFamily);
  EXPECT_THROW(build(OddPower{3, -1}), InvalidFamily);
  EXPECT_THROW(build(XPower{4, 1}), InvalidFamily);
  EXPECT_THROW(build(XPower{3, 0}), InvalidFamily);
  EXPECT_THROW(build(Lift{OddPower{2, 0}, {1.0}}), InvalidFamily);
}

TEST(Build, HandEvaluationOddPowerAtHalf) {
  // u = sqrt(x): u'' = -x^{-3/2}/4, u (u')^4 = x^{1/2} x^{-2}/16 = x^{-3/2}/16
  const double x = 0.5;
  const double upp = -0.25 * std::pow(x, -1.5);
  const double lhs = std::sqrt(x) * std::pow(0.5 / std::sqrt(x), 4);
  EXPECT_NEAR(lhs / upp, -0.25, 1e-15);
  const ClosedFormSolution s = build(OddPower{4, 0});
  EXPECT_NEAR(s.ddu(x), upp, 1e-15);
  EXPECT_LE(std::abs(s.base_residual(x)), 1e-15);
}

TEST(Build, HandEvaluationLogTypeAtTenth) {
  const double x = 0.1, L = -std::log(x);
  const ClosedFormSolution s = build(LogType{});
  EXPECT_NEAR(2.0 * s.ddu(x), -1.0 / (x * std::sqrt(L)), 1e-12);
  EXPECT_NEAR(-x * std::exp(2.0 * L) / s.du(x), -1.0 / (x * std::sqrt(L)), 1e-10);
  EXPECT_LE(std::abs(s.base_residual(x)), 1e-14);
}

TEST(Build, LogTypeProfileIntegratesSlope) {
  // Simpson integral of sqrt(-ln t) from 0.05 to 0.6 versus u(0.6) - u(0.05)
  const ClosedFormSolution s = build(LogType{});
  const double a = 0.05, b = 0.6;
  const int n = 2000;
  const double h = (b - a) / n;
  double acc = s.du(a) + s.du(b);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * s.du(a + i * h);
  EXPECT_NEAR(acc * h / 3.0, s.u(b) - s.u(a), 1e-10);
  EXPECT_LT(std::abs(s.u(1e-12)), 1e-10);
}

TEST(OdeResidual, AllFamiliesBothSides) {
  const Vec pts = residual_points(1000);
  Vec neg(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) neg[i] = -pts[i];
  for (const SingularFamily& f :
       {SingularFamily(OddPower{4, 0}), SingularFamily(OddPower{4, 1}), SingularFamily(XPower{5, 0}),
        SingularFamily(LogType{}), SingularFamily(OddPower{7, 2}), SingularFamily(XPower{9, 1})}) {
    const ClosedFormSolution s = build(f);
    EXPECT_LE(ode_residual(s, pts), 1e-10) << s.name;
    EXPECT_LE(ode_residual(s, neg), 1e-10) << s.name;
  }
  EXPECT_LE(ode_residual(build(XPower{5, 0}), Vec{-0.3}), 1e-15);
}

TEST(OdeResidual, RejectsNearSingularPoint) {
  const ClosedFormSolution s = build(OddPower{4, 0});
  EXPECT_THROW(ode_residual(s, Vec{0.5, 1e-7}), InvalidInput);
  EXPECT_THROW(ode_residual(build(LogType{}), Vec{0.95}), InvalidInput);
}

TEST(PhaseJets, MatchFiniteDifferences) {
  // step 1e-5 central differences: truncation ~1e-7 relative on the steep p^q terms
  EXPECT_LE(derivative_consistency_error(build(OddPower{4, 0}).phase, one_d(1.0, 1.0, 0.0, 2.0, 300)), 1e-6);
  EXPECT_LE(derivative_consistency_error(build(OddPower{5, 1}).phase, one_d(1.0, 1.0, 0.0, 2.0, 300)), 1e-6);
  EXPECT_LE(derivative_consistency_error(build(XPower{5, 0}).phase, one_d(1.0, 1.0, 0.0, 2.0, 300)), 1e-6);
  EXPECT_LE(derivative_consistency_error(build(LogType{}).phase, one_d(0.9, 1.0, 0.5, 1.5, 300)), 1e-6);
}

TEST(Properties, ExactOddness) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> x(-5.0, 5.0);
  for (const SingularFamily& f :
       {SingularFamily(OddPower{4, 0}), SingularFamily(OddPower{6, 3}), SingularFamily(XPower{5, 0}),
        SingularFamily(XPower{10, 2})}) {
    const ClosedFormSolution s = build(f);
    for (int i = 0; i < 200; ++i) {
      const double v = x(rng);
      EXPECT_EQ(s.u(-v), -s.u(v));
    }
  }
}

TEST(Properties, LipschitzQuotientGrowthLaw) {
  for (const SingularFamily& f : {SingularFamily(OddPower{4, 0}), SingularFamily(OddPower{4, 1}),
                                  SingularFamily(XPower{5, 0}), SingularFamily(XPower{8, 1})}) {
    const ClosedFormSolution s = build(f);
    const double a = *s.alpha;
    for (int k = 2; k <= 6; ++k) {
      const double r = std::pow(10.0, -k);
      const double ratio = lipschitz_quotient(s, r) / std::pow(10.0, k * (1.0 - a));
      EXPECT_GE(ratio, 0.5) << s.name << " k=" << k;
      EXPECT_LE(ratio, 2.0) << s.name << " k=" << k;
      // symmetric pair oracle: 2 (r/2)^a / r^a
      EXPECT_NEAR(holder_quotient(s, r), std::pow(2.0, 1.0 - a), 1e-9);
    }
  }
}

TEST(Properties, LogTypeQuotientGrowsLikeRootLog) {
  const ClosedFormSolution s = build(LogType{});
  for (int k = 2; k <= 6; ++k) {
    const double r = std::pow(10.0, -k);
    const double ratio = lipschitz_quotient(s, r) / std::sqrt(-std::log(r));
    EXPECT_GE(ratio, 0.5);
    EXPECT_LE(ratio, 2.0);
  }
  EXPECT_THROW(holder_quotient(s, 0.1), InvalidFamily);
}

TEST(ConditionCertificates, OddPowerBreaksMonotonicityInZ) {
  const GradientConditionReport r = gradient_conditions_check(build(OddPower{4, 0}).phase, one_d(1.0, 1.0, 0.0, 2.0));
  EXPECT_FALSE(r.cond_b.pass);
  ASSERT_TRUE(r.cond_b.witness.has_value());
  EXPECT_LT(r.cond_b.witness_value, 0.0);
}

TEST(ConditionCertificates, XPowerBreaksUniformXxBound) {
  const GradientConditionReport r = gradient_conditions_check(build(XPower{5, 0}).phase, one_d(1.0, 1.0, 0.0, 2.0));
  EXPECT_FALSE(r.xx_uniform);
  EXPECT_FALSE(r.cond_a.pass);
  for (std::size_t i = 1; i < r.xx_sup_by_scale.size(); ++i)
    EXPECT_GT(r.xx_sup_by_scale[i], 4.0 * r.xx_sup_by_scale[i - 1]);
}

TEST(ConditionCertificates, LogTypeBreaksMomentumDecay) {
  double prev = 0.0;
  for (double pout : {1.0, 1.5, 2.0}) {
    const GradientConditionReport r =
        gradient_conditions_check(build(LogType{}).phase, one_d(0.9, 1.0, 0.5, pout));
    EXPECT_FALSE(r.cond_c.pass);
    EXPECT_GT(r.cond_c.minimal_constant, prev);
    prev = r.cond_c.minimal_constant;
  }
  EXPECT_GT(prev, 10.0);
}

TEST(TouchTest, NoQuadraticTouchesAtOrigin) {
  for (const SingularFamily& f : {SingularFamily(OddPower{4, 0}), SingularFamily(OddPower{4, 1}),
                                  SingularFamily(XPower{5, 0}), SingularFamily(LogType{})}) {
    const ClosedFormSolution s = build(f);
    const TouchReport r = viscosity_touch_test(s, 0.0);
    EXPECT_FALSE(r.admissible_touch()) << s.name;
    EXPECT_FALSE(r.classical_residual.has_value());
    // the coarsest grid cannot see the cusp; refinement removes every candidate
    EXPECT_TRUE(r.levels.front().touches_above) << s.name;
    for (std::size_t i = 1; i < r.levels.size(); ++i)
      EXPECT_GE(r.levels[i].min_slope_above, r.levels[i - 1].min_slope_above);
  }
}

TEST(TouchTest, LogTypeSecantOracle) {
  // u(r)/r from the evaluator versus the log-parameterized secant
  const ClosedFormSolution s = build(LogType{});
  const auto sec = origin_secant(s);
  for (double r : {0.5, 1e-2, 1e-5, 1e-9})
    EXPECT_NEAR(sec(-std::log(r)), s.u(r) / r, 1e-9 * s.u(r) / r);
}

TEST(TouchTest, ClassicalPointHoldsWithEquality) {
  for (const SingularFamily& f : {SingularFamily(OddPower{4, 0}), SingularFamily(XPower{5, 0}), SingularFamily(LogType{})}) {
    const ClosedFormSolution s = build(f);
    const TouchReport r = viscosity_touch_test(s, 0.5);
    EXPECT_TRUE(r.touches_above) << s.name;
    EXPECT_TRUE(r.touches_below) << s.name;
    ASSERT_TRUE(r.classical_residual.has_value());
    EXPECT_LE(*r.classical_residual, 1e-8);
    EXPECT_EQ(r.violations, 0u) << s.name << " worst " << r.worst_violation;
    ASSERT_TRUE(r.above_gap && r.below_gap);
    EXPECT_GE(*r.above_gap, -1e-8);
    EXPECT_LE(*r.below_gap, 1e-8);
  }
}

TEST(TouchTest, QuadraticControlEverywhere) {
  for (double a : {-2.0, 0.0, 0.7}) {
    const ClosedFormSolution s = ClosedFormSolution::quadratic(a);
    for (double x0 : {-1.0, 0.0, 0.3, 2.0}) {
      const TouchReport r = viscosity_touch_test(s, x0);
      ASSERT_TRUE(r.above_gap && r.below_gap);
      EXPECT_NEAR(*r.above_gap, 0.0, 1e-8);
      EXPECT_NEAR(*r.below_gap, 0.0, 1e-8);
      EXPECT_EQ(r.violations, 0u);
    }
  }
}

TEST(Lift, UnitShiftRangeAndWitness) {
  const LiftPhaseRange r = lift_phase_range(Lift{XPower{5, 0}, {1.0, 1.0}});
  EXPECT_DOUBLE_EQ(r.shift, kPi / 2.0);
  EXPECT_DOUBLE_EQ(r.critical, kPi / 2.0);
  EXPECT_NEAR(r.total_min, 0.0, 1e-6);
  EXPECT_NEAR(r.total_max, kPi, 1e-6);
  ASSERT_TRUE(r.witness.has_value());
  EXPECT_LT(r.witness_phase, kPi / 2.0);
  EXPECT_GT(*r.witness, 0.0);  // u'' < 0 on the positive side
  EXPECT_LE(r.additivity_error, 1e-12);
}

TEST(Lift, ZeroShiftKeepsBaseRange) {
  const LiftPhaseRange r = lift_phase_range(Lift{OddPower{4, 0}, {0.0, 0.0, 0.0}});
  EXPECT_EQ(r.total_min, r.base_min);
  EXPECT_EQ(r.total_max, r.base_max);
}

TEST(Lift, LargeShiftStillDipsBelowCritical) {
  // -pi/2 + 2 arctan(1e6) = pi/2 - 2e-6 < pi/2, reached once |u''| > 1e6
  const LiftPhaseRange r = lift_phase_range(Lift{XPower{5, 0}, {1e6, 1e6}});
  EXPECT_NEAR(r.shift, kPi - 2e-6, 1e-12);
  ASSERT_TRUE(r.witness.has_value());
  EXPECT_LT(r.total_min, kPi / 2.0);
  EXPECT_LT(std::abs(*r.witness), 1e-3);
}

TEST(Lift, AdditivityProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coef(-50.0, 50.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec a(1 + trial % 4);
    for (double& v : a) v = coef(rng);
    const LiftPhaseRange r = lift_phase_range(Lift{trial % 2 ? BaseFamily(OddPower{4, 0}) : BaseFamily(LogType{}), a}, 300);
    EXPECT_LE(r.additivity_error, 1e-12);
  }
}

TEST(Lift, PhaseModelAndValue) {
  const ClosedFormSolution s = build(Lift{OddPower{4, 0}, {2.0, -1.0}});
  EXPECT_EQ(s.dim(), 3u);
  const PhaseModel m = lift_phase_model(s);
  const Vec x{0.3, 1.0, 2.0};
  const double z = s.u(0.3);
  const Vec p{s.du(0.3), 2.0, -2.0};
  EXPECT_NEAR(m.value(x, z, p), std::atan(s.ddu(0.3)) + std::atan(2.0) - std::atan(1.0), 1e-14);
  EXPECT_NEAR(s.value(x), std::sqrt(0.3) + 1.0 - 2.0, 1e-15);
}
