#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "poissonred/dynamics.hpp"

using namespace poissonred;

namespace {

using Upper = std::map<std::pair<int, int>, Expression>;

PoissonStructure theta_f_pair(const char* theta, const char* F) {
  return PoissonStructure::theta_f_field(2, Upper{{{0, 1}, parse(theta)}}, Upper{{{0, 1}, parse(F)}});
}

PoissonStructure planar(const char* th, const char* F, const char* g11, const char* g12, const char* g21,
                        const char* g22) {
  return PoissonStructure::general_planar({parse(th), parse(F), parse(g11), parse(g12), parse(g21), parse(g22)});
}

const char* kHarmonic = "(p1^2+p2^2+q1^2+q2^2)/2";

PhasePoint random_point(SplitMix64& rng, double lo, double hi) {
  std::vector<double> x(4);
  for (auto& v : x) v = rng.uniform(lo, hi);
  return PhasePoint(std::move(x));
}

}  // namespace

TEST(Velocity, CanonicalFreeParticle) {
  const auto v = velocity(PoissonStructure::canonical(1), parse("p1^2/2"), PhasePoint{0, 2});
  EXPECT_EQ(v[0], 2.0);
  EXPECT_EQ(v[1], 0.0);
}

TEST(Velocity, ConstantThetaLinearPotential) {
  const auto v = velocity(PoissonStructure::constant_theta_f(0.5, 0.0), parse("q1"), PhasePoint{3, 1, 4, 1});
  EXPECT_EQ(v, (std::vector<double>{0.0, -0.5, -1.0, 0.0}));
}

TEST(Velocity, ReducedHarmonicCombinations) {
  const auto v = velocity(PoissonStructure::constant_theta_f(1, 1), parse(kHarmonic), PhasePoint{1, 0, 0, 0});
  EXPECT_EQ(v[0] + v[3], 0.0);
  EXPECT_EQ(v[1] - v[2], 0.0);
}

TEST(Integrate, HarmonicPeriod) {
  FlowProblem p{PoissonStructure::canonical(1), parse("(p1^2+q1^2)/2"), PhasePoint{1, 0}, 1e-3,
                2 * std::numbers::pi};
  const auto tr = integrate(p);
  EXPECT_FALSE(tr.truncated);
  EXPECT_DOUBLE_EQ(tr.times.back(), 2 * std::numbers::pi);
  EXPECT_NEAR(tr.states.back()[0], 1.0, 1e-8);
  EXPECT_NEAR(tr.states.back()[1], 0.0, 1e-8);
  for (std::size_t k = 1; k < tr.times.size(); ++k) ASSERT_GT(tr.times[k], tr.times[k - 1]);
}

TEST(Integrate, MidpointConservesQuadraticEnergy) {
  FlowProblem p{PoissonStructure::canonical(1), parse("(p1^2+q1^2)/2"), PhasePoint{1, 0}, 1e-2, 10.0,
                Method::ImplicitMidpoint};
  const auto tr = integrate(p);
  EXPECT_LE(drift(tr.series("H")).max_abs_drift, 1e-12);
}

TEST(Integrate, ReductionConstantsFrozen) {
  FlowProblem p{PoissonStructure::constant_theta_f(1, 1), parse(kHarmonic), PhasePoint{1, 0, 0, 0}, 1e-3, 10.0};
  const auto tr = integrate(p);
  EXPECT_LE(drift(tr.series("c1")).max_abs_drift, 1e-8);
  EXPECT_LE(drift(tr.series("c2")).max_abs_drift, 1e-8);
  EXPECT_TRUE(tr.near_degenerate);
}

TEST(Integrate, ThetaConstantAlongFlowsForFiveHamiltonians) {
  const auto s = theta_f_pair("-q1/p2", "-p2/q1");
  for (const char* h : {kHarmonic, "q1*p1", "p1^2", "q1^2+p2^2", "q1*q2 + p1*p2 + q2^3/3"}) {
    FlowProblem p{s, parse(h), PhasePoint{0.8, 0.3, 0.4, 1.2}, 1e-3, 10.0};
    const auto tr = integrate(p);
    ASSERT_FALSE(tr.truncated) << h;
    EXPECT_LE(drift(tr.series("theta12")).max_abs_drift, 1e-7) << h;
    EXPECT_LE(drift(tr.series("F12")).max_abs_drift, 1e-7) << h;
    const auto e = drift(tr.series("H"));
    EXPECT_LE(e.max_abs_drift, 1e-7 * (1 + std::abs(e.initial))) << h;
  }
}

TEST(Integrate, BlowUpIsTruncated) {
  FlowProblem p{PoissonStructure::canonical(1), parse("q1^2*p1"), PhasePoint{10, 0}, 0.01, 10.0};
  const auto tr = integrate(p);
  EXPECT_TRUE(tr.truncated);
  EXPECT_LT(tr.times.back(), 10.0);
}

TEST(Integrate, RejectsBadSteps) {
  FlowProblem p{PoissonStructure::canonical(1), parse("q1"), PhasePoint{0, 0}, 2.0, 1.0};
  EXPECT_THROW(integrate(p), std::invalid_argument);
}

TEST(Evolution, ConstantStructureVanishes) {
  const auto r = evolution_residuals(PoissonStructure::constant_theta_f(0.3, 0.9), parse("q1*p2^3"),
                                     PhasePoint{1, 2, 3, 4});
  EXPECT_EQ(max_abs(r), 0.0);
}

TEST(Evolution, ImplicitFixtureVanishes) {
  const auto s = theta_f_pair("q1/(1-p2)", "(1-p2)/q1");
  SplitMix64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const auto x = random_point(rng, 0.2, 0.8);
    EXPECT_LE(jacobi_residual(s, x).generic_max, 1e-12);
    EXPECT_LE(max_abs(evolution_residuals(s, parse("q1*p1"), x)), 1e-9);
  }
}

TEST(Evolution, JacobiViolationShows) {
  const auto r = evolution_residuals(theta_f_pair("q2", "0"), parse("p2"), PhasePoint{0.01, 0.01, 0.01, 0.01});
  EXPECT_GE(max_abs(r), 0.9);
  EXPECT_DOUBLE_EQ(*find_residual(r, "ev2_12"), -1.0);
}

TEST(Vanishing, ReducedHarmonic) {
  const auto r = vanishing_combinations(PoissonStructure::constant_theta_f(1, 1), parse(kHarmonic),
                                        PhasePoint{1, 0, 0, 0});
  EXPECT_EQ(max_abs(r), 0.0);
}

TEST(Vanishing, CanonicalIsNotReduced) {
  const auto r = vanishing_combinations(PoissonStructure::canonical(2), parse("p1"), PhasePoint{1, 2, 3, 4});
  EXPECT_EQ(*find_residual(r, "qdot1+theta*pdot"), 1.0);
}

TEST(Vanishing, DegeneratePlanar) {
  const auto s = planar("1", "1", "1", "0", "0", "1");
  SplitMix64 rng(4);
  for (int k = 0; k < 20; ++k) EXPECT_LE(max_abs(vanishing_combinations(s, parse("q2"), random_point(rng, -2, 2))), 1e-12);
}

TEST(Vanishing, PlanarCombinationsScaleWithDeterminantCondition) {
  const auto s = planar("2", "1", "1", "0.5", "0.3", "1");
  const auto r = vanishing_combinations(s, parse(kHarmonic), PhasePoint{0.4, -0.2, 0.7, 0.1});
  EXPECT_GT(max_abs(r), 1e-3);
}

TEST(DOperators, TimeDerivativeExpansion) {
  const auto s = planar("1+0.3*q1*p2", "sin(p1)", "2-q2", "q1*q2", "0.5*p2^2", "exp(0.1*q1)");
  SplitMix64 rng(6);
  for (int k = 0; k < 50; ++k) {
    const auto x = random_point(rng, -1, 1);
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    const auto f = parse("q1^2*p2 + " + std::to_string(a) + "*q2*p1^3 - " + std::to_string(b) + "*p2");
    EXPECT_LE(time_derivative_identity(s, parse(kHarmonic), f, x), 1e-9);
  }
}

TEST(DOperators, DependenceOnDegenerateStructure) {
  const auto s = planar("1-0.5*p1", "1-0.3*q2", "1", "1-(1-0.5*p1)*(1-0.3*q2)", "1", "1");
  SplitMix64 rng(7);
  for (int k = 0; k < 20; ++k) {
    const auto x = random_point(rng, -1, 1);
    const auto d = d_operator_dependence(s, x);
    EXPECT_LE(d.residual_corrected_1, 1e-12);
    EXPECT_LE(d.residual_corrected_2, 1e-12);
    EXPECT_NEAR(d.sigma_corrected, 1 - 0.3 * x[1], 1e-12);
  }
  const auto d = d_operator_dependence(planar("1", "1", "1", "0", "0", "1"), PhasePoint{0, 0, 0, 0});
  EXPECT_GT(d.residual_literal_1, 0.1);
  EXPECT_DOUBLE_EQ(d.sigma_corrected, 1.0);
}

TEST(Frequency, ZeroCrossingsOfSine) {
  std::vector<double> t, y;
  for (int k = 0; k <= 10000; ++k) {
    t.push_back(k * 1e-3);
    y.push_back(std::sin(2 * t.back() + 0.3));
  }
  EXPECT_NEAR(*zero_crossing_frequency(t, y), 2.0, 1e-6);
  EXPECT_FALSE(zero_crossing_frequency(std::vector<double>{0, 1}, std::vector<double>{1, 1}).has_value());
}
