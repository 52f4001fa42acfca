#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "poissonred/hodograph.hpp"

using namespace poissonred;

namespace {

Grid2D square(double half, int n) {
  Grid2D g;
  g.x_min = g.y_min = -half;
  g.x_max = g.y_max = half;
  g.nx = g.ny = n;
  return g;
}

HodographParams alpha_only(double a) {
  HodographParams p;
  p.alpha = a;
  return p;
}

HodographParams loglog_params(int branch) {
  HodographParams p;
  p.alpha = 1.0;
  p.u0 = 1.0;
  p.v0 = 0.5;
  p.branch = branch;
  return p;
}

Grid2D loglog_grid() {
  Grid2D g;
  g.x_min = -2.0;
  g.x_max = 0.0;
  g.y_min = 2.5;
  g.y_max = 4.0;
  g.nx = g.ny = 15;
  return g;
}

}  // namespace

TEST(Quadrature, AdaptiveSimpson) {
  EXPECT_NEAR(adaptive_simpson([](double s) { return std::sin(s); }, 0.0, std::numbers::pi), 2.0, 1e-10);
  EXPECT_NEAR(adaptive_simpson([](double s) { return std::exp(s); }, 1.0, 0.0), 1.0 - std::exp(1.0), 1e-10);
  EXPECT_EQ(adaptive_simpson([](double) { return 1.0; }, 2.0, 2.0), 0.0);
}

TEST(Grid, EndpointsAreExact) {
  Grid2D g;
  g.x_min = -1.0;
  g.x_max = 0.7;
  g.nx = 7;
  EXPECT_EQ(g.x(0), -1.0);
  EXPECT_EQ(g.x(6), 0.7);
  g.nx = 1;
  EXPECT_EQ(g.x(0), -1.0);
}

TEST(Units, Labels) {
  EXPECT_EQ(unit_of(HodographKind::Linear, "alpha"), "[length]^3");
  EXPECT_EQ(unit_of(HodographKind::Log, "alpha"), "[length]");
  EXPECT_EQ(unit_of(HodographKind::LogLog, "u0"), "[length]^-2");
}

TEST(Families, MissingParametersAreRejected) {
  EXPECT_THROW(build_family(HodographKind::Linear, {}), std::invalid_argument);
  EXPECT_THROW(build_family(HodographKind::Log, alpha_only(1.0)), std::invalid_argument);
  EXPECT_THROW(build_family(HodographKind::Linear, alpha_only(0.0)), std::invalid_argument);
  HodographParams p;
  p.f = parse("x*s", {"x", "s"});
  p.g = parse("s", {"s"});
  EXPECT_THROW(build_family(HodographKind::CustomFG, p), std::invalid_argument);
}

TEST(Families, LinearClosedForm) {
  const auto fam = build_family(HodographKind::Linear, alpha_only(2.0));
  const auto uv = fam.fields_at(0.5, 1.0);
  ASSERT_TRUE(uv);
  EXPECT_DOUBLE_EQ((*uv)[0], -2.0 + 0.125);
  EXPECT_DOUBLE_EQ((*uv)[1], -2.0 - 0.125);
}

TEST(PdeResidual, LinearFamily) {
  const auto r = pde_residual(build_family(HodographKind::Linear, alpha_only(1.0)), square(1.0, 21));
  EXPECT_LE(r.max_res1, 1e-8);
  EXPECT_LE(r.max_res2, 1e-8);
  EXPECT_EQ(r.excluded, 21u);
  EXPECT_EQ(r.points, 21u * 20u);
  EXPECT_GT(r.min_abs_jacobian, 1e-12);
}

TEST(PdeResidual, LogFamily) {
  HodographParams p = alpha_only(0.7);
  p.u0 = 1.3;
  const auto r = pde_residual(build_family(HodographKind::Log, p), square(1.0, 21));
  EXPECT_LE(r.max_res1, 1e-8);
  EXPECT_LE(r.max_res2, 1e-8);
  EXPECT_GT(r.min_abs_jacobian, 1e-12);
}

TEST(PdeResidual, CorruptedFamilyIsDetected) {
  const auto lin = build_family(HodographKind::Linear, alpha_only(1.0));
  const auto bad = HodographFamily::from_fields(lin.u_field() + parse("0.1*x", {"x", "y"}), lin.v_field());
  const auto r = pde_residual(bad, square(1.0, 21));
  EXPECT_GE(std::max(r.max_res1, r.max_res2), 0.05);
}

TEST(PdeResidual, LimitFieldSolvesBoth) {
  const auto lim = HodographFamily::from_fields(parse("-y/x", {"x", "y"}), parse("-y/x", {"x", "y"}));
  const auto r = pde_residual(lim, square(1.0, 21));
  EXPECT_LE(std::max(r.max_res1, r.max_res2), 1e-12);
  EXPECT_EQ(r.min_abs_u_minus_v, 0.0);
}

TEST(PdeResidual, LogLogBothBranches) {
  for (int branch : {+1, -1}) {
    const auto fam = build_family(HodographKind::LogLog, loglog_params(branch));
    const auto r = pde_residual(fam, loglog_grid());
    EXPECT_LE(std::max(r.max_res1, r.max_res2), 1e-8) << branch;
    EXPECT_GT(r.min_abs_u_minus_v, 0.0);
    EXPECT_GT(r.points, 0u);
  }
}

TEST(LogLog, ProductOracle) {
  const auto p = loglog_params(+1);
  const auto fam = build_family(HodographKind::LogLog, p);
  std::size_t n = 0;
  scan(fam, loglog_grid(), [&](double x, double y, const std::array<double, 2>& uv) {
    EXPECT_NEAR(uv[0] * uv[1], *p.u0 * *p.v0 * std::exp(x / *p.alpha), 1e-9);
    EXPECT_NEAR(uv[0] + uv[1], -y / *p.alpha, 1e-12);
    ++n;
  });
  EXPECT_GT(n, 0u);
}

TEST(LogLog, SweepRejected) {
  const std::vector<double> alphas{1.0, 10.0};
  EXPECT_THROW(limit_sweep(HodographKind::LogLog, alphas, square(1.0, 5)), std::invalid_argument);
}

TEST(LimitSweep, LinearDeviationsAreExact) {
  const std::vector<double> alphas{1.0, 10.0, 100.0};
  const auto t = limit_sweep(HodographKind::Linear, alphas, square(1.0, 21));
  ASSERT_EQ(t.rows.size(), 3u);
  const double expected[] = {0.5, 0.05, 0.005};
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(t.rows[k].max_dev_u, expected[k], 1e-12);
    EXPECT_NEAR(t.rows[k].max_dev_v, expected[k], 1e-12);
    EXPECT_NEAR(t.rows[k].max_u_minus_v, 2 * expected[k], 1e-12);
  }
  EXPECT_NEAR(t.fitted_order, 1.0, 1e-9);
}

TEST(LimitSweep, LogDeviationShrinks) {
  const std::vector<double> alphas{1.0, 3.0, 10.0, 30.0, 100.0};
  const auto t = limit_sweep(HodographKind::Log, alphas, square(1.0, 21));
  for (std::size_t k = 1; k < t.rows.size(); ++k) {
    EXPECT_LT(t.rows[k].max_dev_u, t.rows[k - 1].max_dev_u);
    EXPECT_LT(t.rows[k].max_dev_v, t.rows[k - 1].max_dev_v);
  }
  EXPECT_NEAR(t.fitted_order, 1.0, 0.1);
}

TEST(LimitSweep, SinglePointGridGivesPointwiseValues) {
  Grid2D g;
  g.x_min = 0.4;
  g.y_min = -0.3;
  g.nx = g.ny = 1;
  const std::vector<double> alphas{2.0};
  const auto t = limit_sweep(HodographKind::Linear, alphas, g);
  EXPECT_EQ(t.rows[0].points, 1u);
  EXPECT_NEAR(t.rows[0].max_dev_u, 0.4 / 4.0, 1e-15);
}

TEST(CustomFG, ReproducesLinearFamily) {
  HodographParams p;
  p.f = parse("1.5*s", {"s"});
  p.g = parse("-1.5*s", {"s"});
  const auto custom = build_family(HodographKind::CustomFG, p);
  const auto lin = build_family(HodographKind::Linear, alpha_only(1.5));
  const auto g = square(1.0, 11);
  std::size_t n = 0;
  scan(custom, g, [&](double x, double y, const std::array<double, 2>& uv) {
    if (std::abs(x) < g.bands.x) return;
    const auto ref = lin.fields_at(x, y);
    ASSERT_TRUE(ref);
    EXPECT_NEAR(uv[0], (*ref)[0], 1e-9 * (1 + std::abs((*ref)[0])));
    EXPECT_NEAR(uv[1], (*ref)[1], 1e-9 * (1 + std::abs((*ref)[1])));
    ++n;
  });
  EXPECT_EQ(n, 110u);
}

TEST(CustomFG, InverseMapRelations) {
  HodographParams p;
  p.f = parse("2*s", {"s"});
  p.g = parse("-2*s", {"s"});
  const auto fam = build_family(HodographKind::CustomFG, p);
  for (double u : {-1.0, 0.3, 2.0})
    for (double v : {-0.5, 1.1}) {
      const auto r = inverse_map_residual(fam, u, v);
      EXPECT_LE(std::max(r[0], r[1]), 1e-9);
    }
}

TEST(CustomFG, NonlinearGeneratorsSolveThePdes) {
  HodographParams p;
  p.f = parse("s + 0.1*s^3", {"s"});
  p.g = parse("-s", {"s"});
  const auto fam = build_family(HodographKind::CustomFG, p);
  const auto xy = fam.xy_of(1.0, -1.0);
  EXPECT_NEAR(xy[0], 2.1, 1e-12);
  EXPECT_NEAR(xy[1], -0.075, 1e-10);
  Grid2D g;
  g.x_min = 1.9;
  g.x_max = 2.3;
  g.y_min = -0.3;
  g.y_max = 0.1;
  g.nx = g.ny = 9;
  const auto r = pde_residual(fam, g);
  EXPECT_EQ(r.points, 81u);
  EXPECT_LE(std::max(r.max_res1, r.max_res2), 1e-6);
  EXPECT_GT(r.min_abs_jacobian, 1e-12);
  const auto inv = inverse_map_residual(fam, 1.2, -0.9);
  EXPECT_LE(std::max(inv[0], inv[1]), 1e-8);
}
