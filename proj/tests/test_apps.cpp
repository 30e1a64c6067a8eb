#include <gtest/gtest.h>

#include "support.hpp"

using namespace regdesign;

namespace {

Vector theta(double a, double b, double c) {
  Vector t(3);
  t << a, b, c;
  return t;
}

}  // namespace

TEST(GeCalibration, SensitivityAtPublishedEstimates) {
  const auto cal = default_ge_calibration();
  EXPECT_NEAR(cal.d, 3.7377551020408165e-3, 1e-17);
  const Vector omega = ge_sensitivity(cal.theta_obs, cal.y0, cal.d);
  EXPECT_DOUBLE_EQ(omega[0], 1.5);
  EXPECT_NEAR(omega[1], 1.98, 1e-14);
  EXPECT_NEAR(omega[2], -2.0243091891891893, 1e-12);
  EXPECT_NEAR(ge_tau(cal.theta_obs, cal.y0, cal.d), 0.0039027, 1e-15);
}

TEST(GeCalibration, SensitivityIsTheGradient) {
  const auto cal = default_ge_calibration();
  const Vector omega = ge_sensitivity(cal.theta_obs, cal.y0, cal.d);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double h = 1e-7;
    Vector up = cal.theta_obs, down = cal.theta_obs;
    up[j] += h;
    down[j] -= h;
    const double fd = (ge_tau(up, cal.y0, cal.d) - ge_tau(down, cal.y0, cal.d)) / (2.0 * h);
    EXPECT_NEAR(fd, omega[j], 1e-6 * std::abs(omega[j])) << j;
  }
}

TEST(GeCalibration, DegenerateChannels) {
  // No price response: the direct effect passes through unchanged.
  Vector w = ge_sensitivity(theta(0.1, 0.2, 0.0), 2.0, 0.5);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_DOUBLE_EQ(w[2], -0.4);
  // No direct effect: nothing passes through the price channel.
  w = ge_sensitivity(theta(0.1, 0.0, -0.3), 2.0, 0.5);
  EXPECT_DOUBLE_EQ(w[2], 0.0);
  EXPECT_THROW(ge_sensitivity(theta(0.1, 0.2, -0.5), 2.0, 0.5), Error);
  EXPECT_THROW(recover_demand_slope(-0.1, 1.0), Error);
}

TEST(GeProblem, ExperimentAtObservationalSizeMatchesObservationalVariance) {
  const auto cal = default_ge_calibration();
  const auto p = build_ge_problem(cal, 1000.0, 3);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(p.arms[j].v2 / cal.n_obs, cal.sigma_obs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)), 1e-24);
  EXPECT_EQ(p.arms[0].name, "UCT");
  EXPECT_EQ(p.arms[2].name, "Job");
  // Standard errors implied by the covariance. The published table prints 6.56e-5, 9.86e-4, 1.01e-3.
  const Vector se = cal.sigma_obs.diagonal().cwiseSqrt();
  EXPECT_NEAR(se[0], 6.5650590248679e-5, 1e-15);
  EXPECT_NEAR(se[1], 9.864633799589e-4, 1e-14);
  EXPECT_NEAR(se[2], 1.0190976400718e-3, 1e-14);
  EXPECT_NEAR(se[0], 6.56e-5, 1e-7);
  EXPECT_NEAR(se[2], 1.01e-3, 1e-5);
  EXPECT_THROW(build_ge_problem(cal, 0.0, 1), Error);
}

TEST(SiteTable, SharesAreRenormalized) {
  const auto t = default_site_table();
  EXPECT_NEAR(t.omega_sum_before_normalization, 0.998, 1e-15);
  double sum = 0.0;
  for (const auto& a : t.areas) sum += a.omega;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  auto bad = t;
  bad.areas[0].omega = 0.5;
  EXPECT_THROW(normalize_site_table(bad), Error);
  bad = t;
  bad.areas[1].v_pre2 = 0.0;
  EXPECT_THROW(normalize_site_table(bad), Error);
}

TEST(SiteProblem, SelectionsAtFiftyTwoVillages) {
  const auto t = default_site_table();
  EXPECT_EQ(solve(build_site_problem(t, 52.0, 1)).x_star, (Selection{0, 1, 0, 0}));
  const auto two = solve(build_site_problem(t, 52.0, 2));
  EXPECT_EQ(two.x_star, (Selection{0, 1, 1, 0}));
  EXPECT_NEAR(two.n_star.sum(), 52.0, 1e-9);
  EXPECT_THROW(build_site_problem(t, 3.0, 2), Error);
}

TEST(MseRatioReport, ZeroBoundAndLargeBound) {
  const auto p = build_ge_problem(default_ge_calibration(), 1000.0, 2);
  const auto oracles = compute_oracles(p);
  const auto opt = solve(p, oracles);
  const auto ney = neyman_design(p, oracles);
  const std::vector<LabeledDesign> designs{{"optimal", opt.x_star, opt.gamma_star}, {"neyman", ney.x_star, ney.gamma_star}};
  const auto at0 = mse_ratio_report(p, 0.0, designs);
  ASSERT_EQ(at0.size(), 2u);
  EXPECT_NEAR(at0[1].ratio, 1.0, 1e-10);
  EXPECT_NEAR(at0[0].ratio, opt.breakdown.variance_ratio(), 1e-10);
  const double big = 1e3 * std::sqrt(oracles.alpha.value / oracles.beta.value);
  const auto far = mse_ratio_report(p, big, designs);
  EXPECT_LT(far[0].ratio, far[1].ratio);
  EXPECT_NEAR(far[0].ratio, opt.breakdown.bias_ratio(), 1e-2 * opt.breakdown.bias_ratio());
  for (const auto& row : far) EXPECT_GE(row.ratio, 1.0 - 1e-9);
  EXPECT_THROW(mse_ratio_report(p, -1.0, designs), Error);
}
