#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "solver.hpp"

namespace regdesign {

// ---------------------------------------------------------------------------
// General-equilibrium cash-transfer application

struct GeCalibration {
  Vector theta_obs;  ///< (theta1, theta2, theta3): income, direct and price channels
  Matrix sigma_obs;
  double y0 = 0.0;   ///< income multiplier slope
  double d = 0.0;    ///< demand slope
  double n_obs = 1000.0;
  std::vector<std::string> arm_names{"UCT", "CCT", "Job"};
};

namespace detail {

inline double ge_denominator(const Vector& theta, double d) {
  if (theta.size() != 3) fail(ErrorCode::DimensionMismatch, "GE theta must have three entries");
  const double den = -theta[2] - d;
  if (den == 0.0 || !std::isfinite(den)) fail(ErrorCode::SingularDenominator, "-theta3 - d must be nonzero");
  return den;
}

}  // namespace detail

/// tau = theta2 + y0 theta1 + w0(theta) theta3 with the wage response w0 = theta2 / (-theta3 - d).
inline double ge_tau(const Vector& theta, double y0, double d) {
  const double den = detail::ge_denominator(theta, d);
  return theta[1] + y0 * theta[0] + theta[1] / den * theta[2];
}

/// Gradient of ge_tau in theta.
inline Vector ge_sensitivity(const Vector& theta, double y0, double d) {
  const double den = detail::ge_denominator(theta, d);
  Vector omega(3);
  omega << y0, 1.0 + theta[2] / den, -theta[1] * d / (den * den);
  return omega;
}

/// Demand slope reproducing a given sensitivity on theta2: solves 1 + theta3 / (-theta3 - d) = omega2.
inline double recover_demand_slope(double theta3, double omega2) {
  if (omega2 == 1.0) fail(ErrorCode::SingularDenominator, "omega2 = 1 does not identify the demand slope");
  return -theta3 - theta3 / (omega2 - 1.0);
}

/// Published observational calibration with the demand slope recovered from omega2 = 1.98.
inline GeCalibration default_ge_calibration() {
  GeCalibration cal;
  cal.theta_obs = Vector(3);
  cal.theta_obs << 5.42e-5, 1.93e-3, -1.85e-3;
  cal.sigma_obs = Matrix(3, 3);
  cal.sigma_obs << 4.31, -11.31, 5.57, -11.31, 973.11, -126.16, 5.57, -126.16, 1038.56;
  cal.sigma_obs *= 1e-9;
  cal.y0 = 1.5;
  cal.d = recover_demand_slope(cal.theta_obs[2], 1.98);
  cal.n_obs = 1000.0;
  return cal;
}

/**
 * Three arms, one per channel. An experiment of size n_j has variance
 * Sigma_jj * n_obs / n_j, i.e. per-unit variance Sigma_jj * n_obs; unit costs.
 */
inline DesignProblem build_ge_problem(const GeCalibration& cal, double n_tot, std::size_t max_arms) {
  if (!(n_tot > 0.0)) fail(ErrorCode::NonpositiveBudget, "total sample size must be positive");
  if (!(cal.n_obs > 0.0)) fail(ErrorCode::InvalidArgument, "n_obs must be positive");
  DesignProblem p;
  p.omega = ge_sensitivity(cal.theta_obs, cal.y0, cal.d);
  p.theta_obs = cal.theta_obs;
  p.sigma_obs = cal.sigma_obs;
  for (Eigen::Index j = 0; j < 3; ++j) {
    const std::string name = static_cast<std::size_t>(j) < cal.arm_names.size() ? cal.arm_names[static_cast<std::size_t>(j)]
                                                                               : "arm" + std::to_string(j + 1);
    p.arms.push_back({name, cal.sigma_obs(j, j) * cal.n_obs, 1.0});
  }
  p.budget = n_tot;
  p.feasibility = FeasibilitySet::at_most(max_arms);
  p.norm = NormSpec::linf();
  return validate_problem(p);
}

// ---------------------------------------------------------------------------
// Site selection application

struct SiteArea {
  std::string name;
  double n1 = 0.0;
  double n0 = 0.0;
  double v_pre2 = 0.0;
  double mu_hat = 0.0;
  double sigma2_hat = 0.0;
  double omega = 0.0;
};

struct SiteTable {
  std::vector<SiteArea> areas;
  double omega_sum_before_normalization = 1.0;  ///< recorded by normalize_site_table
};

/// Validates the table and rescales the population shares to sum to one.
inline SiteTable normalize_site_table(SiteTable table) {
  if (table.areas.empty()) fail(ErrorCode::InvalidArgument, "site table is empty");
  double sum = 0.0;
  for (const auto& a : table.areas) {
    if (!(a.omega >= 0.0)) fail(ErrorCode::InvalidArgument, "area '" + a.name + "' has a negative share");
    if (!(a.v_pre2 > 0.0)) fail(ErrorCode::InvalidArgument, "area '" + a.name + "' needs v_pre2 > 0");
    if (!(a.sigma2_hat > 0.0)) fail(ErrorCode::InvalidArgument, "area '" + a.name + "' needs sigma2_hat > 0");
    sum += a.omega;
  }
  if (std::abs(sum - 1.0) > 5e-3)
    fail(ErrorCode::InvalidArgument, "population shares must sum to one within 5e-3");
  for (auto& a : table.areas) a.omega /= sum;
  table.omega_sum_before_normalization = sum;
  return table;
}

/// Published area-level inputs (shares renormalized).
inline SiteTable default_site_table() {
  SiteTable t;
  t.areas = {{"Area 1", 11, 6, 0.000457, -0.0187, 0.0000453, 0.033},
             {"Area 2", 12, 9, 0.00175, -0.0377, 0.000140, 0.766},
             {"Area 3", 11, 12, 0.00138, -0.00390, 0.000187, 0.121},
             {"Area 4", 11, 6, 0.000932, 0.0148, 0.000130, 0.078}};
  return normalize_site_table(t);
}

/**
 * Area ATEs as coordinates. n_a treated plus n_a control villages give ATE
 * variance 2 v_pre2 / n_a; the budget counts treated villages at unit cost.
 */
inline DesignProblem build_site_problem(const SiteTable& table, double n1_total, std::size_t max_areas) {
  if (!(n1_total >= 2.0 * static_cast<double>(max_areas)))
    fail(ErrorCode::NonpositiveBudget, "need at least two treated villages per potentially selected area");
  const auto m = static_cast<Eigen::Index>(table.areas.size());
  DesignProblem p;
  p.omega = Vector(m);
  p.theta_obs = Vector(m);
  p.sigma_obs = Matrix::Zero(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto& area = table.areas[static_cast<std::size_t>(a)];
    p.omega[a] = area.omega;
    p.theta_obs[a] = area.mu_hat;
    p.sigma_obs(a, a) = area.sigma2_hat;
    p.arms.push_back({area.name, 2.0 * area.v_pre2, 1.0});
  }
  p.budget = n1_total;
  p.feasibility = FeasibilitySet::at_most(max_areas);
  p.norm = NormSpec::linf();
  return validate_problem(p);
}

// ---------------------------------------------------------------------------
// Sweeps and reports

struct SweepRow {
  double n_tot = 0.0;
  DesignSolution optimal;
  DesignSolution neyman;
};

/// Solves the regret-optimal and variance-optimal designs at every grid point; rows stay in grid order.
inline std::vector<SweepRow> sweep(const std::function<DesignProblem(double)>& builder, const std::vector<double>& n_grid,
                                   unsigned threads = 1) {
  if (n_grid.empty()) fail(ErrorCode::InvalidArgument, "sweep grid is empty");
  if (!std::is_sorted(n_grid.begin(), n_grid.end())) fail(ErrorCode::InvalidArgument, "sweep grid must be ascending");
  return parallel_map(n_grid.size(), threads, [&](std::size_t i) {
    const DesignProblem problem = builder(n_grid[i]);
    const Oracles oracles = compute_oracles(problem);
    return SweepRow{n_grid[i], solve(problem, oracles), neyman_design(problem, oracles)};
  });
}

struct MseRatioRow {
  std::string label;
  double worst_case_mse = 0.0;  ///< alpha + B^2 beta
  double oracle_mse = 0.0;      ///< min over feasible designs of the same quantity
  double ratio = 1.0;
};

struct LabeledDesign {
  std::string label;
  Selection x;
  Vector gamma;
};

/// Worst-case MSE at a calibrated bias bound relative to the best achievable at that bound.
inline std::vector<MseRatioRow> mse_ratio_report(const DesignProblem& problem, double B,
                                                 const std::vector<LabeledDesign>& designs) {
  if (!(B >= 0.0)) fail(ErrorCode::InvalidArgument, "bias bound must be nonnegative");
  const double oracle = penalized_oracle(problem, B);
  std::vector<MseRatioRow> rows;
  for (const auto& d : designs) {
    const auto shrink = EffectiveShrinkage::from(d.x, d.gamma);
    const double mse = compute_alpha(problem, shrink) + B * B * compute_beta(problem, shrink);
    rows.push_back({d.label, mse, oracle, oracle_ratio(mse, oracle)});
  }
  return rows;
}

}  // namespace regdesign
