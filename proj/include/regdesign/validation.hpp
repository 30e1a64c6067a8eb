#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "parallel.hpp"
#include "rng.hpp"
#include "solver.hpp"

namespace regdesign {

struct GridResult {
  double t = kInfinity;
  Selection x;
  Vector gamma;
};

/**
 * Brute force over feasible designs and a uniform gamma grid with `resolution`
 * points per selected arm. Independent of the QP machinery except for the oracles.
 */
inline GridResult grid_oracle(const DesignProblem& problem, const Oracles& oracles, int resolution,
                              double max_points = 5e7) {
  const std::size_t p = problem.dim();
  if (p > 4) fail(ErrorCode::GridTooLarge, "grid oracle supports at most 4 coordinates");
  if (resolution < 50) fail(ErrorCode::InvalidArgument, "grid resolution must be at least 50");
  const auto masks = feasible_masks(problem);
  const bool pinned = problem.gamma_policy == GammaPolicy::ExperimentOnly;
  double total = 0.0;
  for (auto m : masks) total += pinned ? 1.0 : std::pow(static_cast<double>(resolution), std::popcount(m));
  if (total > max_points) fail(ErrorCode::GridTooLarge, "grid exceeds the point budget");

  // Plain arrays keep the inner loop allocation free.
  std::array<double, 4> a{}, w{};
  std::array<std::array<double, 4>, 4> M{};
  const Vector nw = [&] {
    Vector v(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j)
      v[static_cast<Eigen::Index>(j)] = std::abs(problem.omega[static_cast<Eigen::Index>(j)]) *
                                        std::sqrt(problem.arms[j].v2 * problem.arms[j].cost);
    return v;
  }();
  const Vector bw = bias_weights(problem);
  for (std::size_t i = 0; i < p; ++i) {
    a[i] = nw[static_cast<Eigen::Index>(i)];
    w[i] = bw[static_cast<Eigen::Index>(i)];
    for (std::size_t j = 0; j < p; ++j)
      M[i][j] = problem.omega[static_cast<Eigen::Index>(i)] * problem.sigma_obs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                problem.omega[static_cast<Eigen::Index>(j)];
  }
  auto evaluate = [&](const std::array<double, 4>& s) {
    double lin = 0.0, quad = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      lin += a[i] * s[i];
      for (std::size_t j = 0; j < p; ++j) quad += (1.0 - s[i]) * M[i][j] * (1.0 - s[j]);
    }
    const double alpha = lin * lin / problem.budget + quad;
    double beta = 0.0;
    switch (problem.norm.kind) {
      case NormSpec::Kind::Linf:
      case NormSpec::Kind::Weighted: {
        double sum = 0.0;
        for (std::size_t i = 0; i < p; ++i) sum += w[i] * (1.0 - s[i]);
        beta = sum * sum;
        break;
      }
      case NormSpec::Kind::L1: {
        double mx = 0.0;
        for (std::size_t i = 0; i < p; ++i) mx = std::max(mx, w[i] * (1.0 - s[i]));
        beta = mx * mx;
        break;
      }
      case NormSpec::Kind::L2:
        for (std::size_t i = 0; i < p; ++i) beta += w[i] * w[i] * (1.0 - s[i]) * (1.0 - s[i]);
        break;
    }
    return std::max(oracle_ratio(alpha, oracles.alpha.value), oracle_ratio(beta, oracles.beta.value));
  };

  GridResult best;
  for (auto mask : masks) {
    std::vector<std::size_t> sel;
    for (std::size_t j = 0; j < p; ++j)
      if ((mask >> j) & 1U) sel.push_back(j);
    const int levels = pinned ? 1 : resolution;
    std::vector<int> counter(sel.size(), 0);
    while (true) {
      std::array<double, 4> s{};
      for (std::size_t r = 0; r < sel.size(); ++r)
        s[sel[r]] = pinned ? 1.0 : static_cast<double>(counter[r]) / static_cast<double>(resolution - 1);
      const double t = evaluate(s);
      const auto pc = static_cast<std::size_t>(std::popcount(mask));
      const bool better = t < best.t - 1e-12 ||
                          (std::abs(t - best.t) <= 1e-12 && !best.x.empty() && pc < arm_count(best.x));
      if (better || best.x.empty()) {
        best.t = t;
        best.x = selection_of(mask, p);
        Vector sv = Vector::Zero(static_cast<Eigen::Index>(p));
        for (std::size_t j = 0; j < p; ++j) sv[static_cast<Eigen::Index>(j)] = s[j];
        best.gamma = gamma_from_shrinkage(best.x, sv);
      }
      std::size_t r = 0;
      while (r < sel.size() && ++counter[r] == levels) counter[r++] = 0;
      if (r == sel.size()) break;
    }
  }
  return best;
}

inline GridResult grid_oracle(const DesignProblem& problem, int resolution) {
  return grid_oracle(problem, compute_oracles(problem), resolution);
}

/// {0} followed by `points` log-spaced values over [1e-3, 1e3] * sqrt(alpha(0) / beta(0)).
inline std::vector<double> default_B_grid(const DesignProblem& problem, int points = 200) {
  const Vector zero = Vector::Zero(problem.omega.size());
  const double scale = std::sqrt(compute_alpha(problem, {zero}) / compute_beta(problem, {zero}));
  std::vector<double> grid{0.0};
  for (int i = 0; i < points; ++i) {
    const double e = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(points - 1);
    grid.push_back(scale * std::pow(10.0, e));
  }
  return grid;
}

struct BScan {
  std::vector<double> curve;
  double sup = 0.0;
  double argmax_B = 0.0;
};

/// Worst-case MSE of (x, gamma) relative to the best design at each bias radius.
inline BScan sup_B_scan(const DesignProblem& problem, const Selection& x, const Vector& gamma,
                        const std::vector<double>& B_grid, const SolverOptions& opt = {}) {
  if (B_grid.empty() || B_grid.front() != 0.0 || !std::is_sorted(B_grid.begin(), B_grid.end()))
    fail(ErrorCode::InvalidArgument, "B grid must be ascending and start at 0");
  const auto shrink = EffectiveShrinkage::from(x, gamma);
  const double alpha = compute_alpha(problem, shrink), beta = compute_beta(problem, shrink);
  BScan out;
  out.curve = parallel_map(B_grid.size(), opt.threads, [&](std::size_t i) {
    const double B = B_grid[i];
    SolverOptions serial = opt;
    serial.threads = 1;
    return oracle_ratio(alpha + B * B * beta, penalized_oracle(problem, B, serial));
  });
  for (std::size_t i = 0; i < out.curve.size(); ++i) {
    if (i == 0 || out.curve[i] > out.sup) {
      out.sup = out.curve[i];
      out.argmax_B = B_grid[i];
    }
  }
  return out;
}

/// Two coordinates, one of which is run experimentally (zero-based `arm`).
struct TwoParamInstance {
  std::array<double, 2> omega{1.0, 1.0};
  std::array<double, 2> sigma2{1.0, 1.0};
  std::array<double, 2> v2{1.0, 1.0};
  int arm = 0;
};

enum class Regime { Interior, VarianceBoundary, BiasBoundary };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::Interior: return "interior";
    case Regime::VarianceBoundary: return "variance-boundary";
    case Regime::BiasBoundary: return "bias-boundary";
  }
  return "unknown";
}

namespace detail {

inline void check_two_param(const TwoParamInstance& inst) {
  for (int j = 0; j < 2; ++j) {
    if (!(inst.sigma2[j] > 0.0) || !(inst.v2[j] > 0.0)) fail(ErrorCode::InvalidArgument, "variances must be positive");
    if (inst.omega[j] == 0.0) fail(ErrorCode::ZeroSensitivity, "omega entries must be nonzero");
  }
  if (inst.arm != 0 && inst.arm != 1) fail(ErrorCode::InvalidArgument, "arm must be 0 or 1");
}

inline double two_param_alpha(const TwoParamInstance& inst, double g) {
  const int j = inst.arm, o = 1 - inst.arm;
  const double wj = inst.omega[j] * inst.omega[j];
  return inst.omega[o] * inst.omega[o] * inst.sigma2[o] + wj * (g * g * inst.v2[j] + (1 - g) * (1 - g) * inst.sigma2[j]);
}

inline double two_param_beta(const TwoParamInstance& inst, double g) {
  const int j = inst.arm, o = 1 - inst.arm;
  const double open = std::abs(inst.omega[o]) + (1.0 - g) * std::abs(inst.omega[j]);
  return open * open;
}

}  // namespace detail

inline double gamma_var(const TwoParamInstance& inst) {
  const int j = inst.arm;
  return inst.sigma2[j] / (inst.sigma2[j] + inst.v2[j]);
}

/// Closed-form oracles when the feasible designs are the two single-arm experiments.
inline std::pair<double, double> two_param_oracles(const TwoParamInstance& inst) {
  detail::check_two_param(inst);
  double a = kInfinity, b = kInfinity;
  for (int k = 0; k < 2; ++k) {
    const int o = 1 - k;
    const double shrunk = inst.sigma2[k] * inst.v2[k] / (inst.sigma2[k] + inst.v2[k]);
    a = std::min(a, inst.omega[o] * inst.omega[o] * inst.sigma2[o] + inst.omega[k] * inst.omega[k] * shrunk);
    b = std::min(b, inst.omega[o] * inst.omega[o]);
  }
  return {a, b};
}

inline Regime classify_regime(const TwoParamInstance& inst, double alpha_star, double beta_star) {
  detail::check_two_param(inst);
  auto gap = [&](double g) {
    return detail::two_param_alpha(inst, g) / alpha_star - detail::two_param_beta(inst, g) / beta_star;
  };
  if (gap(gamma_var(inst)) >= 0.0) return Regime::VarianceBoundary;
  if (gap(1.0) <= 0.0) return Regime::BiasBoundary;
  return Regime::Interior;
}

/// Regret-optimal shrinkage of the experimental arm; the two ratios cross at most once on [gamma_var, 1].
inline double gamma_star_2param(const TwoParamInstance& inst, double alpha_star, double beta_star) {
  const Regime r = classify_regime(inst, alpha_star, beta_star);
  if (r == Regime::VarianceBoundary) return gamma_var(inst);
  if (r == Regime::BiasBoundary) return 1.0;
  auto gap = [&](double g) {
    return detail::two_param_alpha(inst, g) / alpha_star - detail::two_param_beta(inst, g) / beta_star;
  };
  double lo = gamma_var(inst), hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Two-parameter instance as a full design problem: unit budget and costs, designs {(1,0), (0,1)}.
inline DesignProblem two_param_problem(const TwoParamInstance& inst) {
  detail::check_two_param(inst);
  DesignProblem p;
  p.omega = Vector(2);
  p.omega << inst.omega[0], inst.omega[1];
  p.theta_obs = Vector::Zero(2);
  p.sigma_obs = Matrix::Zero(2, 2);
  p.sigma_obs(0, 0) = inst.sigma2[0];
  p.sigma_obs(1, 1) = inst.sigma2[1];
  p.arms = {{"arm1", inst.v2[0], 1.0}, {"arm2", inst.v2[1], 1.0}};
  p.budget = 1.0;
  p.feasibility = FeasibilitySet::explicit_list({{1, 0}, {0, 1}});
  return validate_problem(p);
}

struct McReport {
  double empirical_mse = 0.0;
  double std_error = 0.0;
  double theoretical_mse = 0.0;
  double mean_error = 0.0;          ///< empirical bias of the target estimate
  double mean_error_se = 0.0;
  double theoretical_bias = 0.0;
  std::uint64_t reps = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Square-root factor of a PSD covariance: Cholesky, or a clipped eigen factor when it fails.
inline Matrix covariance_factor(const Matrix& sigma) {
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

inline constexpr std::uint64_t kMonteCarloChunks = 64;

/**
 * Simulates the shrinkage estimator with observational bias b at the Neyman
 * allocation. Reps are split into fixed chunks, each with its own derived seed,
 * and chunk sums are combined in chunk order, so results do not depend on the
 * thread count.
 */
inline McReport monte_carlo_mse(const DesignProblem& problem, const Selection& x, const Vector& gamma, const Vector& b,
                                std::uint64_t reps, std::uint64_t seed, unsigned threads = 1) {
  if (reps < 1000) fail(ErrorCode::InvalidArgument, "at least 1000 replications are required");
  if (b.size() != problem.omega.size() || !b.allFinite()) fail(ErrorCode::InvalidArgument, "bias vector is invalid");
  const Eigen::Index p = problem.omega.size();
  const auto shrink = EffectiveShrinkage::from(x, gamma);
  const Vector& s = shrink.s;
  const Vector n = s.maxCoeff() > 0.0 ? neyman_allocation(problem, shrink) : Vector::Zero(p);
  Vector exp_sd = Vector::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j)
    if (s[j] > 0.0) exp_sd[j] = std::sqrt(problem.arms[static_cast<std::size_t>(j)].v2 / n[j]);
  const Matrix L = detail::covariance_factor(problem.sigma_obs);
  const Vector& theta = problem.theta_obs;
  const double target = problem.omega.dot(theta);

  struct Sums {
    double e = 0.0, e2 = 0.0, e4 = 0.0;
  };
  const auto sums = parallel_map(kMonteCarloChunks, threads, [&](std::size_t chunk) {
    const std::uint64_t begin = reps * chunk / kMonteCarloChunks, end = reps * (chunk + 1) / kMonteCarloChunks;
    SplitMix64 rng(derive_seed(seed, chunk));
    Vector z_obs(p), z_exp(p);
    Sums acc;
    for (std::uint64_t r = begin; r < end; ++r) {
      for (Eigen::Index j = 0; j < p; ++j) z_obs[j] = rng.normal();
      for (Eigen::Index j = 0; j < p; ++j) z_exp[j] = rng.normal();
      const Vector obs = theta + b + L * z_obs;
      double estimate = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        const double experimental = theta[j] + exp_sd[j] * z_exp[j];
        estimate += problem.omega[j] * ((1.0 - s[j]) * obs[j] + (s[j] > 0.0 ? s[j] * experimental : 0.0));
      }
      const double e = estimate - target;
      acc.e += e;
      acc.e2 += e * e;
      acc.e4 += e * e * e * e;
    }
    return acc;
  });
  Sums total;
  for (const auto& c : sums) {
    total.e += c.e;
    total.e2 += c.e2;
    total.e4 += c.e4;
  }
  const double R = static_cast<double>(reps);
  McReport rep;
  rep.reps = reps;
  rep.seed = seed;
  rep.empirical_mse = total.e2 / R;
  rep.std_error = std::sqrt(std::max(total.e4 / R - rep.empirical_mse * rep.empirical_mse, 0.0) / (R - 1.0));
  rep.mean_error = total.e / R;
  rep.mean_error_se = std::sqrt(std::max(total.e2 / R - rep.mean_error * rep.mean_error, 0.0) / (R - 1.0));
  rep.theoretical_bias = problem.omega.cwiseProduct(Vector::Ones(p) - s).dot(b);
  rep.theoretical_mse = compute_alpha(problem, shrink) + rep.theoretical_bias * rep.theoretical_bias;
  return rep;
}

/// Sign pattern of radius B maximizing the bias of the target estimate under the sup norm.
inline Vector worst_case_bias(const DesignProblem& problem, const Selection& x, const Vector& gamma, double B) {
  const auto shrink = EffectiveShrinkage::from(x, gamma);
  Vector b(problem.omega.size());
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const double load = problem.omega[j] * (1.0 - shrink.s[j]);
    double scale = B;
    if (problem.norm.kind == NormSpec::Kind::Weighted) scale *= problem.norm.weights[j];
    b[j] = load >= 0.0 ? scale : -scale;
  }
  return b;
}

}  // namespace regdesign
