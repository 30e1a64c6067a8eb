#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "bnb.hpp"
#include "model.hpp"
#include "qp.hpp"

namespace regdesign {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// s = x * gamma, the shrinkage weight actually placed on each experimental estimate.
struct EffectiveShrinkage {
  Vector s;

  static EffectiveShrinkage from(const Selection& x, const Vector& gamma) {
    if (static_cast<Eigen::Index>(x.size()) != gamma.size())
      fail(ErrorCode::DimensionMismatch, "x and gamma lengths differ");
    EffectiveShrinkage out{Vector::Zero(gamma.size())};
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double g = gamma[static_cast<Eigen::Index>(j)];
      if (!(g >= 0.0 && g <= 1.0)) fail(ErrorCode::InvalidArgument, "gamma entries must lie in [0,1]");
      if (x[j]) out.s[static_cast<Eigen::Index>(j)] = g;
    }
    return out;
  }
};

enum class Binding { Variance, Bias, Both };

inline const char* to_string(Binding b) {
  switch (b) {
    case Binding::Variance: return "variance";
    case Binding::Bias: return "bias";
    case Binding::Both: return "both";
  }
  return "unknown";
}

struct RegretBreakdown {
  double alpha = 0.0;
  double alpha_star = 0.0;
  double beta = 0.0;
  double beta_star = 0.0;
  double regret = 1.0;
  Binding binding = Binding::Both;

  double variance_ratio() const;
  double bias_ratio() const;
};

/// q / q_star with 0/0 = 1 and q/0 = +inf.
inline double oracle_ratio(double value, double oracle) {
  if (oracle > 0.0) return value / oracle;
  return value > 0.0 ? kInfinity : 1.0;
}

inline double RegretBreakdown::variance_ratio() const { return oracle_ratio(alpha, alpha_star); }
inline double RegretBreakdown::bias_ratio() const { return oracle_ratio(beta, beta_star); }

inline Binding binding_side(double variance_ratio, double bias_ratio) {
  if (variance_ratio == bias_ratio) return Binding::Both;
  if (std::isfinite(variance_ratio) && std::isfinite(bias_ratio) &&
      std::abs(variance_ratio - bias_ratio) <= 1e-9 * std::max(std::abs(variance_ratio), std::abs(bias_ratio)))
    return Binding::Both;
  return variance_ratio > bias_ratio ? Binding::Variance : Binding::Bias;
}

inline RegretBreakdown make_breakdown(double alpha, double alpha_star, double beta, double beta_star) {
  RegretBreakdown b{alpha, alpha_star, beta, beta_star, 1.0, Binding::Both};
  const double rv = b.variance_ratio();
  const double rb = b.bias_ratio();
  b.regret = std::max(rv, rb);
  b.binding = binding_side(rv, rb);
  return b;
}

namespace detail {

inline std::vector<Eigen::Index> active_indices(const Selection& x) {
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) idx.push_back(static_cast<Eigen::Index>(j));
  return idx;
}

// |omega_j| v_j sqrt(c_j): the per-arm contribution to the profiled experimental variance.
inline Vector neyman_weights(const DesignProblem& problem) {
  Vector a(problem.omega.size());
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const auto& arm = problem.arms[static_cast<std::size_t>(j)];
    a[j] = std::abs(problem.omega[j]) * std::sqrt(arm.v2) * std::sqrt(arm.cost);
  }
  return a;
}

}  // namespace detail

/// Per-coordinate bias weights: |omega_j|, scaled by k_j under a weighted norm.
inline Vector bias_weights(const DesignProblem& problem) {
  Vector a = problem.omega.cwiseAbs();
  if (problem.norm.kind == NormSpec::Kind::Weighted) a = a.cwiseProduct(problem.norm.weights);
  return a;
}

inline double compute_alpha(const DesignProblem& problem, const EffectiveShrinkage& shrink) {
  const Vector& s = shrink.s;
  const double exp_sum = detail::neyman_weights(problem).dot(s);
  const Vector residual = problem.omega.cwiseProduct(Vector::Ones(s.size()) - s);
  return exp_sum * exp_sum / problem.budget + residual.dot(problem.sigma_obs * residual);
}

inline double compute_beta(const DesignProblem& problem, const EffectiveShrinkage& shrink) {
  const Vector open = bias_weights(problem).cwiseProduct(Vector::Ones(shrink.s.size()) - shrink.s);
  switch (problem.norm.kind) {
    case NormSpec::Kind::Linf:
    case NormSpec::Kind::Weighted: {
      const double total = open.sum();
      return total * total;
    }
    case NormSpec::Kind::L1: {
      const double largest = open.size() ? open.maxCoeff() : 0.0;
      return largest * largest;
    }
    case NormSpec::Kind::L2: return open.squaredNorm();
  }
  return 0.0;
}

/// Cost-aware Neyman allocation of the budget across arms with s_j > 0.
inline Vector neyman_allocation(const DesignProblem& problem, const EffectiveShrinkage& shrink) {
  const Vector& s = shrink.s;
  Vector n = Vector::Zero(s.size());
  double denom = 0.0;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    const auto& arm = problem.arms[static_cast<std::size_t>(j)];
    denom += std::abs(problem.omega[j]) * std::sqrt(arm.v2) * s[j] * std::sqrt(arm.cost);
  }
  if (!(denom > 0.0)) fail(ErrorCode::NoActiveArm, "no arm has positive effective shrinkage");
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    if (s[j] <= 0.0) continue;
    const auto& arm = problem.arms[static_cast<std::size_t>(j)];
    n[j] = problem.budget * (std::abs(problem.omega[j]) * std::sqrt(arm.v2) * s[j] / std::sqrt(arm.cost)) / denom;
  }
  return n;
}

/// Raw variance of the shrinkage estimator for an arbitrary allocation (arms with s_j = 0 contribute nothing).
inline double variance_at_allocation(const DesignProblem& problem, const EffectiveShrinkage& shrink,
                                     const Vector& allocation) {
  const Vector& s = shrink.s;
  double exp_part = 0.0;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    if (s[j] <= 0.0) continue;
    const double w = problem.omega[j] * s[j];
    exp_part += w * w * problem.arms[static_cast<std::size_t>(j)].v2 / allocation[j];
  }
  const Vector residual = problem.omega.cwiseProduct(Vector::Ones(s.size()) - s);
  return exp_part + residual.dot(problem.sigma_obs * residual);
}

/// f(z) = 0.5 z'Qz + c'z + constant over the selected coordinates z = s_E.
struct ReducedQuadratic {
  Matrix Q;
  Vector c;
  double constant = 0.0;

  double operator()(const Vector& z) const { return 0.5 * z.dot(Q * z) + c.dot(z) + constant; }

  ReducedQuadratic& operator+=(const ReducedQuadratic& o) {
    Q += o.Q;
    c += o.c;
    constant += o.constant;
    return *this;
  }
  ReducedQuadratic scaled(double w) const { return {w * Q, w * c, w * constant}; }
};

/// alpha restricted to s_E, with s fixed at zero off E.
inline ReducedQuadratic alpha_quadratic(const DesignProblem& problem, const std::vector<Eigen::Index>& idx) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Vector a = detail::neyman_weights(problem);
  const Matrix M = problem.omega.asDiagonal() * problem.sigma_obs * problem.omega.asDiagonal();
  const Vector row_sums = M * Vector::Ones(M.cols());
  ReducedQuadratic f{Matrix(m, m), Vector(m), row_sums.sum()};
  for (Eigen::Index r = 0; r < m; ++r) {
    f.c[r] = -2.0 * row_sums[idx[static_cast<std::size_t>(r)]];
    for (Eigen::Index q = 0; q < m; ++q) {
      const auto i = idx[static_cast<std::size_t>(r)], j = idx[static_cast<std::size_t>(q)];
      f.Q(r, q) = 2.0 * (a[i] * a[j] / problem.budget + M(i, j));
    }
  }
  return f;
}

/// beta restricted to s_E for the quadratic norms (Linf, Weighted, L2).
inline ReducedQuadratic beta_quadratic(const DesignProblem& problem, const std::vector<Eigen::Index>& idx) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Vector w = bias_weights(problem);
  ReducedQuadratic f{Matrix::Zero(m, m), Vector::Zero(m), 0.0};
  if (problem.norm.kind == NormSpec::Kind::L2) {
    f.constant = w.squaredNorm();
    for (Eigen::Index r = 0; r < m; ++r) {
      const double wr = w[idx[static_cast<std::size_t>(r)]];
      f.Q(r, r) = 2.0 * wr * wr;
      f.c[r] = -2.0 * wr * wr;
    }
    return f;
  }
  if (problem.norm.kind == NormSpec::Kind::L1) fail(ErrorCode::InvalidArgument, "L1 bias index is not quadratic");
  const double total = w.sum();
  f.constant = total * total;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double wr = w[idx[static_cast<std::size_t>(r)]];
    f.c[r] = -2.0 * total * wr;
    for (Eigen::Index q = 0; q < m; ++q) f.Q(r, q) = 2.0 * wr * w[idx[static_cast<std::size_t>(q)]];
  }
  return f;
}

inline Vector expand(const Vector& z, const std::vector<Eigen::Index>& idx, Eigen::Index p) {
  Vector s = Vector::Zero(p);
  for (std::size_t r = 0; r < idx.size(); ++r) s[idx[r]] = z[static_cast<Eigen::Index>(r)];
  return s;
}

/**
 * Minimizes w_alpha * alpha(s) + w_beta * beta(s) over s in [lower, 1] on the
 * selected coordinates `idx` (zero elsewhere). `lower` defaults to 0. Under the
 * experiment-only policy s is pinned to 1 on the selection.
 */
inline Vector minimize_weighted(const DesignProblem& problem, const std::vector<Eigen::Index>& idx, double w_alpha,
                                double w_beta, const Vector* lower = nullptr) {
  const Eigen::Index p = problem.omega.size();
  const auto m = static_cast<Eigen::Index>(idx.size());
  if (m == 0) return Vector::Zero(p);
  if (problem.gamma_policy == GammaPolicy::ExperimentOnly) return expand(Vector::Ones(m), idx, p);

  Vector lo = lower ? *lower : Vector::Zero(m);
  const Vector hi = Vector::Ones(m);
  const ReducedQuadratic alpha_f = alpha_quadratic(problem, idx);

  if (w_beta == 0.0) return expand(solve_box_qp(w_alpha * alpha_f.Q, w_alpha * alpha_f.c, lo, hi).x, idx, p);

  if (problem.norm.kind != NormSpec::Kind::L1) {
    ReducedQuadratic f = alpha_f.scaled(w_alpha);
    f += beta_quadratic(problem, idx).scaled(w_beta);
    return expand(solve_box_qp(f.Q, f.c, lo, hi).x, idx, p);
  }

  // L1: beta = u^2 with u the largest open bias weight. For fixed u the
  // coverage constraints are box bounds; the profile in u is convex.
  const Vector w = bias_weights(problem);
  double floor_u = 0.0;
  std::vector<bool> selected(static_cast<std::size_t>(p), false);
  for (auto j : idx) selected[static_cast<std::size_t>(j)] = true;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!selected[static_cast<std::size_t>(j)]) floor_u = std::max(floor_u, w[j]);
  double top_u = floor_u;
  for (Eigen::Index r = 0; r < m; ++r) top_u = std::max(top_u, w[idx[static_cast<std::size_t>(r)]] * (1.0 - lo[r]));

  auto bounds_at = [&](double u) {
    Vector b = lo;
    for (Eigen::Index r = 0; r < m; ++r) b[r] = std::max(b[r], 1.0 - u / w[idx[static_cast<std::size_t>(r)]]);
    return b.cwiseMin(1.0);
  };
  auto profile = [&](double u) {
    const Vector b = bounds_at(u);
    const auto sol = solve_box_qp(alpha_f.Q, alpha_f.c, b, hi);
    return w_alpha * alpha_f(sol.x) + w_beta * u * u;
  };
  const double u = top_u > floor_u ? golden_section_min(profile, floor_u, top_u) : floor_u;
  return expand(solve_box_qp(alpha_f.Q, alpha_f.c, bounds_at(u), hi).x, idx, p);
}

/// Bias index of the design with gamma = 1 on every selected arm.
inline double full_coverage_beta(const DesignProblem& problem, const Selection& x) {
  Vector s = Vector::Zero(problem.omega.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) s[static_cast<Eigen::Index>(j)] = 1.0;
  return compute_beta(problem, {s});
}

struct AlphaOracle {
  double value = 0.0;
  Selection x;
  Vector gamma;  ///< 1 on unselected arms by convention
};

struct BetaOracle {
  double value = 0.0;
  Selection x;
};

struct OracleOptions {
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;
  double branch_and_bound_threshold = 16384.0;  ///< feasible designs above which branch-and-bound is used
};

/// Gamma reported for a design: s on selected arms, 1 elsewhere.
inline Vector gamma_from_shrinkage(const Selection& x, const Vector& s) {
  Vector gamma = Vector::Ones(s.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) gamma[static_cast<Eigen::Index>(j)] = s[static_cast<Eigen::Index>(j)];
  return gamma;
}

namespace detail {

inline bool uses_branch_and_bound(const DesignProblem& problem, const OracleOptions& opt) {
  return problem.feasibility.mode != FeasibilitySet::Mode::ExplicitList &&
         feasible_count(problem) > opt.branch_and_bound_threshold;
}

// Smallest bias index reachable from a partial assignment: the undecided arms with the
// largest bias weights are covered up to the remaining cardinality.
inline double beta_lower_bound(const DesignProblem& problem, const PartialDesign& node) {
  const std::size_t p = problem.dim();
  const Vector w = bias_weights(problem);
  std::vector<Eigen::Index> open;
  for (std::size_t j = node.depth; j < p; ++j) open.push_back(static_cast<Eigen::Index>(j));
  std::stable_sort(open.begin(), open.end(), [&](auto a, auto b) { return w[a] > w[b]; });
  std::size_t room = open.size();
  if (problem.feasibility.mode == FeasibilitySet::Mode::AtMostK) {
    const auto used = static_cast<std::size_t>(std::popcount(node.selected));
    room = problem.feasibility.k > used ? problem.feasibility.k - used : 0;
  }
  std::uint64_t mask = node.selected;
  for (std::size_t r = 0; r < std::min(room, open.size()); ++r) mask |= std::uint64_t{1} << open[r];
  return full_coverage_beta(problem, selection_of(mask, p));
}

// Smallest alpha reachable from a partial assignment, relaxing cardinality and gamma.
inline double alpha_lower_bound(const DesignProblem& problem, const PartialDesign& node) {
  const std::size_t p = problem.dim();
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < p; ++j)
    if (j >= node.depth || ((node.selected >> j) & 1U)) idx.push_back(static_cast<Eigen::Index>(j));
  DesignProblem relaxed = problem;
  relaxed.gamma_policy = GammaPolicy::Free;
  return compute_alpha(problem, {minimize_weighted(relaxed, idx, 1.0, 0.0)});
}

}  // namespace detail

/// Smallest alpha over feasible designs (gamma optimized per design unless the policy pins it).
inline AlphaOracle oracle_alpha_star(const DesignProblem& problem, const OracleOptions& opt = {}) {
  const std::size_t p = problem.dim();
  auto leaf = [&](std::uint64_t mask) {
    const Selection x = selection_of(mask, p);
    return compute_alpha(problem, {minimize_weighted(problem, detail::active_indices(x), 1.0, 0.0)});
  };
  std::vector<ScoredDesign> scored;
  if (detail::uses_branch_and_bound(problem, opt)) {
    scored = branch_and_bound(problem, [&](const PartialDesign& n) { return detail::alpha_lower_bound(problem, n); },
                              leaf, 0.0);
  } else {
    for (auto mask : feasible_masks(problem, opt.enumeration_cap)) scored.push_back({mask, leaf(mask)});
  }
  // Ties within relative 1e-12 go to the smallest mask.
  double best = kInfinity;
  for (const auto& d : scored) best = std::min(best, d.value);
  const double tol = 1e-12 * std::abs(best);
  std::uint64_t chosen = 0;
  bool found = false;
  for (const auto& d : scored) {
    if (d.value <= best + tol && (!found || d.mask < chosen)) {
      chosen = d.mask;
      found = true;
    }
  }
  AlphaOracle out;
  out.x = selection_of(chosen, p);
  const Vector s = minimize_weighted(problem, detail::active_indices(out.x), 1.0, 0.0);
  out.value = compute_alpha(problem, {s});
  out.gamma = gamma_from_shrinkage(out.x, s);
  return out;
}

/// Smallest bias index over feasible designs with gamma = 1; ties go to the smallest mask.
inline BetaOracle oracle_beta_star(const DesignProblem& problem, const OracleOptions& opt = {}) {
  const std::size_t p = problem.dim();
  if (detail::uses_branch_and_bound(problem, opt)) {
    // Covering the largest bias weights is optimal for every supported norm.
    const double value = detail::beta_lower_bound(problem, PartialDesign{0, 0});
    const Vector w = bias_weights(problem);
    std::vector<Eigen::Index> order(p);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return w[a] > w[b]; });
    std::uint64_t mask = 0;
    // Grow the cover greedily and stop at the first (smallest) cover reaching the optimum.
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (full_coverage_beta(problem, selection_of(mask, p)) <= value * (1.0 + 1e-12)) break;
      mask |= std::uint64_t{1} << order[r];
    }
    return {value, selection_of(mask, p)};
  }
  BetaOracle out{kInfinity, {}};
  for (auto mask : feasible_masks(problem, opt.enumeration_cap)) {
    const Selection x = selection_of(mask, p);
    const double b = full_coverage_beta(problem, x);
    if (out.x.empty() || b < out.value * (1.0 - 1e-12)) out = {b, x};
  }
  return out;
}

/// Regret of (x, gamma) against precomputed oracles.
inline RegretBreakdown regret(const DesignProblem& problem, const Selection& x, const Vector& gamma, double alpha_star,
                              double beta_star) {
  const auto shrink = EffectiveShrinkage::from(x, gamma);
  return make_breakdown(compute_alpha(problem, shrink), alpha_star, compute_beta(problem, shrink), beta_star);
}

}  // namespace regdesign
