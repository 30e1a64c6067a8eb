#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "parallel.hpp"
#include "regret_core.hpp"

namespace regdesign {

struct DesignSolution {
  Selection x_star;
  Vector gamma_star;  ///< 1 on unselected arms by convention
  Vector n_star;
  double t_star = 1.0;
  RegretBreakdown breakdown;
};

struct InnerSolution {
  Vector gamma;
  Vector s;
  double t = 1.0;
};

struct SolverOptions {
  OracleOptions oracle;
  unsigned threads = 1;
  double tie_tolerance = 1e-9;
  int max_bisection_steps = 200;
};

struct Oracles {
  AlphaOracle alpha;
  BetaOracle beta;
};

inline Oracles compute_oracles(const DesignProblem& problem, const OracleOptions& opt = {}) {
  return {oracle_alpha_star(problem, opt), oracle_beta_star(problem, opt)};
}

namespace detail {

inline Vector ones_on(const std::vector<Eigen::Index>& idx, Eigen::Index p) {
  Vector s = Vector::Zero(p);
  for (auto j : idx) s[j] = 1.0;
  return s;
}

/**
 * Smallest-alpha point subject to constraint(s) <= cap, via bisection on the
 * Lagrange multiplier of the penalized problem argmin_s(mu). Assumes the
 * constraint is attainable: `fallback` satisfies it.
 */
inline Vector lagrangian_min(const std::function<Vector(double)>& argmin_s,
                             const std::function<double(const Vector&)>& constraint, double cap, double mu_scale,
                             const Vector& fallback) {
  Vector s = argmin_s(0.0);
  if (constraint(s) <= cap) return s;
  double lo = 0.0, hi = mu_scale;
  Vector s_hi;
  bool found = false;
  for (int i = 0; i < 200; ++i) {
    s_hi = argmin_s(hi);
    if (constraint(s_hi) <= cap) {
      found = true;
      break;
    }
    lo = hi;
    hi *= 2.0;
  }
  if (!found) return fallback;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    Vector s_mid = argmin_s(mid);
    if (constraint(s_mid) <= cap) {
      hi = mid;
      s_hi = std::move(s_mid);
    } else {
      lo = mid;
    }
  }
  return s_hi;
}

// argmin alpha(s) subject to beta(s) <= cap over the selected coordinates; nullopt if unattainable.
inline std::optional<Vector> min_alpha_under_bias(const DesignProblem& problem, const std::vector<Eigen::Index>& idx,
                                                  double cap) {
  const Eigen::Index p = problem.omega.size();
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Vector full = ones_on(idx, p);
  if (compute_beta(problem, {full}) > cap) return std::nullopt;
  if (m == 0) return full;
  const Vector w = bias_weights(problem);

  switch (problem.norm.kind) {
    case NormSpec::Kind::Linf:
    case NormSpec::Kind::Weighted: {
      // sum_j w_j (1 - s_j) <= sqrt(cap)  <=>  -w_E' z <= sqrt(cap) - sum_j w_j
      const ReducedQuadratic f = alpha_quadratic(problem, idx);
      QpProblem qp{f.Q, f.c, Vector::Zero(m), Vector::Ones(m), Matrix(1, m), Vector(1)};
      for (Eigen::Index r = 0; r < m; ++r) qp.G(0, r) = -w[idx[static_cast<std::size_t>(r)]];
      qp.h[0] = std::sqrt(cap) - w.sum();
      return expand(solve_qp(qp, Vector::Ones(m)).x, idx, p);
    }
    case NormSpec::Kind::L1: {
      Vector lower(m);
      for (Eigen::Index r = 0; r < m; ++r)
        lower[r] = std::clamp(1.0 - std::sqrt(cap) / w[idx[static_cast<std::size_t>(r)]], 0.0, 1.0);
      return minimize_weighted(problem, idx, 1.0, 0.0, &lower);
    }
    case NormSpec::Kind::L2: {
      const double scale = compute_alpha(problem, {Vector::Zero(p)}) / std::max(w.squaredNorm(), 1e-300);
      return lagrangian_min([&](double mu) { return minimize_weighted(problem, idx, 1.0, mu); },
                            [&](const Vector& s) { return compute_beta(problem, {s}); }, cap, scale, full);
    }
  }
  return std::nullopt;
}

/**
 * Bisection on the regret level t. `feasible(t)` returns a point whose ratios are
 * both at most t, or nullopt. Returns the point found at the smallest feasible t.
 */
inline Vector bisect_regret(const std::function<std::optional<Vector>(double)>& feasible, int max_steps) {
  if (auto s = feasible(1.0)) return *s;
  double lo = 1.0, hi = 2.0;
  int steps = 0;
  std::optional<Vector> best;
  while (!(best = feasible(hi))) {
    lo = hi;
    hi *= 2.0;
    if (++steps >= max_steps || !std::isfinite(hi)) fail(ErrorCode::NonConvergence, "regret bracket did not close");
  }
  while (hi - lo > std::min(1e-8, 1e-12 * hi)) {
    if (++steps >= max_steps) fail(ErrorCode::NonConvergence, "regret bisection step limit reached");
    const double mid = 0.5 * (lo + hi);
    if (auto s = feasible(mid)) {
      hi = mid;
      best = std::move(s);
    } else {
      lo = mid;
    }
  }
  return *best;
}

inline bool within_level(double value, double level) { return value <= level * (1.0 + 1e-13); }

}  // namespace detail

/**
 * Best shrinkage for a fixed design x: minimizes max(alpha/alpha*, beta/beta*)
 * over gamma in [0,1] on the selected arms.
 */
inline InnerSolution inner_solve(const DesignProblem& problem, const Selection& x, double alpha_star,
                                 double beta_star, const SolverOptions& opt = {}) {
  const Eigen::Index p = problem.omega.size();
  const auto idx = detail::active_indices(x);
  InnerSolution out;
  if (problem.gamma_policy == GammaPolicy::ExperimentOnly || idx.empty()) {
    out.s = detail::ones_on(idx, p);
  } else if (beta_star <= 0.0) {
    out.s = detail::ones_on(idx, p);
  } else {
    out.s = detail::bisect_regret(
        [&](double t) -> std::optional<Vector> {
          auto s = detail::min_alpha_under_bias(problem, idx, t * beta_star);
          if (!s || !detail::within_level(compute_alpha(problem, {*s}), t * alpha_star)) return std::nullopt;
          return s;
        },
        opt.max_bisection_steps);
  }
  out.gamma = gamma_from_shrinkage(x, out.s);
  const auto b = make_breakdown(compute_alpha(problem, {out.s}), alpha_star, compute_beta(problem, {out.s}), beta_star);
  if (!std::isfinite(b.regret)) fail(ErrorCode::Infeasible, "design cannot reach finite regret");
  out.t = b.regret;
  return out;
}

namespace detail {

// Best mask by value, then fewer arms, then smaller mask, among values within tol of the minimum.
inline std::optional<std::uint64_t> pick_design(const std::vector<ScoredDesign>& scored, double tol) {
  double best = kInfinity;
  for (const auto& d : scored) best = std::min(best, d.value);
  if (!std::isfinite(best)) return std::nullopt;
  std::optional<std::uint64_t> chosen;
  for (const auto& d : scored) {
    if (!(d.value <= best + tol)) continue;
    if (!chosen || std::popcount(d.mask) < std::popcount(*chosen) ||
        (std::popcount(d.mask) == std::popcount(*chosen) && d.mask < *chosen))
      chosen = d.mask;
  }
  return chosen;
}

// Evaluates the leaf score on every feasible design (or via branch-and-bound) and picks the winner.
template <class Leaf, class Bound>
std::optional<std::uint64_t> search_designs(const DesignProblem& problem, const SolverOptions& opt, Leaf&& leaf,
                                            Bound&& bound) {
  std::vector<ScoredDesign> scored;
  if (uses_branch_and_bound(problem, opt.oracle)) {
    scored = branch_and_bound(problem, bound, leaf, opt.tie_tolerance);
  } else {
    const auto masks = feasible_masks(problem, opt.oracle.enumeration_cap);
    const auto values = parallel_map(masks.size(), opt.threads, [&](std::size_t i) { return leaf(masks[i]); });
    for (std::size_t i = 0; i < masks.size(); ++i) scored.push_back({masks[i], values[i]});
  }
  return pick_design(scored, opt.tie_tolerance);
}

inline DesignSolution finish_solution(const DesignProblem& problem, const Selection& x, const Vector& s,
                                      double alpha_star, double beta_star) {
  DesignSolution sol;
  sol.x_star = x;
  sol.gamma_star = gamma_from_shrinkage(x, s);
  sol.n_star = s.maxCoeff() > 0.0 ? neyman_allocation(problem, {s}) : Vector::Zero(s.size());
  sol.breakdown = make_breakdown(compute_alpha(problem, {s}), alpha_star, compute_beta(problem, {s}), beta_star);
  sol.t_star = sol.breakdown.regret;
  return sol;
}

}  // namespace detail

inline DesignSolution solve(const DesignProblem& problem, const Oracles& oracles, const SolverOptions& opt = {}) {
  const double a_star = oracles.alpha.value, b_star = oracles.beta.value;
  const std::size_t p = problem.dim();
  auto leaf = [&](std::uint64_t mask) {
    try {
      return inner_solve(problem, selection_of(mask, p), a_star, b_star, opt).t;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Infeasible) return kInfinity;
      throw;
    }
  };
  auto bound = [&](const PartialDesign& node) {
    return std::max(oracle_ratio(detail::alpha_lower_bound(problem, node), a_star),
                    oracle_ratio(detail::beta_lower_bound(problem, node), b_star));
  };
  const auto mask = detail::search_designs(problem, opt, leaf, bound);
  if (!mask) fail(ErrorCode::AllInfeasible, "every feasible design has infinite regret");
  const Selection x = selection_of(*mask, p);
  const InnerSolution inner = inner_solve(problem, x, a_star, b_star, opt);
  return detail::finish_solution(problem, x, inner.s, a_star, b_star);
}

/// Regret-optimal design: enumerate feasible x, solve each inner problem, keep the best.
inline DesignSolution solve(const DesignProblem& problem, const SolverOptions& opt = {}) {
  return solve(problem, compute_oracles(problem, opt.oracle), opt);
}

/// Variance-optimal design with its regret breakdown.
inline DesignSolution neyman_design(const DesignProblem& problem, const Oracles& oracles) {
  const Vector s = EffectiveShrinkage::from(oracles.alpha.x, oracles.alpha.gamma).s;
  return detail::finish_solution(problem, oracles.alpha.x, s, oracles.alpha.value, oracles.beta.value);
}

inline DesignSolution neyman_design(const DesignProblem& problem, const OracleOptions& opt = {}) {
  return neyman_design(problem, compute_oracles(problem, opt));
}

/// min over feasible designs and gamma of alpha + B^2 beta.
inline double penalized_oracle(const DesignProblem& problem, double bias_bound, const SolverOptions& opt = {}) {
  const double b2 = bias_bound * bias_bound;
  const std::size_t p = problem.dim();
  auto leaf = [&](std::uint64_t mask) {
    const auto idx = detail::active_indices(selection_of(mask, p));
    const Vector s = minimize_weighted(problem, idx, 1.0, b2);
    return compute_alpha(problem, {s}) + b2 * compute_beta(problem, {s});
  };
  std::vector<ScoredDesign> scored;
  if (detail::uses_branch_and_bound(problem, opt.oracle)) {
    scored = branch_and_bound(
        problem,
        [&](const PartialDesign& n) {
          return detail::alpha_lower_bound(problem, n) + b2 * detail::beta_lower_bound(problem, n);
        },
        leaf, 0.0);
  } else {
    for (auto mask : feasible_masks(problem, opt.oracle.enumeration_cap)) scored.push_back({mask, leaf(mask)});
  }
  double best = kInfinity;
  for (const auto& d : scored) best = std::min(best, d.value);
  return best;
}

/**
 * Design minimizing max{alpha/alpha*, (alpha + B^2 beta)/min(alpha' + B^2 beta')}
 * when the bias is known to be at most `bias_bound`. The reported breakdown keeps
 * the unbounded oracles; t_star is the bounded-bias regret.
 */
inline DesignSolution solve_bounded(const DesignProblem& problem, double bias_bound, const SolverOptions& opt = {}) {
  if (!(bias_bound >= 0.0) || !std::isfinite(bias_bound))
    fail(ErrorCode::InvalidArgument, "bias bound must be finite and nonnegative");
  const Oracles oracles = compute_oracles(problem, opt.oracle);
  const double a_star = oracles.alpha.value;
  const double b2 = bias_bound * bias_bound;
  const double delta = penalized_oracle(problem, bias_bound, opt);
  const std::size_t p = problem.dim();
  const Eigen::Index pe = problem.omega.size();

  auto penalized = [&](const Vector& s) { return compute_alpha(problem, {s}) + b2 * compute_beta(problem, {s}); };
  auto level = [&](const Vector& s) {
    return std::max(oracle_ratio(compute_alpha(problem, {s}), a_star), oracle_ratio(penalized(s), delta));
  };
  auto inner = [&](const Selection& x) -> Vector {
    const auto idx = detail::active_indices(x);
    if (problem.gamma_policy == GammaPolicy::ExperimentOnly || idx.empty()) return detail::ones_on(idx, pe);
    const Vector pen_min = minimize_weighted(problem, idx, 1.0, b2);
    const double floor = penalized(pen_min);
    const double scale = 1.0;
    return detail::bisect_regret(
        [&](double t) -> std::optional<Vector> {
          const double cap = t * delta;
          if (floor > cap * (1.0 + 1e-13)) return std::nullopt;
          Vector s = detail::lagrangian_min(
              [&](double mu) { return minimize_weighted(problem, idx, 1.0 + mu, mu * b2); }, penalized, cap, scale,
              pen_min);
          if (!detail::within_level(compute_alpha(problem, {s}), t * a_star)) return std::nullopt;
          return s;
        },
        opt.max_bisection_steps);
  };
  auto leaf = [&](std::uint64_t mask) {
    try {
      return level(inner(selection_of(mask, p)));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonConvergence) return kInfinity;
      throw;
    }
  };
  auto bound = [&](const PartialDesign& node) {
    const double a_lb = detail::alpha_lower_bound(problem, node);
    return std::max(oracle_ratio(a_lb, a_star), oracle_ratio(a_lb + b2 * detail::beta_lower_bound(problem, node), delta));
  };
  const auto mask = detail::search_designs(problem, opt, leaf, bound);
  if (!mask) fail(ErrorCode::AllInfeasible, "every feasible design has infinite bounded-bias regret");
  const Selection x = selection_of(*mask, p);
  const Vector s = inner(x);
  DesignSolution sol = detail::finish_solution(problem, x, s, a_star, oracles.beta.value);
  sol.t_star = level(s);
  return sol;
}

}  // namespace regdesign
