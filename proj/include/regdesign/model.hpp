#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace regdesign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Binary design vector x: entry j is 1 when an experiment is run on coordinate j.
using Selection = std::vector<std::uint8_t>;

struct ExperimentArm {
  std::string name;
  double v2 = 1.0;    ///< per-unit experimental variance
  double cost = 1.0;  ///< per-unit cost
};

struct FeasibilitySet {
  enum class Mode { AtMostK, ExplicitList, All };

  Mode mode = Mode::All;
  std::size_t k = 0;
  std::vector<Selection> list;

  static FeasibilitySet at_most(std::size_t k) { return {Mode::AtMostK, k, {}}; }
  static FeasibilitySet explicit_list(std::vector<Selection> designs) {
    return {Mode::ExplicitList, 0, std::move(designs)};
  }
  static FeasibilitySet all() { return {Mode::All, 0, {}}; }
};

struct NormSpec {
  enum class Kind { Linf, L1, L2, Weighted };

  Kind kind = Kind::Linf;
  Vector weights;  ///< only used by Weighted

  static NormSpec linf() { return {Kind::Linf, {}}; }
  static NormSpec l1() { return {Kind::L1, {}}; }
  static NormSpec l2() { return {Kind::L2, {}}; }
  static NormSpec weighted(Vector k) { return {Kind::Weighted, std::move(k)}; }
};

enum class GammaPolicy { Free, ExperimentOnly };

struct DesignProblem {
  Vector omega;
  Vector theta_obs;
  Matrix sigma_obs;
  std::vector<ExperimentArm> arms;
  double budget = 1.0;
  FeasibilitySet feasibility;
  NormSpec norm;
  GammaPolicy gamma_policy = GammaPolicy::Free;

  std::size_t dim() const { return static_cast<std::size_t>(omega.size()); }
};

inline constexpr std::size_t kMaxArms = 62;
inline constexpr std::uint64_t kDefaultEnumerationCap = std::uint64_t{1} << 20;

// Designs are ordered by their bit mask with x_1 as the least significant bit.
inline std::uint64_t mask_of(const Selection& x) {
  std::uint64_t m = 0;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) m |= std::uint64_t{1} << j;
  return m;
}

inline Selection selection_of(std::uint64_t mask, std::size_t p) {
  Selection x(p, 0);
  for (std::size_t j = 0; j < p; ++j) x[j] = (mask >> j) & 1U;
  return x;
}

inline std::size_t arm_count(const Selection& x) {
  return static_cast<std::size_t>(std::count(x.begin(), x.end(), std::uint8_t{1}));
}

inline bool admits(const FeasibilitySet& f, std::uint64_t mask) {
  switch (f.mode) {
    case FeasibilitySet::Mode::All: return true;
    case FeasibilitySet::Mode::AtMostK: return static_cast<std::size_t>(std::popcount(mask)) <= f.k;
    case FeasibilitySet::Mode::ExplicitList:
      return std::any_of(f.list.begin(), f.list.end(), [&](const Selection& x) { return mask_of(x) == mask; });
  }
  return false;
}

namespace detail {

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace detail

/// Number of feasible designs, as a double so that huge counts do not overflow.
inline double feasible_count(const DesignProblem& problem) {
  const std::size_t p = problem.dim();
  switch (problem.feasibility.mode) {
    case FeasibilitySet::Mode::All: return std::ldexp(1.0, static_cast<int>(p));
    case FeasibilitySet::Mode::ExplicitList: return static_cast<double>(problem.feasibility.list.size());
    case FeasibilitySet::Mode::AtMostK: {
      double total = 0.0;
      for (std::size_t i = 0; i <= problem.feasibility.k; ++i) total += detail::binomial(p, i);
      return total;
    }
  }
  return 0.0;
}

/**
 * Checks every invariant of the problem and returns a normalized copy:
 * covariance symmetrized (tiny negative eigenvalues clipped) and explicit
 * feasibility lists deduplicated and sorted in mask order.
 */
inline DesignProblem validate_problem(DesignProblem raw) {
  const std::size_t p = raw.dim();
  if (p == 0) fail(ErrorCode::DimensionMismatch, "omega must have at least one entry");
  if (p > kMaxArms) fail(ErrorCode::DimensionMismatch, "at most 62 coordinates are supported");
  if (static_cast<std::size_t>(raw.theta_obs.size()) != p)
    fail(ErrorCode::DimensionMismatch, "theta_obs length differs from omega length");
  if (static_cast<std::size_t>(raw.sigma_obs.rows()) != p || static_cast<std::size_t>(raw.sigma_obs.cols()) != p)
    fail(ErrorCode::DimensionMismatch, "sigma_obs must be p x p");
  if (raw.arms.size() != p) fail(ErrorCode::DimensionMismatch, "arms length differs from omega length");

  if (!detail::all_finite(raw.omega)) fail(ErrorCode::InvalidArgument, "omega has a non-finite entry");
  for (std::size_t j = 0; j < p; ++j)
    if (raw.omega[j] == 0.0) fail(ErrorCode::ZeroSensitivity, "omega[" + std::to_string(j) + "] is zero");
  if (!detail::all_finite(raw.theta_obs)) fail(ErrorCode::InvalidArgument, "theta_obs has a non-finite entry");
  if (!raw.sigma_obs.allFinite()) fail(ErrorCode::NonPSDCovariance, "sigma_obs has a non-finite entry");

  for (std::size_t j = 0; j < p; ++j) {
    const auto& arm = raw.arms[j];
    if (!(arm.v2 > 0.0) || !std::isfinite(arm.v2))
      fail(ErrorCode::InvalidArgument, "arms[" + std::to_string(j) + "].v2 must be positive");
    if (!(arm.cost > 0.0) || !std::isfinite(arm.cost))
      fail(ErrorCode::InvalidArgument, "arms[" + std::to_string(j) + "].cost must be positive");
  }
  if (!(raw.budget > 0.0) || !std::isfinite(raw.budget))
    fail(ErrorCode::NonpositiveBudget, "budget must be positive and finite");

  Matrix sym = 0.5 * (raw.sigma_obs + raw.sigma_obs.transpose());
  for (std::size_t j = 0; j < p; ++j)
    if (!(sym(j, j) > 0.0)) fail(ErrorCode::NonPSDCovariance, "sigma_obs diagonal must be strictly positive");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector& lambda = eig.eigenvalues();
  const double largest = lambda.maxCoeff();
  if (lambda.minCoeff() < -1e-10 * largest) fail(ErrorCode::NonPSDCovariance, "sigma_obs is not positive semi-definite");
  if (lambda.minCoeff() < 0.0) {
    const Vector clipped = lambda.cwiseMax(0.0);
    sym = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    sym = 0.5 * (sym + sym.transpose()).eval();
  }
  raw.sigma_obs = sym;

  auto& f = raw.feasibility;
  switch (f.mode) {
    case FeasibilitySet::Mode::AtMostK:
      if (f.k < 1 || f.k > p) fail(ErrorCode::EmptyFeasibilitySet, "AtMostK requires 1 <= k <= p");
      f.list.clear();
      break;
    case FeasibilitySet::Mode::All: f.list.clear(); break;
    case FeasibilitySet::Mode::ExplicitList: {
      if (f.list.empty()) fail(ErrorCode::EmptyFeasibilitySet, "explicit feasibility list is empty");
      std::vector<std::uint64_t> masks;
      for (const auto& x : f.list) {
        if (x.size() != p) fail(ErrorCode::DimensionMismatch, "feasibility list entry has wrong length");
        for (auto v : x)
          if (v > 1) fail(ErrorCode::InvalidArgument, "feasibility list entry is not binary");
        masks.push_back(mask_of(x));
      }
      std::sort(masks.begin(), masks.end());
      masks.erase(std::unique(masks.begin(), masks.end()), masks.end());
      f.list.clear();
      for (auto m : masks) f.list.push_back(selection_of(m, p));
      break;
    }
  }

  if (raw.norm.kind == NormSpec::Kind::Weighted) {
    if (static_cast<std::size_t>(raw.norm.weights.size()) != p)
      fail(ErrorCode::DimensionMismatch, "norm weights length differs from omega length");
    for (Eigen::Index j = 0; j < raw.norm.weights.size(); ++j)
      if (!(raw.norm.weights[j] > 0.0) || !std::isfinite(raw.norm.weights[j]))
        fail(ErrorCode::InvalidArgument, "norm weights must be positive and finite");
  } else {
    raw.norm.weights.resize(0);
  }
  return raw;
}

/// Feasible design masks in ascending mask order.
inline std::vector<std::uint64_t> feasible_masks(const DesignProblem& problem,
                                                 std::uint64_t cap = kDefaultEnumerationCap) {
  const std::size_t p = problem.dim();
  const auto& f = problem.feasibility;
  std::vector<std::uint64_t> out;
  if (f.mode == FeasibilitySet::Mode::ExplicitList) {
    if (f.list.size() > cap) fail(ErrorCode::EnumerationTooLarge, "explicit list exceeds the enumeration cap");
    for (const auto& x : f.list) out.push_back(mask_of(x));
    std::sort(out.begin(), out.end());
    return out;
  }
  if (p >= 63 || (std::uint64_t{1} << p) > cap)
    fail(ErrorCode::EnumerationTooLarge, "2^" + std::to_string(p) + " designs exceed the enumeration cap");
  const std::uint64_t total = std::uint64_t{1} << p;
  for (std::uint64_t m = 0; m < total; ++m)
    if (admits(f, m)) out.push_back(m);
  return out;
}

inline std::vector<Selection> feasible_designs(const DesignProblem& problem,
                                               std::uint64_t cap = kDefaultEnumerationCap) {
  std::vector<Selection> out;
  for (auto m : feasible_masks(problem, cap)) out.push_back(selection_of(m, problem.dim()));
  return out;
}

}  // namespace regdesign
