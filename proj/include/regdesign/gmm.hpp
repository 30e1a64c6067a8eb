#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "regret_core.hpp"

namespace regdesign {

/// Sample-allocation family: the listed moments have variance v2_j / n_j with sum_j cost_j n_j = budget.
struct AllocationFamily {
  std::vector<Eigen::Index> moments;
  Vector v2;
  Vector cost;
  double budget = 1.0;
};

/// One (W, Sigma) pair of the candidate menu.
struct Candidate {
  std::string name;
  Matrix W;
  Matrix sigma;
  std::optional<AllocationFamily> allocation;  ///< when set, Sigma's entries for these moments are profiled out
};

struct MomentModel {
  Matrix lambda;                                 ///< p_g x d Jacobian
  Matrix omega_mat;                              ///< q x d target map
  std::vector<Eigen::Index> experimental_idx;    ///< moments unbiased by design
  std::vector<Candidate> candidates;
  NormSpec norm;                                 ///< Weighted norms carry one weight per moment
};

/// -(L'WL)^{-1} L'W.
inline Matrix gamma_matrix(const Matrix& lambda, const Matrix& W) {
  if (W.rows() != lambda.rows() || W.cols() != lambda.rows())
    fail(ErrorCode::DimensionMismatch, "W must be p_g x p_g");
  const Matrix normal = lambda.transpose() * W * lambda;
  Eigen::JacobiSVD<Matrix> svd(normal);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv[sv.size() - 1] > 0.0) || sv[0] / sv[sv.size() - 1] > 1e12)
    fail(ErrorCode::SingularNormalMatrix, "Lambda' W Lambda is singular or ill-conditioned");
  return -normal.fullPivLu().solve(lambda.transpose() * W);
}

/// sup over the unit ball of the given norm of ||M u||_2.
inline double dual_norm(const Matrix& M, const NormSpec& norm) {
  const Eigen::Index m = M.cols();
  if (m < 1) fail(ErrorCode::InvalidArgument, "dual norm needs at least one column");
  switch (norm.kind) {
    case NormSpec::Kind::L2: return Eigen::JacobiSVD<Matrix>(M).singularValues()[0];
    case NormSpec::Kind::L1: return M.colwise().norm().maxCoeff();
    case NormSpec::Kind::Weighted:
      if (norm.weights.size() != m) fail(ErrorCode::DimensionMismatch, "norm weights must match column count");
      return dual_norm(M * norm.weights.asDiagonal(), NormSpec::linf());
    case NormSpec::Kind::Linf: {
      if (m > 24) fail(ErrorCode::VertexEnumerationTooLarge, "more than 24 columns for sign-vertex enumeration");
      if (M.rows() == 1) return M.cwiseAbs().sum();
      // Gray-code walk over sign vectors with u_0 fixed to +1 (u and -u give the same norm).
      Vector mu = M.rowwise().sum();
      Vector signs = Vector::Ones(m);
      double best = mu.squaredNorm();
      const std::uint64_t count = std::uint64_t{1} << (m - 1);
      for (std::uint64_t i = 1; i < count; ++i) {
        const auto flip = static_cast<Eigen::Index>(std::countr_zero(i)) + 1;
        signs[flip] = -signs[flip];
        mu += 2.0 * signs[flip] * M.col(flip);
        best = std::max(best, mu.squaredNorm());
      }
      return std::sqrt(best);
    }
  }
  return 0.0;
}

/// Trace(Omega Gamma Sigma Gamma' Omega').
inline double alpha_gmm(const Matrix& omega_mat, const Matrix& gamma, const Matrix& sigma) {
  const Matrix og = omega_mat * gamma;
  return (og * sigma * og.transpose()).trace();
}

inline std::vector<Eigen::Index> complement_indices(const std::vector<Eigen::Index>& idx, Eigen::Index total) {
  std::vector<bool> in(static_cast<std::size_t>(total), false);
  for (auto i : idx) {
    if (i < 0 || i >= total) fail(ErrorCode::DimensionMismatch, "moment index out of range");
    in[static_cast<std::size_t>(i)] = true;
  }
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < total; ++i)
    if (!in[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

/// Squared dual norm of the columns of Omega Gamma outside the experimental set.
inline double beta_gmm(const Matrix& omega_mat, const Matrix& gamma, const std::vector<Eigen::Index>& experimental_idx,
                       const NormSpec& norm) {
  const Matrix og = omega_mat * gamma;
  const auto biased = complement_indices(experimental_idx, og.cols());
  if (biased.empty()) return 0.0;
  Matrix sub(og.rows(), static_cast<Eigen::Index>(biased.size()));
  NormSpec restricted = norm;
  if (norm.kind == NormSpec::Kind::Weighted) {
    if (norm.weights.size() != og.cols()) fail(ErrorCode::DimensionMismatch, "norm weights must match moment count");
    restricted.weights.resize(sub.cols());
  }
  for (Eigen::Index c = 0; c < sub.cols(); ++c) {
    const auto j = biased[static_cast<std::size_t>(c)];
    sub.col(c) = og.col(j);
    if (norm.kind == NormSpec::Kind::Weighted) restricted.weights[c] = norm.weights[j];
  }
  const double dn = dual_norm(sub, restricted);
  return dn * dn;
}

namespace detail {

// Column weights ||(Omega Gamma)_{.,j}||^2 of the allocated moments.
inline Vector allocation_loads(const Matrix& og, const AllocationFamily& fam) {
  Vector w(static_cast<Eigen::Index>(fam.moments.size()));
  for (Eigen::Index r = 0; r < w.size(); ++r) w[r] = og.col(fam.moments[static_cast<std::size_t>(r)]).squaredNorm();
  return w;
}

}  // namespace detail

/// Sigma at the variance-minimizing allocation (fixed Sigma when the candidate has no family).
inline Matrix profiled_sigma(const MomentModel& model, const Candidate& cand) {
  if (!cand.allocation) return cand.sigma;
  const auto& fam = *cand.allocation;
  const Matrix og = model.omega_mat * gamma_matrix(model.lambda, cand.W);
  const Vector load = detail::allocation_loads(og, fam);
  double denom = 0.0;
  for (Eigen::Index r = 0; r < load.size(); ++r) denom += std::sqrt(load[r] * fam.v2[r] * fam.cost[r]);
  Matrix sigma = cand.sigma;
  for (Eigen::Index r = 0; r < load.size(); ++r) {
    const auto j = fam.moments[static_cast<std::size_t>(r)];
    sigma.row(j).setZero();
    sigma.col(j).setZero();
    const double n = denom > 0.0 ? fam.budget * std::sqrt(load[r] * fam.v2[r] / fam.cost[r]) / denom : 0.0;
    sigma(j, j) = n > 0.0 ? fam.v2[r] / n : fam.v2[r] / fam.budget;
  }
  return sigma;
}

/// alpha of a candidate, profiling the allocation family in closed form when present.
inline double candidate_alpha(const MomentModel& model, const Candidate& cand) {
  const Matrix gamma = gamma_matrix(model.lambda, cand.W);
  if (!cand.allocation) return alpha_gmm(model.omega_mat, gamma, cand.sigma);
  const auto& fam = *cand.allocation;
  const Matrix og = model.omega_mat * gamma;
  Matrix fixed = cand.sigma;
  for (auto j : fam.moments) {
    fixed.row(j).setZero();
    fixed.col(j).setZero();
  }
  const Vector load = detail::allocation_loads(og, fam);
  double root_sum = 0.0;
  for (Eigen::Index r = 0; r < load.size(); ++r) root_sum += std::sqrt(load[r] * fam.v2[r] * fam.cost[r]);
  return alpha_gmm(model.omega_mat, gamma, fixed) + root_sum * root_sum / fam.budget;
}

inline double candidate_beta(const MomentModel& model, const Candidate& cand) {
  return beta_gmm(model.omega_mat, gamma_matrix(model.lambda, cand.W), model.experimental_idx, model.norm);
}

/// Checks the structural invariants; throws on the first violation.
inline void validate_moment_model(const MomentModel& model) {
  const Eigen::Index pg = model.lambda.rows(), d = model.lambda.cols();
  if (d < 1 || pg < d) fail(ErrorCode::DimensionMismatch, "Lambda must be p_g x d with d <= p_g");
  if (Eigen::FullPivLU<Matrix>(model.lambda).rank() != d)
    fail(ErrorCode::InvalidArgument, "Lambda must have full column rank");
  if (model.omega_mat.cols() != d || model.omega_mat.rows() < 1)
    fail(ErrorCode::DimensionMismatch, "Omega must be q x d");
  if (model.omega_mat.isZero(0.0)) fail(ErrorCode::InvalidArgument, "Omega must not be zero");
  complement_indices(model.experimental_idx, pg);
  if (model.candidates.empty()) fail(ErrorCode::EmptyCandidateSet, "candidate menu is empty");
  for (const auto& c : model.candidates) {
    if (c.sigma.rows() != pg || c.sigma.cols() != pg)
      fail(ErrorCode::DimensionMismatch, "candidate '" + c.name + "' Sigma must be p_g x p_g");
    if ((c.sigma - c.sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, c.sigma.cwiseAbs().maxCoeff()))
      fail(ErrorCode::NonPSDCovariance, "candidate '" + c.name + "' Sigma is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (c.sigma + c.sigma.transpose()));
    if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(eig.eigenvalues().maxCoeff(), 0.0))
      fail(ErrorCode::NonPSDCovariance, "candidate '" + c.name + "' Sigma is not positive semi-definite");
    gamma_matrix(model.lambda, c.W);
  }
}

/// Regret of candidate `index` against the menu's variance and bias oracles.
inline RegretBreakdown regret_gmm(const MomentModel& model, std::size_t index) {
  if (model.candidates.empty()) fail(ErrorCode::EmptyCandidateSet, "candidate menu is empty");
  if (index >= model.candidates.size()) fail(ErrorCode::InvalidArgument, "candidate index out of range");
  double a_star = kInfinity, b_star = kInfinity, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < model.candidates.size(); ++i) {
    const double ai = candidate_alpha(model, model.candidates[i]);
    const double bi = candidate_beta(model, model.candidates[i]);
    a_star = std::min(a_star, ai);
    b_star = std::min(b_star, bi);
    if (i == index) {
      a = ai;
      b = bi;
    }
  }
  return make_breakdown(a, a_star, b, b_star);
}

/**
 * Shrinkage design (x, gamma) written as a GMM estimator. Moments are the p
 * observational estimates followed by one experimental moment per arm; the
 * experimental moments form the unbiased set. Unselected arms get zero weight.
 */
inline Candidate shrinkage_candidate(const DesignProblem& problem, const Selection& x, const Vector& gamma,
                                     bool profile_allocation = false) {
  const Eigen::Index p = problem.omega.size();
  const auto shrink = EffectiveShrinkage::from(x, gamma);
  const Vector& s = shrink.s;
  Candidate cand;
  cand.W = Matrix::Zero(2 * p, 2 * p);
  cand.sigma = Matrix::Zero(2 * p, 2 * p);
  cand.sigma.topLeftCorner(p, p) = problem.sigma_obs;
  for (Eigen::Index j = 0; j < p; ++j) {
    cand.W(j, j) = 1.0 - s[j];
    cand.W(p + j, p + j) = s[j];
  }
  const bool any = s.maxCoeff() > 0.0;
  const Vector n = any ? neyman_allocation(problem, shrink) : Vector::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v2 = problem.arms[static_cast<std::size_t>(j)].v2;
    cand.sigma(p + j, p + j) = n[j] > 0.0 ? v2 / n[j] : v2 / problem.budget;
  }
  if (profile_allocation) {
    AllocationFamily fam;
    fam.v2.resize(p);
    fam.cost.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      fam.moments.push_back(p + j);
      fam.v2[j] = problem.arms[static_cast<std::size_t>(j)].v2;
      fam.cost[j] = problem.arms[static_cast<std::size_t>(j)].cost;
    }
    fam.budget = problem.budget;
    cand.allocation = std::move(fam);
  }
  std::string label;
  for (auto v : x) label += v ? '1' : '0';
  cand.name = "x=" + label;
  return cand;
}

/// The moment model shared by every shrinkage design of a problem, with an empty menu.
inline MomentModel shrinkage_moment_model(const DesignProblem& problem) {
  const Eigen::Index p = problem.omega.size();
  MomentModel model;
  model.lambda = Matrix::Zero(2 * p, p);
  model.lambda.topRows(p) = -Matrix::Identity(p, p);
  model.lambda.bottomRows(p) = -Matrix::Identity(p, p);
  model.omega_mat = problem.omega.transpose();
  for (Eigen::Index j = 0; j < p; ++j) model.experimental_idx.push_back(p + j);
  model.norm = problem.norm;
  if (problem.norm.kind == NormSpec::Kind::Weighted) {
    model.norm.weights = Vector::Ones(2 * p);
    model.norm.weights.head(p) = problem.norm.weights;
  }
  return model;
}

struct Embedding {
  MomentModel model;
  Candidate candidate;
};

inline Embedding embed_shrinkage(const DesignProblem& problem, const Selection& x, const Vector& gamma) {
  Embedding e{shrinkage_moment_model(problem), shrinkage_candidate(problem, x, gamma)};
  e.model.candidates.push_back(e.candidate);
  return e;
}

}  // namespace regdesign
