#pragma once

#include <cmath>
#include <vector>

#include "gmm.hpp"

namespace regdesign {

/**
 * Standard normal quantile. Acklam's rational approximation (relative error
 * below 1.15e-9) followed by one Halley correction using erfc, which brings the
 * result to near machine precision.
 */
inline double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) fail(ErrorCode::InvalidArgument, "quantile level must lie in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x;
  if (prob < low) {
    const double q = std::sqrt(-2.0 * std::log(prob));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (prob <= 1.0 - low) {
    const double q = prob - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - prob));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - prob;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Gradients of the lower and upper identified-set bounds plus the coverage level.
struct Envelope {
  Vector omega_lower;
  Vector omega_upper;
  double eta = 0.05;

  double z() const { return normal_quantile(1.0 - 0.5 * eta); }
};

inline void validate_envelope(const Envelope& env) {
  if (env.omega_lower.size() != env.omega_upper.size() || env.omega_lower.size() == 0)
    fail(ErrorCode::DimensionMismatch, "envelope vectors must have equal nonzero length");
  if (env.omega_lower.isZero(0.0) && env.omega_upper.isZero(0.0))
    fail(ErrorCode::InvalidArgument, "envelope needs a nonzero bound gradient");
  if (!(env.eta > 0.0 && env.eta < 1.0)) fail(ErrorCode::InvalidArgument, "eta must lie in (0,1)");
}

/// Bounds of the average effect under no assumptions on the missing potential outcomes.
inline Envelope manski_envelope(double pi1, double eta = 0.05) {
  if (!(pi1 > 0.0 && pi1 < 1.0)) fail(ErrorCode::DegenerateAssignment, "treatment share must lie in (0,1)");
  const double pi0 = 1.0 - pi1;
  Envelope env;
  env.omega_lower = Vector(4);
  env.omega_upper = Vector(4);
  env.omega_lower << 1.0 / pi1, 0.0, -1.0 / pi0, -1.0 / pi0;
  env.omega_upper << 1.0 / pi1, 1.0 / pi1, -1.0 / pi0, 0.0;
  env.eta = eta;
  return env;
}

inline double variance_index_A(const Envelope& env, const Matrix& gamma, const Matrix& sigma) {
  const double up = alpha_gmm(env.omega_upper.transpose(), gamma, sigma);
  const double lo = alpha_gmm(env.omega_lower.transpose(), gamma, sigma);
  return env.z() * (std::sqrt(std::max(up, 0.0)) + std::sqrt(std::max(lo, 0.0)));
}

inline double bias_index_C(const Envelope& env, const Matrix& gamma, const std::vector<Eigen::Index>& experimental_idx,
                           const NormSpec& norm) {
  const Vector width = env.omega_upper - env.omega_lower;
  return std::sqrt(beta_gmm(env.omega_upper.transpose(), gamma, experimental_idx, norm)) +
         std::sqrt(beta_gmm(env.omega_lower.transpose(), gamma, experimental_idx, norm)) +
         std::sqrt(beta_gmm(width.transpose(), gamma, experimental_idx, norm));
}

/// Gamma and Sigma of one estimator together with the bias structure.
struct EstimatorPieces {
  Matrix gamma;
  Matrix sigma;
  std::vector<Eigen::Index> experimental_idx;
  NormSpec norm;
};

inline EstimatorPieces estimator_pieces(const MomentModel& model, std::size_t index) {
  if (index >= model.candidates.size()) fail(ErrorCode::InvalidArgument, "candidate index out of range");
  const auto& cand = model.candidates[index];
  return {gamma_matrix(model.lambda, cand.W), profiled_sigma(model, cand), model.experimental_idx, model.norm};
}

struct WorstCaseInterval {
  double lower = 0.0;
  double upper = 0.0;
  double B = 0.0;
};

/// Interval covering the identified set for every bias in the B-ball of the norm.
inline WorstCaseInterval worst_case_interval(const Envelope& env, const EstimatorPieces& est, const Vector& theta_hat,
                                             double B) {
  if (!(B >= 0.0)) fail(ErrorCode::InvalidArgument, "bias radius must be nonnegative");
  const double z = env.z();
  const Matrix lo_row = env.omega_lower.transpose(), up_row = env.omega_upper.transpose();
  const double a_lo = std::sqrt(std::max(alpha_gmm(lo_row, est.gamma, est.sigma), 0.0));
  const double a_up = std::sqrt(std::max(alpha_gmm(up_row, est.gamma, est.sigma), 0.0));
  const double b_lo = std::sqrt(beta_gmm(lo_row, est.gamma, est.experimental_idx, est.norm));
  const double b_up = std::sqrt(beta_gmm(up_row, est.gamma, est.experimental_idx, est.norm));
  return {env.omega_lower.dot(theta_hat) - z * a_lo - B * b_lo, env.omega_upper.dot(theta_hat) + z * a_up + B * b_up, B};
}

/**
 * Interval-length regret max{A/A*, C/C*} over the candidate menu. The breakdown
 * carries A in the alpha fields and C in the beta fields.
 */
inline RegretBreakdown ci_regret(const Envelope& env, const MomentModel& model, std::size_t index) {
  if (model.candidates.empty()) fail(ErrorCode::EmptyCandidateSet, "candidate menu is empty");
  if (index >= model.candidates.size()) fail(ErrorCode::InvalidArgument, "candidate index out of range");
  validate_envelope(env);
  double a_star = kInfinity, c_star = kInfinity, a = 0.0, c = 0.0;
  for (std::size_t i = 0; i < model.candidates.size(); ++i) {
    const auto est = estimator_pieces(model, i);
    const double ai = variance_index_A(env, est.gamma, est.sigma);
    const double ci = bias_index_C(env, est.gamma, est.experimental_idx, est.norm);
    a_star = std::min(a_star, ai);
    c_star = std::min(c_star, ci);
    if (i == index) {
      a = ai;
      c = ci;
    }
  }
  return make_breakdown(a, a_star, c, c_star);
}

}  // namespace regdesign
