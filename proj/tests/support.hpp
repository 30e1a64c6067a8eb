#pragma once

#include <cmath>
#include <random>
#include <string>

#include <regdesign/regdesign.hpp>

namespace regdesign::testing {

class InstanceRng {
 public:
  explicit InstanceRng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  bool coin() { return integer(0, 1) == 1; }
  double normal() { return std::normal_distribution<double>()(gen_); }

  Matrix random_spd(Eigen::Index n, double lo = 0.1, double hi = 10.0) {
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) a(i, j) = normal();
    Eigen::HouseholderQR<Matrix> qr(a);
    const Matrix q = qr.householderQ();
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) d[i] = log_uniform(lo, hi);
    return q * d.asDiagonal() * q.transpose();
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

struct InstanceShape {
  int min_dim = 2;
  int max_dim = 4;
  bool correlated = false;
  bool random_signs = false;
  bool random_costs = false;
};

/// Log-uniform omega, observational variances and v2 over [0.1, 10]; AtMostK with k uniform in 1..p.
inline DesignProblem random_problem(InstanceRng& rng, const InstanceShape& shape = {}) {
  const int p = rng.integer(shape.min_dim, shape.max_dim);
  DesignProblem prob;
  prob.omega = Vector(p);
  prob.theta_obs = Vector(p);
  for (int j = 0; j < p; ++j) {
    prob.omega[j] = rng.log_uniform(0.1, 10.0) * (shape.random_signs && rng.coin() ? -1.0 : 1.0);
    prob.theta_obs[j] = rng.normal();
  }
  if (shape.correlated) {
    prob.sigma_obs = rng.random_spd(p);
  } else {
    prob.sigma_obs = Matrix::Zero(p, p);
    for (int j = 0; j < p; ++j) prob.sigma_obs(j, j) = rng.log_uniform(0.1, 10.0);
  }
  for (int j = 0; j < p; ++j)
    prob.arms.push_back({"arm" + std::to_string(j + 1), rng.log_uniform(0.1, 10.0),
                         shape.random_costs ? rng.log_uniform(0.5, 2.0) : 1.0});
  prob.budget = rng.log_uniform(1.0, 100.0);
  prob.feasibility = FeasibilitySet::at_most(static_cast<std::size_t>(rng.integer(1, p)));
  return validate_problem(prob);
}

/// Uniformly random nonempty feasible design with random gamma in [0, 1].
inline std::pair<Selection, Vector> random_design(InstanceRng& rng, const DesignProblem& problem) {
  const auto masks = feasible_masks(problem);
  std::vector<std::uint64_t> nonempty;
  for (auto m : masks)
    if (m != 0) nonempty.push_back(m);
  const auto mask = nonempty[static_cast<std::size_t>(rng.integer(0, static_cast<int>(nonempty.size()) - 1))];
  const Selection x = selection_of(mask, problem.dim());
  Vector gamma = Vector::Zero(problem.omega.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) gamma[static_cast<Eigen::Index>(j)] = rng.uniform(0.0, 1.0);
  return {x, gamma};
}

inline double relative_error(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace regdesign::testing
