#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace regdesign {

/**
 * Convex quadratic program
 *   minimize 0.5 x'Qx + c'x  subject to  lower <= x <= upper,  G x <= h.
 * Q must be symmetric positive semi-definite. G may have zero rows.
 */
struct QpProblem {
  Eigen::MatrixXd Q;
  Eigen::VectorXd c;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(Q * x) + c.dot(x); }
};

struct QpResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

// Constraint k of the stacked system: rows [0,n) are lower bounds, [n,2n) upper
// bounds, the rest rows of G. Each is written as a'x <= b.
class ConstraintSet {
 public:
  explicit ConstraintSet(const QpProblem& qp) : qp_(qp), n_(qp.c.size()) {}

  Eigen::Index size() const { return 2 * n_ + qp_.G.rows(); }

  Eigen::VectorXd row(Eigen::Index k) const {
    if (k < 2 * n_) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(n_);
      a[k % n_] = k < n_ ? -1.0 : 1.0;
      return a;
    }
    return qp_.G.row(k - 2 * n_).transpose();
  }

  double rhs(Eigen::Index k) const {
    if (k < n_) return -qp_.lower[k];
    if (k < 2 * n_) return qp_.upper[k - n_];
    return qp_.h[k - 2 * n_];
  }

  // a'd, cheap for bound rows.
  double dot(Eigen::Index k, const Eigen::VectorXd& d) const {
    if (k < n_) return -d[k];
    if (k < 2 * n_) return d[k - n_];
    return qp_.G.row(k - 2 * n_).dot(d);
  }

  bool is_bound(Eigen::Index k) const { return k < 2 * n_; }

  // Snap a coordinate exactly onto a bound after a blocking step.
  void snap(Eigen::Index k, Eigen::VectorXd& x) const {
    if (k < n_) x[k] = qp_.lower[k];
    else if (k < 2 * n_) x[k - n_] = qp_.upper[k - n_];
  }

 private:
  const QpProblem& qp_;
  Eigen::Index n_;
};

}  // namespace detail

/**
 * Primal active-set method. `start` must be feasible. Singular Q is handled by
 * taking zero-curvature descent directions in the null space of the working set,
 * which are bounded because every variable is boxed.
 */
inline QpResult solve_qp(const QpProblem& qp, Eigen::VectorXd start) {
  const Eigen::Index n = qp.c.size();
  if (qp.Q.rows() != n || qp.Q.cols() != n || qp.lower.size() != n || qp.upper.size() != n ||
      (qp.G.rows() > 0 && qp.G.cols() != n) || qp.h.size() != qp.G.rows() || start.size() != n)
    fail(ErrorCode::DimensionMismatch, "QP dimensions do not conform");

  QpResult result;
  result.x = std::move(start);
  if (n == 0) return result;
  Eigen::VectorXd& x = result.x;

  const detail::ConstraintSet cons(qp);
  const double q_scale = std::max(qp.Q.cwiseAbs().maxCoeff(), 0.0);
  const double grad_scale = std::max({q_scale, qp.c.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min()});
  const double mult_tol = 1e-11 * grad_scale;
  const double curv_tol = 1e-12 * std::max(q_scale, std::numeric_limits<double>::min());

  std::vector<Eigen::Index> working;
  std::vector<bool> in_working(static_cast<std::size_t>(cons.size()), false);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (qp.lower[j] == qp.upper[j]) {
      x[j] = qp.lower[j];
      working.push_back(j);
      in_working[static_cast<std::size_t>(j)] = true;
    }
  }

  const int max_iter = 50 * static_cast<int>(cons.size()) + 200;
  bool subspace_optimal = false;
  for (int iter = 0; iter < max_iter; ++iter) {
    result.iterations = iter + 1;
    const Eigen::VectorXd g = qp.Q * x + qp.c;
    const auto k = static_cast<Eigen::Index>(working.size());

    Eigen::MatrixXd active(k, n);
    for (Eigen::Index i = 0; i < k; ++i) active.row(i) = cons.row(working[static_cast<std::size_t>(i)]).transpose();

    Eigen::MatrixXd Z;
    if (k == 0) {
      Z = Eigen::MatrixXd::Identity(n, n);
    } else {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(active.transpose());
      const Eigen::MatrixXd full = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
      Z = full.rightCols(n - k);
    }

    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    bool unbounded_direction = false;
    if (Z.cols() > 0 && !subspace_optimal) {
      const Eigen::MatrixXd H = Z.transpose() * qp.Q * Z;
      const Eigen::VectorXd gz = Z.transpose() * g;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (H + H.transpose()));
      const Eigen::VectorXd& lam = eig.eigenvalues();
      const Eigen::MatrixXd& U = eig.eigenvectors();
      const Eigen::VectorXd proj = U.transpose() * gz;
      Eigen::VectorXd dz = Eigen::VectorXd::Zero(Z.cols());
      for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i] <= curv_tol && std::abs(proj[i]) > mult_tol) {
          unbounded_direction = true;
          break;
        }
      }
      if (unbounded_direction) {
        for (Eigen::Index i = 0; i < lam.size(); ++i)
          if (lam[i] <= curv_tol) dz -= proj[i] * U.col(i);
      } else {
        for (Eigen::Index i = 0; i < lam.size(); ++i)
          if (lam[i] > curv_tol) dz -= (proj[i] / lam[i]) * U.col(i);
      }
      d = Z * dz;
    }

    if (subspace_optimal || d.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      subspace_optimal = false;
      if (k == 0) break;
      // Multipliers from g + active' * lambda = 0.
      const Eigen::VectorXd lambda = active.transpose().colPivHouseholderQr().solve(-g);
      Eigen::Index worst = -1;
      double worst_value = -mult_tol;
      for (Eigen::Index i = 0; i < k; ++i) {
        const auto idx = working[static_cast<std::size_t>(i)];
        if (cons.is_bound(idx) && qp.lower[idx % n] == qp.upper[idx % n]) continue;
        if (lambda[i] < worst_value) {
          worst_value = lambda[i];
          worst = i;
        }
      }
      if (worst < 0) break;
      in_working[static_cast<std::size_t>(working[static_cast<std::size_t>(worst)])] = false;
      working.erase(working.begin() + worst);
      continue;
    }

    double step = unbounded_direction ? std::numeric_limits<double>::infinity() : 1.0;
    Eigen::Index blocking = -1;
    const double dnorm = d.norm();
    for (Eigen::Index c = 0; c < cons.size(); ++c) {
      if (in_working[static_cast<std::size_t>(c)]) continue;
      const double ad = cons.dot(c, d);
      if (ad <= 1e-14 * dnorm) continue;
      const double slack = std::max(0.0, cons.rhs(c) - cons.dot(c, x));
      const double candidate = slack / ad;
      if (candidate < step) {
        step = candidate;
        blocking = c;
      }
    }
    if (!std::isfinite(step)) fail(ErrorCode::NonConvergence, "QP is unbounded along a zero-curvature direction");
    x += step * d;
    subspace_optimal = blocking < 0;
    if (blocking >= 0) {
      cons.snap(blocking, x);
      working.push_back(blocking);
      in_working[static_cast<std::size_t>(blocking)] = true;
    }
    if (iter + 1 == max_iter) fail(ErrorCode::NonConvergence, "QP active-set iteration limit reached");
  }
  x = x.cwiseMax(qp.lower).cwiseMin(qp.upper);
  result.objective = qp.objective(x);
  return result;
}

/// Box-constrained convenience overload; starts from the projection of zero.
inline QpResult solve_box_qp(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c, const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper) {
  QpProblem qp{Q, c, lower, upper, Eigen::MatrixXd(0, c.size()), Eigen::VectorXd(0)};
  Eigen::VectorXd start = Eigen::VectorXd::Zero(c.size()).cwiseMax(lower).cwiseMin(upper);
  return solve_qp(qp, std::move(start));
}

/// Minimizes a convex scalar function on [lo, hi] by golden-section search.
template <class F>
double golden_section_min(F&& f, double lo, double hi, int iterations = 200) {
  const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++i) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = f(d);
    }
  }
  const double mid = 0.5 * (a + b);
  double best = mid, fbest = f(mid);
  for (double cand : {lo, hi}) {
    const double fv = f(cand);
    if (fv < fbest) {
      best = cand;
      fbest = fv;
    }
  }
  return best;
}

}  // namespace regdesign
