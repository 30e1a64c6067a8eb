// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

using namespace regdesign;
using regdesign::testing::InstanceRng;
using regdesign::testing::random_problem;
using regdesign::testing::relative_error;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double time_limit_s;  // 0 means no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

// sup over B of the worst-case MSE ratio equals the regret of the solved design.
Outcome scan_matches_regret() {
  InstanceRng rng(101);
  double worst = 0.0;
  int failures = 0;
  for (int i = 0; i < 200; ++i) {
    const auto problem = random_problem(rng);
    const auto sol = solve(problem);
    const auto scan = sup_B_scan(problem, sol.x_star, sol.gamma_star, default_B_grid(problem));
    const double err = relative_error(scan.sup, sol.t_star);
    worst = std::max(worst, err);
    if (err > 0.01) ++failures;
  }
  return {failures == 0, fmt("max relative error %.3g over 200 instances, %g failures", worst, failures)};
}

Outcome curve_quasi_convex() {
  InstanceRng rng(101);
  double worst = -kInfinity;
  int failures = 0;
  for (int i = 0; i < 200; ++i) {
    const auto problem = random_problem(rng);
    const auto sol = solve(problem);
    const auto curve = sup_B_scan(problem, sol.x_star, sol.gamma_star, default_B_grid(problem)).curve;
    const double ends = std::max(curve.front(), curve.back());
    for (std::size_t k = 1; k + 1 < curve.size(); ++k) {
      worst = std::max(worst, curve[k] - ends);
      if (curve[k] > ends + 1e-9) {
        ++failures;
        break;
      }
    }
  }
  return {failures == 0, fmt("largest interior excess %.3g, %g instances violate", worst, failures)};
}

Outcome neyman_identities() {
  InstanceRng rng(303);
  double worst_budget = 0.0, worst_variance = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto problem = random_problem(rng, {.min_dim = 1, .max_dim = 6, .correlated = true, .random_signs = true,
                                              .random_costs = true});
    const auto [x, gamma] = regdesign::testing::random_design(rng, problem);
    Vector g = gamma;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (x[j]) g[static_cast<Eigen::Index>(j)] = std::max(g[static_cast<Eigen::Index>(j)], 1e-3);
    const auto shrink = EffectiveShrinkage::from(x, g);
    const Vector n = neyman_allocation(problem, shrink);
    double spent = 0.0;
    for (Eigen::Index j = 0; j < n.size(); ++j) spent += problem.arms[static_cast<std::size_t>(j)].cost * n[j];
    worst_budget = std::max(worst_budget, relative_error(spent, problem.budget));
    worst_variance =
        std::max(worst_variance, relative_error(variance_at_allocation(problem, shrink, n), compute_alpha(problem, shrink)));
  }
  return {worst_budget <= 1e-12 && worst_variance <= 1e-12,
          fmt("budget identity %.3g, plug-in variance identity %.3g (max relative error, 1000 pairs)", worst_budget,
              worst_variance)};
}

Outcome two_parameter_sweep() {
  struct Axis {
    const char* name;
    TwoParamInstance base;
    std::function<void(TwoParamInstance&, double)> set;
    double lo, hi;
  };
  TwoParamInstance a_base{{1.0, 1.0}, {1.0, 1.0}, {1.0, 0.25}, 1};
  TwoParamInstance bc_base{{0.9, 1.0}, {1.0, 1.0}, {1.0, 1.0}, 1};
  const std::vector<Axis> axes{
      {"omega2", a_base, [](TwoParamInstance& t, double v) { t.omega[1] = v; }, 0.1, 2.0},
      {"v2", bc_base, [](TwoParamInstance& t, double v) { t.v2[1] = v * v; }, 0.5, 2.0},
      {"sigma2", bc_base, [](TwoParamInstance& t, double v) { t.sigma2[1] = v * v; }, 0.5, 2.0},
  };
  double worst = 0.0, worst_oracle = 0.0;
  for (const auto& axis : axes) {
    for (int k = 0; k < 30; ++k) {
      TwoParamInstance inst = axis.base;
      axis.set(inst, axis.lo + (axis.hi - axis.lo) * k / 29.0);
      const auto problem = two_param_problem(inst);
      const auto oracles = compute_oracles(problem);
      const auto [a_star, b_star] = two_param_oracles(inst);
      worst_oracle = std::max({worst_oracle, relative_error(oracles.alpha.value, a_star),
                               relative_error(oracles.beta.value, b_star)});
      for (int arm = 0; arm < 2; ++arm) {
        TwoParamInstance which = inst;
        which.arm = arm;
        const Selection x = arm == 0 ? Selection{1, 0} : Selection{0, 1};
        const auto inner = inner_solve(problem, x, oracles.alpha.value, oracles.beta.value);
        const double expected = gamma_star_2param(which, a_star, b_star);
        worst = std::max(worst, std::abs(inner.gamma[arm] - expected));
      }
    }
  }
  return {worst <= 1e-4 && worst_oracle <= 1e-9,
          fmt("max |gamma - closed form| %.3g over 3 axes x 30 points x 2 arms; oracle relative error %.3g", worst,
              worst_oracle)};
}

std::string arm_set(const DesignProblem& p, const Selection& x) {
  std::string out;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) out += (out.empty() ? "" : "+") + p.arms[j].name;
  return out.empty() ? "none" : out;
}

std::size_t primary_arm(const DesignSolution& s) {
  Eigen::Index j = 0;
  s.n_star.maxCoeff(&j);
  return static_cast<std::size_t>(j);
}

Outcome ge_arm_choices() {
  const auto cal = default_ge_calibration();
  std::ostringstream detail;
  bool ok = true;
  for (double n : {100.0, 150.0, 200.0, 250.0}) {
    const auto p = build_ge_problem(cal, n, 1);
    const auto sol = solve(p);
    if (arm_set(p, sol.x_star) != "UCT") {
      ok = false;
      detail << "one arm n=" << n << " picks " << arm_set(p, sol.x_star) << "; ";
    }
  }
  std::vector<double> grid;
  for (double n = 100; n <= 2000; n += 50) grid.push_back(n);
  const auto rows = sweep([&](double n) { return build_ge_problem(cal, n, 2); }, grid, default_thread_count());
  double threshold = -1.0;
  for (const auto& row : rows) {
    const auto p = build_ge_problem(cal, row.n_tot, 2);
    const bool job_primary = row.optimal.x_star[2] && primary_arm(row.optimal) == 2;
    if (job_primary && threshold < 0.0) threshold = row.n_tot;
    if (threshold < 0.0 && arm_set(p, row.optimal.x_star) != "UCT+CCT") {
      ok = false;
      detail << "two arms n=" << row.n_tot << " picks " << arm_set(p, row.optimal.x_star) << "; ";
    }
    if (threshold >= 0.0 && !job_primary) {
      ok = false;
      detail << "job not primary at n=" << row.n_tot << "; ";
    }
  }
  if (!(threshold >= 400.0 && threshold <= 600.0)) ok = false;
  const auto at1000 = solve(build_ge_problem(cal, 1000.0, 2));
  const double job_share = at1000.n_star[2] / 1000.0;
  if (!(job_share >= 0.8)) ok = false;
  detail << "switch to job at n=" << threshold << ", job share at n=1000: " << job_share;
  return {ok, detail.str()};
}

Outcome ge_neyman_comparison() {
  const auto cal = default_ge_calibration();
  std::ostringstream detail;
  bool ok = true;
  for (std::size_t k : {1, 2}) {
    const auto p = build_ge_problem(cal, 1000.0, k);
    const auto oracles = compute_oracles(p);
    const auto opt = solve(p, oracles);
    const auto ney = neyman_design(p, oracles);
    const double bias_ratio = ney.breakdown.beta / opt.breakdown.beta;
    const double var_ratio = opt.breakdown.alpha / ney.breakdown.alpha;
    const double lo = k == 1 ? 1.1 : 3.2, hi = k == 1 ? 1.8 : 6.0;
    ok = ok && bias_ratio >= lo && bias_ratio <= hi && var_ratio <= 1.55;
    detail << k << " arm(s): Neyman/optimal bias " << bias_ratio << ", optimal/Neyman variance " << var_ratio << "; ";
  }
  return {ok, detail.str()};
}

Outcome site_selection() {
  const auto table = default_site_table();
  const auto one = solve(build_site_problem(table, 52.0, 1));
  const auto p2 = build_site_problem(table, 52.0, 2);
  const auto two = solve(p2);
  const bool one_ok = one.x_star == Selection{0, 1, 0, 0};
  const bool two_ok = two.x_star == Selection{0, 1, 1, 0};
  const double g2 = two.gamma_star[1], n3 = two.n_star[2];
  const bool ok = one_ok && two_ok && g2 >= 0.85 && g2 <= 1.0 && n3 >= 5.0 && n3 <= 10.0;
  std::ostringstream detail;
  detail << "one area: " << arm_set(p2, one.x_star) << "; two areas: " << arm_set(p2, two.x_star)
         << "; Area 2 gamma " << g2 << "; Area 3 treated villages " << n3;
  return {ok, detail.str()};
}

Outcome monte_carlo() {
  InstanceRng rng(808);
  int failures = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto problem = random_problem(rng, {.correlated = true, .random_signs = true});
    const auto sol = solve(problem);
    const double alpha = sol.breakdown.alpha, beta = sol.breakdown.beta;
    const double B = beta > 0.0 ? std::sqrt(alpha / beta) : 1.0;
    const auto seed = static_cast<std::uint64_t>(1000 + i);
    const auto r0 = monte_carlo_mse(problem, sol.x_star, sol.gamma_star, Vector::Zero(problem.omega.size()), 100000, seed,
                                    default_thread_count());
    const auto rb = monte_carlo_mse(problem, sol.x_star, sol.gamma_star,
                                    worst_case_bias(problem, sol.x_star, sol.gamma_star, B), 100000, seed + 500,
                                    default_thread_count());
    const double z0 = std::abs(r0.empirical_mse - alpha) / r0.std_error;
    const double zb = std::abs(rb.empirical_mse - (alpha + B * B * beta)) / rb.std_error;
    worst_z = std::max({worst_z, z0, zb});
    if (z0 > 3.0 || zb > 3.0) ++failures;
  }
  return {failures == 0, fmt("largest |empirical - theoretical| = %.3g standard errors, %g failures", worst_z, failures)};
}

// Candidates i of a random moment model; log-spaced B grid spanning the menu's variance/bias scales.
std::vector<double> menu_B_grid(const MomentModel& model) {
  double a_max = 0.0, b_min = kInfinity;
  for (const auto& c : model.candidates) {
    a_max = std::max(a_max, candidate_alpha(model, c));
    const double b = candidate_beta(model, c);
    if (b > 0.0) b_min = std::min(b_min, b);
  }
  const double scale = std::sqrt(a_max / b_min);
  std::vector<double> grid{0.0};
  for (int i = 0; i < 400; ++i) grid.push_back(scale * std::pow(10.0, -4.0 + 8.0 * i / 399.0));
  return grid;
}

MomentModel random_moment_model(InstanceRng& rng, int candidates) {
  MomentModel m;
  const int d = rng.integer(1, 3), pg = d + rng.integer(1, 3);
  m.lambda = Matrix(pg, d);
  for (int i = 0; i < pg; ++i)
    for (int j = 0; j < d; ++j) m.lambda(i, j) = rng.normal();
  m.omega_mat = Matrix(1, d);
  for (int j = 0; j < d; ++j) m.omega_mat(0, j) = rng.normal();
  std::vector<int> order(static_cast<std::size_t>(pg));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const int n_exp = rng.integer(1, pg - 1);
  for (int i = 0; i < n_exp; ++i) m.experimental_idx.push_back(order[static_cast<std::size_t>(i)]);
  const int kind = rng.integer(0, 2);
  m.norm = kind == 0 ? NormSpec::linf() : kind == 1 ? NormSpec::l1() : NormSpec::l2();
  for (int c = 0; c < candidates; ++c) {
    Matrix W = rng.random_spd(pg, 0.05, 20.0);
    m.candidates.push_back({"c" + std::to_string(c), W, rng.random_spd(pg, 0.1, 10.0), std::nullopt});
  }
  validate_moment_model(m);
  return m;
}

Outcome gmm_reduction() {
  InstanceRng rng(909);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto problem = random_problem(rng, {.min_dim = 1, .max_dim = 5, .correlated = true, .random_signs = true,
                                        .random_costs = true});
    const int kind = rng.integer(0, 3);
    if (kind == 1) problem.norm = NormSpec::l1();
    if (kind == 2) problem.norm = NormSpec::l2();
    if (kind == 3) {
      Vector k(problem.omega.size());
      for (Eigen::Index j = 0; j < k.size(); ++j) k[j] = rng.log_uniform(0.2, 5.0);
      problem.norm = NormSpec::weighted(k);
    }
    problem = validate_problem(problem);
    const auto oracles = compute_oracles(problem);
    const auto [x, gamma] = regdesign::testing::random_design(rng, problem);
    const auto core = regret(problem, x, gamma, oracles.alpha.value, oracles.beta.value);
    const auto emb = embed_shrinkage(problem, x, gamma);
    const double a = candidate_alpha(emb.model, emb.candidate);
    const double b = candidate_beta(emb.model, emb.candidate);
    const auto via = make_breakdown(a, oracles.alpha.value, b, oracles.beta.value);
    // beta can be exactly zero, so its error is measured against the bias with no experiment.
    const double beta_scale = std::max(core.beta, compute_beta(problem, {Vector::Zero(problem.omega.size())}));
    worst = std::max({worst, relative_error(a, core.alpha), std::abs(b - core.beta) / beta_scale,
                      relative_error(via.regret, core.regret)});
  }
  double worst_scan = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto model = random_moment_model(rng, 2);
    const auto grid = menu_B_grid(model);
    for (std::size_t c = 0; c < 2; ++c) {
      const double ac = candidate_alpha(model, model.candidates[c]), bc = candidate_beta(model, model.candidates[c]);
      double sup = 0.0;
      for (double B : grid) {
        double best = kInfinity;
        for (const auto& other : model.candidates)
          best = std::min(best, candidate_alpha(model, other) + B * B * candidate_beta(model, other));
        sup = std::max(sup, (ac + B * B * bc) / best);
      }
      worst_scan = std::max(worst_scan, relative_error(sup, regret_gmm(model, c).regret));
    }
  }
  return {worst <= 1e-8 && worst_scan <= 0.01,
          fmt("embedding max relative error %.3g (100 instances); B-grid check max relative error %.3g (50 models)",
              worst, worst_scan)};
}

std::vector<std::size_t> argmins(const std::vector<double>& values, double tol) {
  const double best = *std::min_element(values.begin(), values.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] <= best + tol * std::max(1.0, std::abs(best))) out.push_back(i);
  return out;
}

Outcome ci_corollary() {
  InstanceRng rng(1010);
  int mismatches = 0;
  for (int i = 0; i < 50; ++i) {
    const auto model = random_moment_model(rng, rng.integer(2, 5));
    Envelope env;
    env.omega_lower = model.omega_mat.row(0).transpose();
    env.omega_upper = env.omega_lower;
    std::vector<double> ci, gmm;
    for (std::size_t c = 0; c < model.candidates.size(); ++c) {
      ci.push_back(ci_regret(env, model, c).regret);
      gmm.push_back(regret_gmm(model, c).regret);
    }
    if (argmins(ci, 1e-9) != argmins(gmm, 1e-9)) ++mismatches;
  }
  return {mismatches == 0, fmt("%g of 50 instances have different argmin sets", mismatches)};
}

Outcome bounded_bias() {
  InstanceRng rng(1111);
  double worst_zero = 0.0, worst_two_point = 0.0;
  bool designs_match = true;
  for (int i = 0; i < 50; ++i) {
    const auto problem = random_problem(rng, {.correlated = true, .random_signs = true});
    const auto oracles = compute_oracles(problem);
    const auto at_zero = solve_bounded(problem, 0.0);
    worst_zero = std::max(worst_zero, relative_error(at_zero.breakdown.alpha, oracles.alpha.value));
    if (at_zero.x_star != oracles.alpha.x) designs_match = false;
    const double B = rng.log_uniform(0.01, 100.0) * std::sqrt(oracles.alpha.value / std::max(oracles.beta.value, 1e-12));
    const auto sol = solve_bounded(problem, B);
    const auto scan = sup_B_scan(problem, sol.x_star, sol.gamma_star, {0.0, B});
    worst_two_point = std::max(worst_two_point, relative_error(scan.sup, sol.t_star));
  }
  std::ostringstream detail;
  detail << "B=0 variance gap " << worst_zero << ", designs " << (designs_match ? "match" : "differ")
         << "; two-point regret max relative error " << worst_two_point;
  return {designs_match && worst_zero <= 1e-6 && worst_two_point <= 1e-6, detail.str()};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "B-scan supremum equals regret", 60.0, scan_matches_regret},
      {2, "B-curve quasi-convexity", 0.0, curve_quasi_convex},
      {3, "Neyman identities", 5.0, neyman_identities},
      {4, "two-parameter closed form", 30.0, two_parameter_sweep},
      {5, "GE arm choices", 0.0, ge_arm_choices},
      {6, "GE Neyman comparison", 0.0, ge_neyman_comparison},
      {7, "site selection", 0.0, site_selection},
      {8, "Monte-Carlo MSE", 60.0, monte_carlo},
      {9, "GMM reduction", 0.0, gmm_reduction},
      {10, "CI-length argmin", 0.0, ci_corollary},
      {11, "bounded-bias solver", 0.0, bounded_bias},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0.0 && secs > c.time_limit_s) {
      out.pass = false;
      out.detail += fmt(" [over time limit %.0f s]", c.time_limit_s);
    }
    if (!out.pass) ++failed;
    std::printf("%s criterion %d (%s): %s [%.2f s]\n", out.pass ? "PASS" : "FAIL", c.id, c.title, out.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
