// regdesign command-line front end.
//
// Exit codes: 0 success, 2 configuration or input error, 3 solver infeasibility,
// 4 validation failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <regdesign/io.hpp>
#include <regdesign/regdesign.hpp>

namespace fs = std::filesystem;
using namespace regdesign;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitValidation = 4;

struct Options {
  std::string input;
  std::string output;
  std::optional<double> budget;
  std::optional<std::size_t> max_arms;
  std::optional<std::string> norm;
  std::optional<std::string> gamma_policy;
  std::uint64_t seed = 20240101;
  std::uint64_t reps = 100000;
  std::vector<double> bias_bounds;
  std::string grid;
  unsigned threads = default_thread_count();
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Infeasible:
    case ErrorCode::AllInfeasible:
    case ErrorCode::NoActiveArm:
    case ErrorCode::NonConvergence:
      return kExitInfeasible;
    default:
      return kExitConfig;
  }
}

fs::path data_dir() {
  if (const char* env = std::getenv("REGDESIGN_DATA")) return env;
#ifdef REGDESIGN_DATA_DIR
  return REGDESIGN_DATA_DIR;
#else
  return "data";
#endif
}

void emit(const Options& opt, const std::string& csv) {
  if (opt.output.empty()) {
    std::cout << csv;
  } else {
    io::atomic_write(opt.output, csv);
  }
}

// Human-readable summaries go to stdout when the CSV goes to a file, else to stderr.
std::ostream& report(const Options& opt) { return opt.output.empty() ? std::cerr : std::cout; }

// "lo:hi:step" or a comma-separated list.
std::vector<double> parse_grid(const std::string& text, std::vector<double> fallback) {
  if (text.empty()) return fallback;
  std::vector<double> out;
  auto number = [&](const std::string& s) {
    try {
      return io::parse_double(s);
    } catch (const Error&) {
      io::config_error("grid", "'" + s + "' is not a number");
    }
  };
  if (std::count(text.begin(), text.end(), ':') == 2) {
    const auto a = text.find(':'), b = text.find(':', a + 1);
    const double lo = number(text.substr(0, a)), hi = number(text.substr(a + 1, b - a - 1)),
                 step = number(text.substr(b + 1));
    if (!(step > 0.0) || !(hi >= lo)) io::config_error("grid", "expected lo:hi:step with step > 0 and hi >= lo");
    const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
    if (count > 100000) io::config_error("grid", "more than 100000 points");
    for (long i = 0; i < count; ++i) out.push_back(lo + step * static_cast<double>(i));
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(number(item));
  }
  if (out.empty() || !std::is_sorted(out.begin(), out.end()) || !(out.front() > 0.0))
    io::config_error("grid", "values must be positive and ascending");
  return out;
}

DesignProblem apply_overrides(DesignProblem p, const Options& opt) {
  if (opt.budget) p.budget = *opt.budget;
  if (opt.max_arms) p.feasibility = FeasibilitySet::at_most(*opt.max_arms);
  if (opt.norm) p.norm = io::parse_norm_name(*opt.norm);
  if (opt.gamma_policy) p.gamma_policy = io::parse_gamma_policy(*opt.gamma_policy);
  return validate_problem(p);
}

// Accepts a problem document or one of the application documents, which are
// turned into problems at --budget (default 1000 and 52) with --max-arms (default 1).
DesignProblem load_problem(const Options& opt) {
  if (opt.input.empty()) io::config_error("input", "a problem file is required");
  const auto j = io::read_json_file(opt.input);
  const std::string schema = j.is_object() && j.contains("schema") && j["schema"].is_string() ? j["schema"].get<std::string>() : "";
  const std::size_t k = opt.max_arms.value_or(1);
  DesignProblem p;
  if (schema == io::kGeSchema) {
    p = build_ge_problem(io::ge_calibration_from_json(j), opt.budget.value_or(1000.0), k);
  } else if (schema == io::kSiteSchema) {
    p = build_site_problem(io::site_table_from_json(j), opt.budget.value_or(52.0), k);
  } else {
    p = io::problem_from_json(j);
  }
  return apply_overrides(p, opt);
}

SolverOptions solver_options(const Options& opt) {
  SolverOptions s;
  s.threads = opt.threads;
  return s;
}

int cmd_solve(const Options& opt) {
  const auto problem = load_problem(opt);
  const auto sopt = solver_options(opt);
  if (opt.bias_bounds.size() > 1) io::config_error("bias-bound", "solve accepts a single bias bound");
  const auto sol = opt.bias_bounds.empty() ? solve(problem, sopt) : solve_bounded(problem, opt.bias_bounds[0], sopt);
  report(opt) << io::solution_report(problem, sol);
  emit(opt, io::solution_csv(problem, sol));
  return 0;
}

int cmd_oracles(const Options& opt) {
  const auto problem = load_problem(opt);
  const auto oracles = compute_oracles(problem);
  std::vector<std::string> header{"oracle", "value", "design"};
  for (const auto& arm : problem.arms) header.push_back("gamma_" + arm.name);
  io::CsvTable t(header);
  std::vector<std::string> a{"alpha_star", io::format_double(oracles.alpha.value), io::selection_string(oracles.alpha.x)};
  for (Eigen::Index j = 0; j < oracles.alpha.gamma.size(); ++j) a.push_back(io::format_double(oracles.alpha.gamma[j]));
  std::vector<std::string> b{"beta_star", io::format_double(oracles.beta.value), io::selection_string(oracles.beta.x)};
  for (auto v : oracles.beta.x) b.push_back(v ? "1" : "0");
  t.add(a);
  t.add(b);
  emit(opt, t.str());
  return 0;
}

int cmd_sweep(const Options& opt) {
  const auto base = load_problem(opt);
  const auto grid = parse_grid(opt.grid, {base.budget});
  const auto rows = sweep(
      [&](double n) {
        DesignProblem p = base;
        p.budget = n;
        return validate_problem(p);
      },
      grid, opt.threads);
  emit(opt, io::sweep_csv(base, rows));
  return 0;
}

int cmd_ci(const Options& opt) {
  if (opt.input.empty()) io::config_error("input", "a ci_problem file is required");
  const auto ci = io::ci_problem_from_json(io::read_json_file(opt.input));
  const std::vector<double> bounds = opt.bias_bounds.empty() ? std::vector<double>{0.0} : opt.bias_bounds;
  io::CsvTable t({"candidate", "A", "C", "A_star", "C_star", "regret", "binding", "B", "lower", "upper"});
  for (std::size_t c = 0; c < ci.model.candidates.size(); ++c) {
    const auto r = ci_regret(ci.envelope, ci.model, c);
    const auto est = estimator_pieces(ci.model, c);
    for (double B : bounds) {
      const auto iv = worst_case_interval(ci.envelope, est, ci.theta_hat, B);
      t.add({ci.model.candidates[c].name, io::format_double(r.alpha), io::format_double(r.beta),
             io::format_double(r.alpha_star), io::format_double(r.beta_star), io::format_double(r.regret),
             to_string(r.binding), io::format_double(B), io::format_double(iv.lower), io::format_double(iv.upper)});
    }
  }
  emit(opt, t.str());
  return 0;
}

int cmd_simulate(const Options& opt) {
  const auto problem = load_problem(opt);
  const auto sol = solve(problem, solver_options(opt));
  const double alpha = sol.breakdown.alpha, beta = sol.breakdown.beta;
  std::vector<double> bounds = opt.bias_bounds;
  if (bounds.empty()) bounds.push_back(beta > 0.0 ? std::sqrt(alpha / beta) : 1.0);
  io::CsvTable t({"scenario", "B", "reps", "seed", "empirical_mse", "std_error", "theoretical_mse", "mean_error",
                  "mean_error_se", "theoretical_bias"});
  auto add = [&](const std::string& name, double B, const McReport& r) {
    t.add({name, io::format_double(B), std::to_string(r.reps), std::to_string(r.seed), io::format_double(r.empirical_mse),
           io::format_double(r.std_error), io::format_double(r.theoretical_mse), io::format_double(r.mean_error),
           io::format_double(r.mean_error_se), io::format_double(r.theoretical_bias)});
  };
  const Vector zero = Vector::Zero(problem.omega.size());
  add("unbiased", 0.0, monte_carlo_mse(problem, sol.x_star, sol.gamma_star, zero, opt.reps, opt.seed, opt.threads));
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const Vector b = worst_case_bias(problem, sol.x_star, sol.gamma_star, bounds[i]);
    add("worst_case_bias", bounds[i],
        monte_carlo_mse(problem, sol.x_star, sol.gamma_star, b, opt.reps, derive_seed(opt.seed, i + 1), opt.threads));
  }
  emit(opt, t.str());
  return 0;
}

// Sweep CSV for k = 1 and k = 2 stacked, with a leading max_arms column.
std::string stacked_sweeps(const DesignProblem& shape, const std::vector<std::pair<std::size_t, std::vector<SweepRow>>>& runs) {
  std::string out;
  bool first = true;
  for (const auto& [k, rows] : runs) {
    std::istringstream in(io::sweep_csv(shape, rows));
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        if (first) out += "max_arms," + line + "\n";
        header = false;
        continue;
      }
      out += std::to_string(k) + "," + line + "\n";
    }
    first = false;
  }
  return out;
}

std::string arm_list(const DesignProblem& p, const Selection& x) {
  std::string s;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j]) s += (s.empty() ? "" : "+") + p.arms[j].name;
  return s.empty() ? "none" : s;
}

int cmd_replicate_ge(const Options& opt) {
  const auto cal = io::ge_calibration_from_json(
      io::read_json_file(opt.input.empty() ? data_dir() / "ge_calibration.json" : fs::path(opt.input)));
  const auto grid = parse_grid(opt.grid, [] {
    std::vector<double> g;
    for (int n = 100; n <= 2000; n += 50) g.push_back(n);
    return g;
  }());
  std::vector<std::pair<std::size_t, std::vector<SweepRow>>> runs;
  for (std::size_t k : {std::size_t{1}, std::size_t{2}})
    runs.emplace_back(k, sweep([&](double n) { return build_ge_problem(cal, n, k); }, grid, opt.threads));
  const auto shape = build_ge_problem(cal, grid.front(), 1);
  emit(opt, stacked_sweeps(shape, runs));
  report(opt) << "sensitivity omega = (" << shape.omega[0] << ", " << shape.omega[1] << ", " << shape.omega[2] << ")\n";
  const double n_ref = opt.budget.value_or(1000.0);
  for (std::size_t k : {std::size_t{1}, std::size_t{2}}) {
    const auto p = build_ge_problem(cal, n_ref, k);
    const auto oracles = compute_oracles(p);
    const auto best = solve(p, oracles, solver_options(opt));
    const auto ney = neyman_design(p, oracles);
    report(opt) << "n_tot = " << n_ref << ", up to " << k << " arm(s): " << arm_list(p, best.x_star)
              << "; Neyman/optimal bias " << ney.breakdown.beta / best.breakdown.beta << ", optimal/Neyman variance "
              << best.breakdown.alpha / ney.breakdown.alpha << "\n";
  }
  return 0;
}

int cmd_replicate_sites(const Options& opt) {
  const auto table = io::site_table_from_json(
      io::read_json_file(opt.input.empty() ? data_dir() / "karnataka_areas.json" : fs::path(opt.input)));
  if (std::abs(table.omega_sum_before_normalization - 1.0) > 0.0)
    report(opt) << "population shares summed to " << table.omega_sum_before_normalization << "; rescaled to 1\n";
  const auto grid = parse_grid(opt.grid, [] {
    std::vector<double> g;
    for (int n = 20; n <= 100; n += 4) g.push_back(n);
    return g;
  }());
  std::vector<std::pair<std::size_t, std::vector<SweepRow>>> runs;
  for (std::size_t k : {std::size_t{1}, std::size_t{2}})
    runs.emplace_back(k, sweep([&](double n) { return build_site_problem(table, n, k); }, grid, opt.threads));
  emit(opt, stacked_sweeps(build_site_problem(table, grid.front(), 1), runs));
  const double n_ref = opt.budget.value_or(52.0);
  for (std::size_t k : {std::size_t{1}, std::size_t{2}}) {
    const auto p = build_site_problem(table, n_ref, k);
    const auto sol = solve(p, solver_options(opt));
    report(opt) << "n1_total = " << n_ref << ", up to " << k << " area(s):\n" << io::solution_report(p, sol);
  }
  return 0;
}

struct InstanceCheck {
  std::string name;
  double t_star = 0.0;
  double grid_t = kInfinity;
  double scan_sup = 0.0;
  double curve_excess = 0.0;
  double embed_error = 0.0;
  bool pass = true;
  std::string note;
};

InstanceCheck check_instance(const std::string& name, const DesignProblem& problem, const SolverOptions& sopt) {
  InstanceCheck c;
  c.name = name;
  const auto oracles = compute_oracles(problem, sopt.oracle);
  const auto sol = solve(problem, oracles, sopt);
  c.t_star = sol.t_star;

  // Coarse grid: the solver must not be beaten, and should be close to the grid optimum.
  if (problem.dim() <= 4) {
    const int resolution = problem.dim() <= 2 ? 401 : problem.dim() == 3 ? 101 : 51;
    const auto grid = grid_oracle(problem, oracles, resolution);
    c.grid_t = grid.t;
    const double slack = problem.dim() <= 3 ? 0.02 : 0.05;
    if (grid.t < sol.t_star * (1.0 - 1e-9)) {
      c.pass = false;
      c.note += "grid beats solver; ";
    }
    if (grid.t > sol.t_star * (1.0 + slack)) {
      c.pass = false;
      c.note += "solver far below grid; ";
    }
  }

  const auto scan = sup_B_scan(problem, sol.x_star, sol.gamma_star, default_B_grid(problem), sopt);
  c.scan_sup = scan.sup;
  if (std::abs(scan.sup - sol.t_star) > 0.01 * sol.t_star) {
    c.pass = false;
    c.note += "B-scan supremum differs from regret; ";
  }
  const double ends = std::max(scan.curve.front(), scan.curve.back());
  c.curve_excess = -kInfinity;
  for (std::size_t k = 1; k + 1 < scan.curve.size(); ++k) c.curve_excess = std::max(c.curve_excess, scan.curve[k] - ends);
  if (c.curve_excess > 1e-9) {
    c.pass = false;
    c.note += "B-curve not quasi-convex; ";
  }

  const auto emb = embed_shrinkage(problem, sol.x_star, sol.gamma_star);
  const double a = candidate_alpha(emb.model, emb.candidate), b = candidate_beta(emb.model, emb.candidate);
  const double beta_scale = std::max(sol.breakdown.beta, compute_beta(problem, {Vector::Zero(problem.omega.size())}));
  c.embed_error = std::max(std::abs(a - sol.breakdown.alpha) / sol.breakdown.alpha, std::abs(b - sol.breakdown.beta) / beta_scale);
  if (c.embed_error > 1e-8) {
    c.pass = false;
    c.note += "GMM embedding mismatch; ";
  }
  return c;
}

int cmd_validate(const Options& opt) {
  const fs::path dir = opt.input.empty() ? data_dir() / "instances" : fs::path(opt.input);
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
  } else if (fs::is_regular_file(dir)) {
    files.push_back(dir);
  } else {
    io::config_error("input", "'" + dir.string() + "' is neither a file nor a directory");
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) io::config_error("input", "no .json instances in '" + dir.string() + "'");

  io::CsvTable t({"instance", "t_star", "grid_t", "scan_sup", "curve_excess", "embed_error", "status", "note"});
  int failed = 0;
  const auto sopt = solver_options(opt);
  for (const auto& f : files) {
    const auto problem = apply_overrides(io::problem_from_json(io::read_json_file(f)), opt);
    const auto c = check_instance(f.stem().string(), problem, sopt);
    if (!c.pass) ++failed;
    t.add({c.name, io::format_double(c.t_star), io::format_double(c.grid_t), io::format_double(c.scan_sup),
           io::format_double(c.curve_excess), io::format_double(c.embed_error), c.pass ? "pass" : "fail", c.note});
  }
  emit(opt, t.str());
  report(opt) << files.size() - static_cast<std::size_t>(failed) << " of " << files.size()
            << " instances passed (grid oracle, B-scan equality, quasi-convexity, GMM embedding)\n";
  return failed == 0 ? 0 : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regret-optimal experimental design"};
  app.require_subcommand(1);
  Options opt;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const std::vector<Command> commands{
      {"solve", "regret-optimal design for a problem file", cmd_solve},
      {"oracles", "variance and bias oracles with their designs", cmd_oracles},
      {"sweep", "optimal and Neyman designs over a budget grid", cmd_sweep},
      {"ci", "interval-length regret and worst-case intervals", cmd_ci},
      {"simulate", "Monte-Carlo MSE of the optimal design", cmd_simulate},
      {"replicate-ge", "general-equilibrium cash-transfer application", cmd_replicate_ge},
      {"replicate-sites", "site-selection application", cmd_replicate_sites},
      {"validate", "oracle and equality checks on an instance corpus", cmd_validate},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--input,-i", opt.input, "input file or directory");
    sub->add_option("--output,-o", opt.output, "output CSV path (stdout if omitted)");
    sub->add_option("--budget", opt.budget, "total budget override");
    sub->add_option("--max-arms", opt.max_arms, "feasibility override: at most this many arms")->check(CLI::PositiveNumber);
    sub->add_option("--norm", opt.norm, "bias norm override")->check(CLI::IsMember({"linf", "l1", "l2"}));
    sub->add_option("--gamma-policy", opt.gamma_policy, "shrinkage policy override")
        ->check(CLI::IsMember({"free", "experiment_only"}));
    sub->add_option("--seed", opt.seed, "random seed");
    sub->add_option("--reps", opt.reps, "Monte-Carlo replications");
    sub->add_option("--bias-bound", opt.bias_bounds, "bias bound(s) B");
    sub->add_option("--grid", opt.grid, "budget grid: lo:hi:step or comma list");
    sub->add_option("--threads", opt.threads, "worker threads (default from REGDESIGN_THREADS)")
        ->check(CLI::PositiveNumber);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    for (const auto& [sub, cmd] : subs)
      if (sub->parsed()) return cmd->run(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
