#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>
#include <unistd.h>

#include "apps.hpp"
#include "ci_regret.hpp"
#include "gmm.hpp"
#include "solver.hpp"

namespace regdesign::io {

using Json = nlohmann::json;

inline constexpr const char* kProblemSchema = "regdesign.problem/1";
inline constexpr const char* kGeSchema = "regdesign.ge_calibration/1";
inline constexpr const char* kSiteSchema = "regdesign.site_table/1";
inline constexpr const char* kCiSchema = "regdesign.ci_problem/1";

[[noreturn]] inline void config_error(const std::string& field, const std::string& what) {
  fail(ErrorCode::ConfigError, "field '" + field + "': " + what);
}

// ---------------------------------------------------------------------------
// Reading

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::ConfigError, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void require_keys(const Json& j, const std::string& context, std::initializer_list<const char*> allowed,
                         std::initializer_list<const char*> required) {
  if (!j.is_object()) config_error(context, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) config_error(context.empty() ? key : context + "." + key, "unknown key");
  for (const char* key : required)
    if (!j.contains(key)) config_error(context.empty() ? key : context + "." + key, "missing");
}

inline void require_schema(const Json& j, const char* schema) {
  if (!j.contains("schema") || !j["schema"].is_string()) config_error("schema", "missing");
  if (j["schema"].get<std::string>() != schema)
    config_error("schema", "expected \"" + std::string(schema) + "\", got \"" + j["schema"].get<std::string>() + "\"");
}

inline double number(const Json& j, const std::string& field) {
  if (!j.is_number()) config_error(field, "expected a number");
  return j.get<double>();
}

inline Vector vector_of(const Json& j, const std::string& field) {
  if (!j.is_array()) config_error(field, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], field + "[" + std::to_string(i) + "]");
  return v;
}

/// Accepts nested rows or a flat row-major array of rows*cols numbers (when rows > 0).
inline Matrix matrix_of(const Json& j, const std::string& field, Eigen::Index rows = 0, Eigen::Index cols = 0) {
  if (!j.is_array()) config_error(field, "expected an array");
  if (!j.empty() && j[0].is_array()) {
    const auto r = static_cast<Eigen::Index>(j.size());
    const auto c = static_cast<Eigen::Index>(j[0].size());
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto& row = j[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) config_error(field, "rows have unequal length");
      for (Eigen::Index k = 0; k < c; ++k)
        m(i, k) = number(row[static_cast<std::size_t>(k)], field + "[" + std::to_string(i) + "][" + std::to_string(k) + "]");
    }
    return m;
  }
  if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(j.size()) != rows * cols)
    config_error(field, "flat matrix needs exactly " + std::to_string(rows * cols) + " entries");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k)
      m(i, k) = number(j[static_cast<std::size_t>(i * cols + k)], field);
  return m;
}

inline NormSpec norm_of(const Json& j, const std::string& field) {
  require_keys(j, field, {"kind", "weights"}, {"kind"});
  const std::string kind = j["kind"].is_string() ? j["kind"].get<std::string>() : "";
  if (kind == "linf") return NormSpec::linf();
  if (kind == "l1") return NormSpec::l1();
  if (kind == "l2") return NormSpec::l2();
  if (kind == "weighted") {
    if (!j.contains("weights")) config_error(field + ".weights", "missing for weighted norm");
    return NormSpec::weighted(vector_of(j["weights"], field + ".weights"));
  }
  config_error(field + ".kind", "expected linf, l1, l2 or weighted");
}

inline NormSpec parse_norm_name(const std::string& name) {
  if (name == "linf") return NormSpec::linf();
  if (name == "l1") return NormSpec::l1();
  if (name == "l2") return NormSpec::l2();
  config_error("norm", "expected linf, l1 or l2 (weighted norms need a config file)");
}

inline GammaPolicy parse_gamma_policy(const std::string& name) {
  if (name == "free") return GammaPolicy::Free;
  if (name == "experiment_only") return GammaPolicy::ExperimentOnly;
  config_error("gamma_policy", "expected free or experiment_only");
}

inline DesignProblem problem_from_json(const Json& j) {
  require_keys(j, "",
               {"schema", "omega", "theta_obs", "sigma_obs", "arms", "budget", "feasibility", "norm", "gamma_policy",
                "notes"},
               {"schema", "omega", "theta_obs", "sigma_obs", "arms", "budget", "feasibility"});
  require_schema(j, kProblemSchema);
  DesignProblem p;
  p.omega = vector_of(j["omega"], "omega");
  const auto dim = p.omega.size();
  p.theta_obs = vector_of(j["theta_obs"], "theta_obs");
  p.sigma_obs = matrix_of(j["sigma_obs"], "sigma_obs", dim, dim);
  if (!j["arms"].is_array()) config_error("arms", "expected an array");
  for (std::size_t i = 0; i < j["arms"].size(); ++i) {
    const std::string ctx = "arms[" + std::to_string(i) + "]";
    const auto& a = j["arms"][i];
    require_keys(a, ctx, {"name", "v2", "cost"}, {"name", "v2"});
    if (!a["name"].is_string()) config_error(ctx + ".name", "expected a string");
    ExperimentArm arm{a["name"].get<std::string>(), number(a["v2"], ctx + ".v2"),
                      a.contains("cost") ? number(a["cost"], ctx + ".cost") : 1.0};
    p.arms.push_back(arm);
  }
  p.budget = number(j["budget"], "budget");
  const auto& f = j["feasibility"];
  require_keys(f, "feasibility", {"mode", "k", "list"}, {"mode"});
  const std::string mode = f["mode"].is_string() ? f["mode"].get<std::string>() : "";
  if (mode == "at_most_k") {
    if (!f.contains("k") || !f["k"].is_number_integer() || f["k"].get<long>() < 1)
      config_error("feasibility.k", "expected a positive integer");
    p.feasibility = FeasibilitySet::at_most(f["k"].get<std::size_t>());
  } else if (mode == "list") {
    if (!f.contains("list") || !f["list"].is_array()) config_error("feasibility.list", "expected an array of 0/1 arrays");
    std::vector<Selection> list;
    for (const auto& row : f["list"]) {
      if (!row.is_array()) config_error("feasibility.list", "expected an array of 0/1 arrays");
      Selection x;
      for (const auto& v : row) {
        if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
          config_error("feasibility.list", "entries must be 0 or 1");
        x.push_back(static_cast<std::uint8_t>(v.get<int>()));
      }
      list.push_back(std::move(x));
    }
    p.feasibility = FeasibilitySet::explicit_list(std::move(list));
  } else if (mode == "all") {
    p.feasibility = FeasibilitySet::all();
  } else {
    config_error("feasibility.mode", "expected at_most_k, list or all");
  }
  p.norm = j.contains("norm") ? norm_of(j["norm"], "norm") : NormSpec::linf();
  if (j.contains("gamma_policy")) {
    if (!j["gamma_policy"].is_string()) config_error("gamma_policy", "expected a string");
    p.gamma_policy = parse_gamma_policy(j["gamma_policy"].get<std::string>());
  }
  return validate_problem(p);
}

inline GeCalibration ge_calibration_from_json(const Json& j) {
  require_keys(j, "", {"schema", "theta_obs", "sigma_obs", "y0", "d", "n_obs", "arm_names", "notes"},
               {"schema", "theta_obs", "sigma_obs", "y0", "d", "n_obs"});
  require_schema(j, kGeSchema);
  GeCalibration cal;
  cal.theta_obs = vector_of(j["theta_obs"], "theta_obs");
  if (cal.theta_obs.size() != 3) config_error("theta_obs", "expected three entries");
  cal.sigma_obs = matrix_of(j["sigma_obs"], "sigma_obs", 3, 3);
  cal.y0 = number(j["y0"], "y0");
  cal.d = number(j["d"], "d");
  cal.n_obs = number(j["n_obs"], "n_obs");
  if (j.contains("arm_names")) {
    if (!j["arm_names"].is_array() || j["arm_names"].size() != 3) config_error("arm_names", "expected three names");
    cal.arm_names = j["arm_names"].get<std::vector<std::string>>();
  }
  return cal;
}

inline SiteTable site_table_from_json(const Json& j) {
  require_keys(j, "", {"schema", "areas", "notes"}, {"schema", "areas"});
  require_schema(j, kSiteSchema);
  if (!j["areas"].is_array()) config_error("areas", "expected an array");
  SiteTable t;
  for (std::size_t i = 0; i < j["areas"].size(); ++i) {
    const std::string ctx = "areas[" + std::to_string(i) + "]";
    const auto& a = j["areas"][i];
    require_keys(a, ctx, {"name", "n1", "n0", "v_pre2", "mu_hat", "sigma2_hat", "omega"},
                 {"name", "n1", "n0", "v_pre2", "mu_hat", "sigma2_hat", "omega"});
    if (!a["name"].is_string()) config_error(ctx + ".name", "expected a string");
    t.areas.push_back({a["name"].get<std::string>(), number(a["n1"], ctx + ".n1"), number(a["n0"], ctx + ".n0"),
                       number(a["v_pre2"], ctx + ".v_pre2"), number(a["mu_hat"], ctx + ".mu_hat"),
                       number(a["sigma2_hat"], ctx + ".sigma2_hat"), number(a["omega"], ctx + ".omega")});
  }
  return normalize_site_table(t);
}

struct CiProblem {
  Envelope envelope;
  MomentModel model;
  Vector theta_hat;
};

inline CiProblem ci_problem_from_json(const Json& j) {
  require_keys(j, "",
               {"schema", "lambda", "omega_lower", "omega_upper", "eta", "experimental_idx", "norm", "candidates",
                "theta_hat", "notes"},
               {"schema", "lambda", "omega_lower", "omega_upper", "experimental_idx", "candidates"});
  require_schema(j, kCiSchema);
  CiProblem ci;
  ci.model.lambda = matrix_of(j["lambda"], "lambda");
  ci.envelope.omega_lower = vector_of(j["omega_lower"], "omega_lower");
  ci.envelope.omega_upper = vector_of(j["omega_upper"], "omega_upper");
  ci.envelope.eta = j.contains("eta") ? number(j["eta"], "eta") : 0.05;
  const auto d = ci.model.lambda.cols(), pg = ci.model.lambda.rows();
  if (ci.envelope.omega_lower.size() != d || ci.envelope.omega_upper.size() != d)
    config_error("omega_lower", "envelope length must equal the number of lambda columns");
  ci.model.omega_mat = Matrix(2, d);
  ci.model.omega_mat.row(0) = ci.envelope.omega_upper.transpose();
  ci.model.omega_mat.row(1) = ci.envelope.omega_lower.transpose();
  if (!j["experimental_idx"].is_array()) config_error("experimental_idx", "expected an array of indices");
  for (const auto& v : j["experimental_idx"]) {
    if (!v.is_number_integer() || v.get<long>() < 0 || v.get<long>() >= pg)
      config_error("experimental_idx", "indices must be integers in [0, rows of lambda)");
    ci.model.experimental_idx.push_back(v.get<Eigen::Index>());
  }
  ci.model.norm = j.contains("norm") ? norm_of(j["norm"], "norm") : NormSpec::linf();
  if (!j["candidates"].is_array()) config_error("candidates", "expected an array");
  for (std::size_t i = 0; i < j["candidates"].size(); ++i) {
    const std::string ctx = "candidates[" + std::to_string(i) + "]";
    const auto& c = j["candidates"][i];
    require_keys(c, ctx, {"name", "W", "sigma"}, {"name", "W", "sigma"});
    if (!c["name"].is_string()) config_error(ctx + ".name", "expected a string");
    ci.model.candidates.push_back({c["name"].get<std::string>(), matrix_of(c["W"], ctx + ".W", pg, pg),
                                   matrix_of(c["sigma"], ctx + ".sigma", pg, pg), std::nullopt});
  }
  ci.theta_hat = j.contains("theta_hat") ? vector_of(j["theta_hat"], "theta_hat") : Vector::Zero(d);
  if (ci.theta_hat.size() != d) config_error("theta_hat", "length must equal the number of lambda columns");
  validate_moment_model(ci.model);
  validate_envelope(ci.envelope);
  return ci;
}

// ---------------------------------------------------------------------------
// Writing

/// Shortest round-trip-safe rendering is not used on purpose: 17 significant digits, '.' decimal, no locale.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return kInfinity;
  if (s == "-inf") return -kInfinity;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(ErrorCode::ConfigError, "bad number '" + s + "'");
  return v;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) fail(ErrorCode::InvalidArgument, "CSV row width differs from header");
    rows_.push_back(std::move(row));
  }

  std::string str() const {
    std::string out;
    auto emit = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + csv_field(r[i]);
      out += '\n';
    };
    emit(header_);
    for (const auto& r : rows_) emit(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes to a temporary sibling and renames it over the target.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + tmp + "'");
    out << content;
    out.flush();
    if (!out) fail(ErrorCode::IoError, "write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail(ErrorCode::IoError, "cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/**
 * One row per arm: arm,name,selected,gamma,n,t_star,alpha,alpha_star,beta,beta_star,regret,binding.
 * Summary columns repeat on every row.
 */
inline std::string solution_csv(const DesignProblem& problem, const DesignSolution& sol) {
  CsvTable t({"arm", "name", "selected", "gamma", "n", "t_star", "alpha", "alpha_star", "beta", "beta_star", "regret",
              "binding"});
  const auto& b = sol.breakdown;
  for (std::size_t j = 0; j < sol.x_star.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    t.add({std::to_string(j + 1), problem.arms[j].name, std::to_string(sol.x_star[j]), format_double(sol.gamma_star[jj]),
           format_double(sol.n_star[jj]), format_double(sol.t_star), format_double(b.alpha), format_double(b.alpha_star),
           format_double(b.beta), format_double(b.beta_star), format_double(b.regret), to_string(b.binding)});
  }
  return t.str();
}

inline Binding parse_binding(const std::string& s) {
  if (s == "variance") return Binding::Variance;
  if (s == "bias") return Binding::Bias;
  if (s == "both") return Binding::Both;
  fail(ErrorCode::ConfigError, "bad binding '" + s + "'");
}

inline DesignSolution solution_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ConfigError, "empty solution CSV");
  const auto header = split_csv_line(line);
  if (header.size() != 12 || header[0] != "arm" || header[11] != "binding")
    fail(ErrorCode::ConfigError, "unexpected solution CSV header");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split_csv_line(line));
  if (rows.empty()) fail(ErrorCode::ConfigError, "solution CSV has no arms");
  const auto p = static_cast<Eigen::Index>(rows.size());
  DesignSolution sol;
  sol.gamma_star.resize(p);
  sol.n_star.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& r = rows[static_cast<std::size_t>(j)];
    if (r.size() != 12) fail(ErrorCode::ConfigError, "solution CSV row has wrong width");
    sol.x_star.push_back(r[2] == "1" ? 1 : 0);
    sol.gamma_star[j] = parse_double(r[3]);
    sol.n_star[j] = parse_double(r[4]);
  }
  const auto& r = rows.front();
  sol.t_star = parse_double(r[5]);
  sol.breakdown = {parse_double(r[6]), parse_double(r[7]), parse_double(r[8]), parse_double(r[9]),
                   parse_double(r[10]), parse_binding(r[11])};
  return sol;
}

inline std::string selection_string(const Selection& x) {
  std::string s;
  for (auto v : x) s += v ? '1' : '0';
  return s;
}

/**
 * Columns: n_tot, then for the optimal design selected_<arm>, gamma_<arm>, n_<arm>
 * per arm, then alpha, beta, alpha_star, beta_star, regret, binding; the same
 * block prefixed neyman_ follows.
 */
inline std::string sweep_csv(const DesignProblem& shape, const std::vector<SweepRow>& rows) {
  std::vector<std::string> header{"n_tot"};
  for (const std::string prefix : {"", "neyman_"}) {
    for (const auto& arm : shape.arms) {
      header.push_back(prefix + "selected_" + arm.name);
      header.push_back(prefix + "gamma_" + arm.name);
      header.push_back(prefix + "n_" + arm.name);
    }
    for (const char* col : {"alpha", "beta", "alpha_star", "beta_star", "regret", "binding"})
      header.push_back(prefix + col);
  }
  CsvTable t(header);
  for (const auto& row : rows) {
    std::vector<std::string> cells{format_double(row.n_tot)};
    for (const DesignSolution* sol : {&row.optimal, &row.neyman}) {
      for (std::size_t j = 0; j < sol->x_star.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        cells.push_back(std::to_string(sol->x_star[j]));
        cells.push_back(format_double(sol->gamma_star[jj]));
        cells.push_back(format_double(sol->n_star[jj]));
      }
      const auto& b = sol->breakdown;
      for (double v : {b.alpha, b.beta, b.alpha_star, b.beta_star, b.regret}) cells.push_back(format_double(v));
      cells.push_back(to_string(b.binding));
    }
    t.add(std::move(cells));
  }
  return t.str();
}

/// Human-readable report of one solution.
inline std::string solution_report(const DesignProblem& problem, const DesignSolution& sol) {
  std::ostringstream out;
  out.precision(6);
  out << "selected arms:";
  bool any = false;
  for (std::size_t j = 0; j < sol.x_star.size(); ++j) {
    if (!sol.x_star[j]) continue;
    out << ' ' << problem.arms[j].name;
    any = true;
  }
  if (!any) out << " (none: observational estimate only)";
  out << "\n";
  for (std::size_t j = 0; j < sol.x_star.size(); ++j) {
    if (!sol.x_star[j]) continue;
    const auto jj = static_cast<Eigen::Index>(j);
    out << "  " << problem.arms[j].name << ": gamma = " << sol.gamma_star[jj] << ", n = " << sol.n_star[jj] << "\n";
  }
  const auto& b = sol.breakdown;
  out << "regret t* = " << sol.t_star << " (binding: " << to_string(b.binding) << ")\n";
  out << "alpha = " << b.alpha << ", alpha* = " << b.alpha_star << ", ratio = " << b.variance_ratio() << "\n";
  out << "beta = " << b.beta << ", beta* = " << b.beta_star << ", ratio = " << b.bias_ratio() << "\n";
  return out.str();
}

}  // namespace regdesign::io
