#include <gtest/gtest.h>

#include <clocale>
#include <filesystem>

#include <regdesign/io.hpp>

#include "reference_instances.hpp"

using namespace regdesign;
namespace fs = std::filesystem;

namespace {

const std::string kData = REGDESIGN_DATA_DIR;

io::Json minimal_problem() {
  return io::Json::parse(R"({
    "schema": "regdesign.problem/1",
    "omega": [1.0, -2.0],
    "theta_obs": [0.0, 0.5],
    "sigma_obs": [[1.0, 0.2], [0.2, 2.0]],
    "arms": [{"name": "a", "v2": 1.0, "cost": 1.0}, {"name": "b", "v2": 3.0, "cost": 2.0}],
    "budget": 10,
    "feasibility": {"mode": "at_most_k", "k": 1}
  })");
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;  // unreachable in passing tests
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("regdesign_io_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ProblemJson, MinimalDocumentUsesDefaults) {
  const auto p = io::problem_from_json(minimal_problem());
  EXPECT_EQ(p.dim(), 2u);
  EXPECT_EQ(p.norm.kind, NormSpec::Kind::Linf);
  EXPECT_EQ(p.gamma_policy, GammaPolicy::Free);
  EXPECT_EQ(p.feasibility.mode, FeasibilitySet::Mode::AtMostK);
  EXPECT_EQ(p.arms[1].cost, 2.0);
  EXPECT_DOUBLE_EQ(p.sigma_obs(0, 1), 0.2);
}

TEST(ProblemJson, UnknownKeyNamesTheField) {
  auto j = minimal_problem();
  j["arms"][1]["colour"] = "red";
  try {
    io::problem_from_json(j);
    FAIL() << "accepted an unknown key";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos) << e.what();
  }
}

TEST(ProblemJson, SchemaAndTypeErrors) {
  auto j = minimal_problem();
  j["schema"] = "regdesign.problem/2";
  EXPECT_EQ(code_of([&] { io::problem_from_json(j); }), ErrorCode::ConfigError);
  j = minimal_problem();
  j.erase("budget");
  EXPECT_EQ(code_of([&] { io::problem_from_json(j); }), ErrorCode::ConfigError);
  j = minimal_problem();
  j["omega"] = {1.0, "two"};
  EXPECT_EQ(code_of([&] { io::problem_from_json(j); }), ErrorCode::ConfigError);
  j = minimal_problem();
  j["omega"] = {0.0, 0.0};
  EXPECT_EQ(code_of([&] { io::problem_from_json(j); }), ErrorCode::ZeroSensitivity);
  j = minimal_problem();
  j["norm"] = {{"kind", "l3"}};
  EXPECT_EQ(code_of([&] { io::problem_from_json(j); }), ErrorCode::ConfigError);
}

TEST(ProblemJson, FeasibilityModes) {
  auto j = minimal_problem();
  j["feasibility"] = {{"mode", "list"}, {"list", {{1, 0}, {1, 1}}}};
  EXPECT_EQ(feasible_designs(io::problem_from_json(j)).size(), 2u);
  j["feasibility"] = {{"mode", "all"}};
  EXPECT_EQ(feasible_designs(io::problem_from_json(j)).size(), 4u);
}

TEST(BundledData, EveryFileParses) {
  for (const auto& entry : fs::directory_iterator(kData + "/instances"))
    EXPECT_NO_THROW(io::problem_from_json(io::read_json_file(entry.path()))) << entry.path();
  const auto cal = io::ge_calibration_from_json(io::read_json_file(kData + "/ge_calibration.json"));
  const auto builtin = default_ge_calibration();
  EXPECT_TRUE(cal.sigma_obs.isApprox(builtin.sigma_obs, 1e-12));
  EXPECT_NEAR(cal.d, builtin.d, 1e-15);
  const auto sites = io::site_table_from_json(io::read_json_file(kData + "/karnataka_areas.json"));
  ASSERT_EQ(sites.areas.size(), 4u);
  EXPECT_NEAR(sites.omega_sum_before_normalization, 0.998, 1e-12);
  const auto ci = io::ci_problem_from_json(io::read_json_file(kData + "/ci_example.json"));
  EXPECT_EQ(ci.model.candidates.size(), 3u);
  EXPECT_EQ(ci.model.omega_mat.rows(), 2);
}

TEST(BundledData, MissingFileIsAnIoError) {
  EXPECT_EQ(code_of([] { io::read_json_file("/nonexistent/problem.json"); }), ErrorCode::IoError);
}

TEST(FormatDouble, SeventeenSignificantDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.0243091891891893, 6.02214076e23, 4.9e-324, 1e300}) {
    const auto s = io::format_double(v);
    EXPECT_EQ(io::parse_double(s), v) << s;
  }
  EXPECT_EQ(io::format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(io::format_double(1.0), "1");
  EXPECT_EQ(io::format_double(kInfinity), "inf");
  EXPECT_EQ(io::format_double(-kInfinity), "-inf");
  EXPECT_EQ(io::format_double(std::nan("")), "nan");
  EXPECT_THROW(io::parse_double("1.5x"), Error);
}

TEST(FormatDouble, IgnoresTheProcessLocale) {
  const char* set = std::setlocale(LC_NUMERIC, "de_DE.UTF-8");
  EXPECT_EQ(io::format_double(1.5), "1.5");
  EXPECT_EQ(io::parse_double("2.25"), 2.25);
  if (set) std::setlocale(LC_NUMERIC, "C");
}

TEST(Csv, QuotingRoundTrips) {
  const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", ""};
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + io::csv_field(fields[i]);
  EXPECT_EQ(io::split_csv_line(line), fields);
  io::CsvTable t({"a", "b"});
  EXPECT_THROW(t.add({"1"}), Error);
  t.add({"1", "x,y"});
  EXPECT_EQ(t.str(), "a,b\n1,\"x,y\"\n");
}

TEST(Csv, SolutionRoundTrip) {
  const auto p = regdesign::testing::load_instance("p3_linf_k2_corr");
  const auto sol = solve(p);
  const auto back = io::solution_from_csv(io::solution_csv(p, sol));
  EXPECT_EQ(back.x_star, sol.x_star);
  EXPECT_TRUE(back.gamma_star.isApprox(sol.gamma_star, 1e-12));
  EXPECT_TRUE(back.n_star.isApprox(sol.n_star, 1e-12));
  EXPECT_NEAR(back.t_star, sol.t_star, 1e-12 * sol.t_star);
  EXPECT_EQ(back.breakdown.binding, sol.breakdown.binding);
  EXPECT_NEAR(back.breakdown.beta_star, sol.breakdown.beta_star, 1e-12 * sol.breakdown.beta_star);
  EXPECT_THROW(io::solution_from_csv("nope\n"), Error);
}

TEST(Csv, SweepHeaderHasBothBlocks) {
  const auto cal = default_ge_calibration();
  const auto shape = build_ge_problem(cal, 500.0, 2);
  const auto rows = sweep([&](double n) { return build_ge_problem(cal, n, 2); }, {500.0});
  const auto text = io::sweep_csv(shape, rows);
  const auto header = io::split_csv_line(text.substr(0, text.find('\n')));
  EXPECT_EQ(header.size(), 1u + 2u * (3u * 3u + 6u));
  EXPECT_EQ(header[1], "selected_UCT");
  EXPECT_EQ(header[16], "neyman_selected_UCT");
}

TEST(AtomicWrite, ReplacesContentAndLeavesNoTemporaries) {
  const auto path = scratch("out.csv");
  io::atomic_write(path, "first\n");
  io::atomic_write(path, "second\n");
  EXPECT_EQ(io::read_text_file(path), "second\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(path.parent_path())) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(code_of([] { io::atomic_write("/nonexistent/dir/out.csv", "x"); }), ErrorCode::IoError);
  fs::remove_all(path.parent_path());
}
