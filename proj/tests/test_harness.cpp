#include <srmpc/harness/run.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace srmpc;
using namespace srmpc::harness;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("srmpc_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

Config parse(const std::string& text) {
  std::istringstream is(text);
  return Config::parse(is);
}

Config short_tube() { return parse("tube.epochs = 3\ntube.N = 20\ntube.prior_samples = 100\n"); }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Io;
}

/// Rows of one CSV file split into blank-line separated blocks, header dropped.
std::vector<std::vector<std::string>> blocks(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<std::string>> out(1);
  while (std::getline(is, line)) {
    if (line.empty()) {
      if (!out.back().empty()) out.emplace_back();
      continue;
    }
    out.back().push_back(line);
  }
  if (out.back().empty()) out.pop_back();
  return out;
}

std::string xy_of(const std::string& row) {
  // Last two comma-separated fields.
  const auto b = row.rfind(',', row.rfind(',') - 1);
  return row.substr(b + 1);
}

}  // namespace

TEST(Config, ParsesValuesCommentsAndVectors) {
  const auto c = parse("# header\n  a = 1.5  # trailing\nn=3\nflag = yes\nv = 1, -2,3.5\nname = tube\n\n");
  EXPECT_DOUBLE_EQ(c.get("a", 0.0), 1.5);
  EXPECT_EQ(c.get("n", 0), 3);
  EXPECT_TRUE(c.get("flag", false));
  EXPECT_EQ(c.get("v", Vec()), Eigen::Vector3d(1, -2, 3.5));
  EXPECT_EQ(c.get("name", std::string()), "tube");
  EXPECT_DOUBLE_EQ(c.get("missing", 7.0), 7.0);
  EXPECT_FALSE(c.has("missing"));
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_EQ(code_of([] { parse("novalue\n"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse(" = 3\n"); }), ErrorCode::InvalidArgument);
  const auto c = parse("x = 1.5\nb = maybe\ny = 2abc\n");
  EXPECT_EQ(code_of([&] { c.get("x", 0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { c.get("b", true); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { c.get("y", 0.0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { Config::load("/nonexistent/srmpc.cfg"); }), ErrorCode::Io);
}

TEST(Config, ExperimentKeysReachTheConfiguration) {
  const auto t = TubeExperimentConfig::from(short_tube(), safety::GateMode::Backtracking, 4);
  EXPECT_EQ(t.epochs, 3);
  EXPECT_EQ(t.N, 20);
  const auto s = ScalarExperimentConfig::from(parse("scalar.steps = 12\n"), safety::GateMode::Backtracking, 1);
  EXPECT_EQ(s.steps, 12);
}

TEST(Run, GateAndExperimentNames) {
  EXPECT_EQ(parse_gate("backtracking"), safety::GateMode::Backtracking);
  EXPECT_EQ(parse_gate("feasibility"), safety::GateMode::FeasibilityConstrained);
  EXPECT_EQ(code_of([] { parse_gate("none"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { run_to_directory("other", safety::GateMode::Backtracking, 1, {}, scratch("bad")); }),
            ErrorCode::InvalidArgument);
}

TEST(Run, ScalarTraceIsDeterministic) {
  const auto a = scratch("scalar_a"), b = scratch("scalar_b"), c = scratch("scalar_c");
  run_to_directory("scalar", safety::GateMode::Backtracking, 5, {}, a);
  run_to_directory("scalar", safety::GateMode::Backtracking, 5, {}, b);
  run_to_directory("scalar", safety::GateMode::Backtracking, 6, {}, c);
  EXPECT_EQ(slurp(a / "trace.jsonl"), slurp(b / "trace.jsonl"));
  EXPECT_EQ(slurp(a / "data.csv"), slurp(b / "data.csv"));
  EXPECT_NE(slurp(a / "trace.jsonl"), slurp(c / "trace.jsonl"));
}

TEST(Run, ScalarReportAndFigures) {
  const auto d = scratch("scalar_fig");
  const auto sum = run_to_directory("scalar", safety::GateMode::Backtracking, 1, {}, d);
  EXPECT_EQ(sum.violations, 0);
  const auto rep = report_directory(d);
  EXPECT_EQ(rep.at("violations").get<int>(), 0);
  EXPECT_EQ(rep.at("pending").get<int>(), 0);
  EXPECT_LE(rep.at("max_state").get<double>(), 0.1);
  emit_figures(d);
  // One row per step plus the header.
  EXPECT_EQ(blocks(d / "fig_scalar_state.csv").at(0).size(), static_cast<std::size_t>(sum.steps));
}

class TubeRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("tube"));
    summary_ = run_to_directory("tube", safety::GateMode::Backtracking, 3, short_tube(), *dir_);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path* dir_;
  static RunSummary summary_;
};
fs::path* TubeRun::dir_ = nullptr;
RunSummary TubeRun::summary_;

TEST_F(TubeRun, TraceIsDeterministic) {
  const auto again = scratch("tube_again");
  run_to_directory("tube", safety::GateMode::Backtracking, 3, short_tube(), again);
  EXPECT_EQ(slurp(*dir_ / "trace.jsonl"), slurp(again / "trace.jsonl"));
}

TEST_F(TubeRun, EpochCostIsTheDiscountedStageSum) {
  const auto trace = read_trace(*dir_ / "trace.jsonl");
  const auto cfg = TubeExperimentConfig::from(short_tube(), safety::GateMode::Backtracking, 3);
  const auto steps = of_type(trace, "step");
  const auto epochs = of_type(trace, "epoch");
  ASSERT_EQ(epochs.size(), 3u);
  ASSERT_EQ(steps.size(), static_cast<std::size_t>(3 * cfg.batch));
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    double J = 0.0, disc = 1.0;
    for (int k = 0; k < cfg.batch; ++k) {
      const auto& st = steps[e * static_cast<std::size_t>(cfg.batch) + static_cast<std::size_t>(k)];
      J += disc * cfg.stage_cost(vec_from_json(st.at("state")), vec_from_json(st.at("action")));
      disc *= cfg.gamma;
    }
    EXPECT_NEAR(epochs[e].at("J").get<double>(), J, 1e-12 * std::max(1.0, J));
  }
}

TEST_F(TubeRun, FiguresAreClosedPolygonsAndReproducible) {
  const auto files = emit_figures(*dir_);
  std::map<std::string, std::string> first;
  for (const auto& f : files) first[f] = slurp(*dir_ / f);
  emit_figures(*dir_);
  for (const auto& f : files) EXPECT_EQ(slurp(*dir_ / f), first[f]) << f;

  const auto sets = blocks(*dir_ / "fig_tube_sets.csv");
  ASSERT_GE(sets.size(), 4u);
  for (const auto& b : sets) {
    ASSERT_GE(b.size(), 4u);
    EXPECT_EQ(b.front(), b.back());
  }
  const auto mrpi = blocks(*dir_ / "fig_tube_mrpi_history.csv");
  for (const auto& b : mrpi) EXPECT_EQ(xy_of(b.front()), xy_of(b.back()));

  EXPECT_EQ(blocks(*dir_ / "fig_tube_state.csv").at(0).size(), static_cast<std::size_t>(summary_.steps));
  EXPECT_EQ(blocks(*dir_ / "fig_tube_epochs.csv").at(0).size(), 3u);
}

TEST_F(TubeRun, ReportWritesStability) {
  const auto j = report_directory(*dir_, 2);
  EXPECT_TRUE(fs::exists(*dir_ / "stability.json"));
  EXPECT_TRUE(fs::exists(*dir_ / "lyapunov.csv"));
  EXPECT_TRUE(j.contains("v_violations"));
  EXPECT_EQ(blocks(*dir_ / "lyapunov.csv").at(0).size(), static_cast<std::size_t>(summary_.steps));
}

TEST_F(TubeRun, NoViolations) {
  EXPECT_EQ(summary_.violations, 0);
  EXPECT_EQ(summary_.steps, 60);
}
