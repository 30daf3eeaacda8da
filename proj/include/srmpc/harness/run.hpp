#pragma once

// Directory-level entry points behind the command line: run an experiment into
// DIR, post-process DIR.
//
// DIR/trace.jsonl    JSON lines (header, step, proposal, shrink, epoch, theta, sets)
// DIR/config.txt     the key-value configuration the run used
// DIR/data.csv       transitions (s, a, s_next)
// DIR/epochs.csv     tube only: epoch, theta, mean |TD|, J, |theta - theta*|
// DIR/stability.json, DIR/lyapunov.csv   written by report (tube)
// DIR/report.json                          written by report (scalar)

#include <srmpc/harness/figures.hpp>
#include <srmpc/harness/report.hpp>
#include <srmpc/harness/scalar_experiment.hpp>
#include <srmpc/harness/tube_experiment.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace srmpc::harness {

inline safety::GateMode parse_gate(const std::string& s) {
  if (s == "backtracking") return safety::GateMode::Backtracking;
  if (s == "feasibility" || s == "feasibility-constrained") return safety::GateMode::FeasibilityConstrained;
  fail(ErrorCode::InvalidArgument, "gate must be backtracking or feasibility: " + s);
}

inline std::string config_text(const Config& c) {
  std::ostringstream os;
  for (const auto& [k, v] : c.values()) os << k << " = " << v << '\n';
  return os.str();
}

struct RunSummary {
  int steps = 0;
  int violations = 0;
  int fallbacks = 0;
  bool alpha_underflow = false;
};

inline RunSummary run_to_directory(const std::string& experiment, safety::GateMode mode, unsigned long long seed,
                                   const Config& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.txt", config_text(config));
  RunSummary sum;
  model::DataSet data;
  {
    TraceWriter trace(dir / "trace.jsonl");
    if (experiment == "scalar") {
      const auto cfg = ScalarExperimentConfig::from(config, mode, seed);
      const auto r = run_scalar_experiment(cfg, &trace);
      for (const auto& s : r.steps)
        data.append({Vec::Constant(1, s.s), Vec::Constant(1, s.a), Vec::Constant(1, s.s_next)});
      sum.steps = static_cast<int>(r.steps.size());
      sum.violations = r.violations;
      sum.alpha_underflow = r.alpha_underflow;
      trace.write({{"type", "summary"}, {"violations", r.violations}, {"alpha_underflow", r.alpha_underflow},
                   {"final_theta", {r.applied.back().K, r.applied.back().a_s}}});
    } else if (experiment == "tube") {
      const auto cfg = TubeExperimentConfig::from(config, mode, seed);
      const auto r = run_tube_experiment(cfg, &trace);
      for (const auto& s : r.steps) data.append({s.s, s.a, s.s_next});
      sum.steps = static_cast<int>(r.steps.size());
      sum.violations = r.violations;
      sum.fallbacks = r.fallbacks;
      sum.alpha_underflow = r.alpha_underflow;
      json reasons = json::object();
      for (const auto& [k, v] : r.post_check_reasons) reasons[k] = v;
      trace.write({{"type", "summary"}, {"violations", r.violations},
                   {"violations_with_inclusion", r.violations_with_inclusion}, {"fallbacks", r.fallbacks},
                   {"shrinks", r.shrinks}, {"post_check_failures", r.post_check_failures},
                   {"post_check_reasons", reasons}, {"alpha_underflow", r.alpha_underflow}});
    } else {
      fail(ErrorCode::InvalidArgument, "experiment must be scalar or tube: " + experiment);
    }
  }
  std::ostringstream csv;
  data.write_csv(csv);
  write_text(dir / "data.csv", csv.str());
  if (experiment == "tube") {
    const auto trace = read_trace(dir / "trace.jsonl");
    const auto in = stability_inputs(trace);
    std::vector<double> J;
    for (const auto& e : of_type(trace, "epoch")) J.push_back(e.at("J").get<double>());
    write_text(dir / "epochs.csv",
               epoch_csv(in.epoch_thetas, in.epoch_td, J, theta_star_from_epochs(in.epoch_thetas, in.window),
                         mpc::TubeMpcParameters::names(2, 1, 4)));
  }
  return sum;
}

/// Stability post-processing (tube) or gate statistics (scalar). Returns the JSON written.
inline json report_directory(const fs::path& dir, int alpha_v_updates = 20) {
  const auto trace = read_trace(dir / "trace.jsonl");
  const auto header = of_type(trace, "header");
  if (header.empty()) fail(ErrorCode::InvalidArgument, "report: trace has no header");
  const auto kind = header[0].value("experiment", "");
  const auto& hc = header[0].at("config");
  if (kind == "tube") {
    const Config config = fs::exists(dir / "config.txt") ? Config::load((dir / "config.txt").string()) : Config{};
    const auto cfg = TubeExperimentConfig::from(config, parse_gate(hc.at("gate").get<std::string>()),
                                                hc.at("seed").get<unsigned long long>());
    const auto in = stability_inputs(trace);
    const double av = alpha_v_estimate(cfg, in.thetas, alpha_v_updates);
    const auto rep = analyze_stability(in, av);
    auto j = rep.to_json();
    j["alpha_v_updates_sampled"] = std::min<int>(alpha_v_updates, static_cast<int>(in.thetas.size()) - 1);
    write_text(dir / "stability.json", j.dump(2) + "\n");
    write_text(dir / "lyapunov.csv", rep.series_csv());
    return j;
  }
  if (kind == "scalar") {
    std::vector<safety::Proposal> ps;
    json alphas = json::array();
    double s_max = -kInf;
    int violations = 0;
    for (const auto& j : trace) {
      const auto t = j.value("type", "");
      if (t == "proposal") {
        ps.push_back({j.at("step").get<int>(), -1});
      } else if (t == "shrink") {
        alphas.push_back(j.at("alpha").get<double>());
      } else if (t == "step") {
        s_max = std::max(s_max, j.at("next_state")[0].get<double>());
        violations += j.at("violation").get<bool>() ? 1 : 0;
        if (j.contains("decision") && j["decision"].at("outcome") == "applied" && !ps.empty() &&
            ps.back().applied_at < 0)
          ps.back().applied_at = j.at("step").get<int>();
      }
    }
    const auto st = safety::deferral_stats(ps);
    json props = json::array();
    for (const auto& p : ps) props.push_back({{"proposed_at", p.proposed_at}, {"applied_at", p.applied_at}});
    json j{{"proposals", props},     {"applied", st.applied},
           {"pending", st.pending},  {"max_deferral", st.max_duration},
           {"mean_deferral", st.mean_duration}, {"alpha_after_shrinks", alphas},
           {"max_state", s_max},     {"violations", violations}};
    write_text(dir / "report.json", j.dump(2) + "\n");
    return j;
  }
  fail(ErrorCode::InvalidArgument, "report: unknown experiment " + kind);
}

}  // namespace srmpc::harness
