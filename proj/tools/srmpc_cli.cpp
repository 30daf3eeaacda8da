// srmpc: run experiments, post-process traces, emit figure data.
//
//   srmpc run --experiment scalar|tube --gate backtracking|feasibility --seed S [--config FILE] --out DIR
//   srmpc report --trace DIR
//   srmpc figures --trace DIR

#include <srmpc/harness/run.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace srmpc;
  CLI::App app{"Safe learning-based tube MPC experiments"};
  app.require_subcommand(1);

  std::string experiment = "scalar", gate = "backtracking", config_file, out_dir, trace_dir;
  unsigned long long seed = 1;
  int alpha_v_updates = 20;

  auto* run = app.add_subcommand("run", "simulate an experiment and write its trace");
  run->add_option("--experiment", experiment, "scalar or tube")->check(CLI::IsMember({"scalar", "tube"}));
  run->add_option("--gate", gate, "backtracking or feasibility")
      ->check(CLI::IsMember({"backtracking", "feasibility", "feasibility-constrained"}));
  run->add_option("--seed", seed, "random seed");
  run->add_option("--config", config_file, "key-value configuration file")->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory")->required();

  auto* report = app.add_subcommand("report", "stability / gate post-processing of a trace directory");
  report->add_option("--trace", trace_dir, "trace directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--alpha-v-updates", alpha_v_updates, "parameter updates sampled for the Lipschitz estimate");

  auto* figures = app.add_subcommand("figures", "write figure CSVs and a gnuplot stub");
  figures->add_option("--trace", trace_dir, "trace directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = config_file.empty() ? harness::Config{} : harness::Config::load(config_file);
      const auto s = harness::run_to_directory(experiment, harness::parse_gate(gate), seed, cfg, out_dir);
      std::cout << experiment << " run: " << s.steps << " steps, " << s.violations << " violations, "
                << s.fallbacks << " fallbacks" << (s.alpha_underflow ? ", alpha underflow" : "") << "\n";
    } else if (*report) {
      std::cout << harness::report_directory(trace_dir, alpha_v_updates).dump(2) << "\n";
    } else if (*figures) {
      for (const auto& f : harness::emit_figures(trace_dir)) std::cout << f << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
