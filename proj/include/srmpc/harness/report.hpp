#pragma once

// Post-run stability analysis of tube traces: theta* from the tail of the epoch
// sequence, W telemetry, decrease checks, rate estimates and the ISS fit.

#include <srmpc/harness/trace.hpp>
#include <srmpc/harness/tube_experiment.hpp>
#include <srmpc/stability/lyapunov.hpp>

#include <random>
#include <sstream>

namespace srmpc::harness {

struct StabilityInputs {
  std::vector<int> step, epoch, theta_index;
  std::vector<double> v_hat;
  std::vector<Vec> thetas;          // every parameter that acted, in order
  std::vector<double> delta_hat;    // per parameter
  std::vector<Vec> epoch_thetas;    // parameter at the end of each epoch
  std::vector<double> epoch_td;
  double zeta = 0.1;
  double gamma = 0.9;
  int window = 100;
};

inline StabilityInputs stability_inputs(const TubeRunResult& r, const TubeExperimentConfig& cfg) {
  StabilityInputs in;
  for (const auto& s : r.steps) {
    in.step.push_back(s.step);
    in.epoch.push_back(s.epoch);
    in.theta_index.push_back(s.theta_index);
    in.v_hat.push_back(s.core_value);
  }
  for (const auto& t : r.thetas) {
    in.thetas.push_back(t.theta);
    in.delta_hat.push_back(t.delta_hat);
  }
  for (const auto& e : r.epochs) {
    in.epoch_thetas.push_back(r.thetas[static_cast<std::size_t>(e.theta_index)].theta);
    in.epoch_td.push_back(e.mean_abs_td);
  }
  in.zeta = cfg.zeta;
  in.gamma = cfg.lyap_gamma;
  in.window = cfg.theta_star_window;
  return in;
}

inline StabilityInputs stability_inputs(const std::vector<json>& trace) {
  const auto header = of_type(trace, "header");
  if (header.empty() || header[0].value("experiment", "") != "tube")
    fail(ErrorCode::InvalidArgument, "stability report: not a tube trace");
  const auto& c = header[0].at("config");
  StabilityInputs in;
  in.zeta = c.at("zeta").get<double>();
  in.gamma = c.at("lyap_gamma").get<double>();
  in.window = c.at("theta_star_window").get<int>();
  for (const auto& s : of_type(trace, "step")) {
    in.step.push_back(s.at("step").get<int>());
    in.epoch.push_back(s.at("epoch").get<int>());
    in.theta_index.push_back(s.at("theta_index").get<int>());
    in.v_hat.push_back(s.at("core_value").get<double>());
  }
  for (const auto& t : of_type(trace, "theta")) {
    in.thetas.push_back(vec_from_json(t.at("theta")));
    in.delta_hat.push_back(t.at("delta_hat").get<double>());
  }
  for (const auto& e : of_type(trace, "epoch")) {
    in.epoch_thetas.push_back(vec_from_json(e.at("theta")));
    in.epoch_td.push_back(e.at("mean_abs_td").get<double>());
  }
  if (in.step.empty() || in.thetas.empty() || in.epoch_thetas.empty())
    fail(ErrorCode::InvalidArgument, "stability report: trace has no steps, parameters or epochs");
  return in;
}

struct StabilityReport {
  Vec theta_star;
  int window_used = 0;
  std::vector<stability::LyapunovRecord> records;
  std::optional<stability::RateEstimates> rates;
  std::string rates_failure;
  std::vector<stability::Violation> v_violations;  // outside the level set, within a batch
  std::vector<stability::Violation> w_violations;
  stability::IssReport iss;
  double zeta = 0.0;

  json to_json() const {
    auto viol = [](const std::vector<stability::Violation>& vs) {
      json a = json::array();
      for (const auto& v : vs) a.push_back({{"step", v.step}, {"kind", v.kind}, {"amount", v.amount}});
      return a;
    };
    json j{{"theta_star", harness::to_json(theta_star)},
           {"theta_star_window", window_used},
           {"zeta", zeta},
           {"steps", records.size()},
           {"v_violations", viol(v_violations)},
           {"w_violations", viol(w_violations)},
           {"iss", {{"fit_ok", iss.fit_ok},
                    {"margin", finite_or_max(iss.margin)},
                    {"failure", iss.failure},
                    {"beta_x", iss.knots_x},
                    {"beta_y", iss.knots_y}}}};
    if (rates) {
      j["r_hat"] = rates->r_hat;
      j["r_practical"] = rates->r_practical;
      j["q_hat"] = rates->q_hat;
      j["alpha_v_hat"] = rates->alpha_v_hat;
      j["zeta_min"] = finite_or_max(rates->zeta_min);
      j["strict_armed"] = rates->strict_armed;
      j["zeta_sufficient"] = zeta >= rates->zeta_min;
    } else {
      j["rates_failure"] = rates_failure;
    }
    return j;
  }

  /// step, epoch, V, W, Delta_p, level, in_level_set, iss_residual
  std::string series_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,epoch,v_hat,w,delta_p,level,in_level_set,iss_residual\n";
    for (const auto& r : records)
      os << r.step << ',' << r.epoch << ',' << r.v_hat << ',' << r.w_value << ',' << r.delta_p << ',' << r.level << ','
         << (r.in_level_set ? 1 : 0) << ',' << r.iss_residual << '\n';
    return os.str();
  }
};

/// Mean of the last `window` epoch parameters (all of them when the run is shorter).
inline Vec theta_star_from_epochs(const std::vector<Vec>& epoch_thetas, int window, int* used = nullptr) {
  require(!epoch_thetas.empty(), "theta*: no epochs");
  const auto n = std::min<std::size_t>(epoch_thetas.size(), static_cast<std::size_t>(std::max(1, window)));
  Vec m = Vec::Zero(epoch_thetas.front().size());
  for (std::size_t k = epoch_thetas.size() - n; k < epoch_thetas.size(); ++k) m += epoch_thetas[k];
  if (used) *used = static_cast<int>(n);
  return m / static_cast<double>(n);
}

/// `alpha_v` is the sampled Lipschitz estimate in theta (0 when not sampled).
inline StabilityReport analyze_stability(const StabilityInputs& in, double alpha_v = 0.0) {
  require(in.step.size() == in.v_hat.size() && in.step.size() == in.theta_index.size(), "stability: ragged inputs");
  StabilityReport rep;
  rep.zeta = in.zeta;
  rep.theta_star = theta_star_from_epochs(in.epoch_thetas, in.window, &rep.window_used);
  rep.records.resize(in.step.size());
  for (std::size_t i = 0; i < in.step.size(); ++i) {
    auto& r = rep.records[i];
    r.step = in.step[i];
    r.epoch = in.epoch[i];
    r.v_hat = in.v_hat[i];
    r.delta_p = (in.thetas[static_cast<std::size_t>(in.theta_index[i])] - rep.theta_star).norm();
  }
  stability::annotate(
      rep.records, in.theta_index,
      [&](std::size_t i) { return in.delta_hat[static_cast<std::size_t>(in.theta_index[i])]; }, in.gamma, in.zeta);
  rep.v_violations = stability::check_v_decrease(rep.records);
  rep.w_violations = stability::check_w_decrease(rep.records);
  rep.iss = stability::check_iss(rep.records);
  try {
    rep.rates = stability::estimate_rates(in.thetas, rep.theta_star, alpha_v);
  } catch (const Error& e) {
    rep.rates_failure = e.what();
  }
  return rep;
}

/// sup over the intersection of consecutive feasible sets of |V_{p+1} - V_p| / |theta_{p+1} - theta_p|,
/// sampled by rejection from the state box at `updates` evenly spaced parameter changes.
inline double alpha_v_estimate(const TubeExperimentConfig& cfg, const std::vector<Vec>& thetas, int updates = 20,
                               int samples = 200, unsigned long long seed = 7) {
  if (thetas.size() < 2 || updates <= 0) return 0.0;
  const auto prob = cfg.problem();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u0(cfg.x_lo(0), cfg.x_hi(0)), u1(cfg.x_lo(1), cfg.x_hi(1));
  const std::size_t total = thetas.size() - 1;
  const std::size_t picks = std::min<std::size_t>(total, static_cast<std::size_t>(updates));
  auto make = [&](const Vec& t) { return mpc::TubeMpc(prob, mpc::TubeMpcParameters::unflatten(t, 2, 1, 4)); };
  double best = 0.0;
  for (std::size_t k = 0; k < picks; ++k) {
    const std::size_t p = picks == 1 ? 0 : k * (total - 1) / (picks - 1);
    const double step = (thetas[p + 1] - thetas[p]).norm();
    if (step <= 0.0) continue;
    const auto a = make(thetas[p]);
    const auto b = make(thetas[p + 1]);
    std::vector<Vec> pts;
    for (int tries = 0; tries < 50 * samples && static_cast<int>(pts.size()) < samples; ++tries) {
      const Vec s = (Vec(2) << u0(rng), u1(rng)).finished();
      if (a.is_feasible(s) && b.is_feasible(s)) pts.push_back(s);
    }
    best = std::max(best, stability::alpha_v_sample(
                              pts, [&](const Vec& s) { return a.solve(s).core_value; },
                              [&](const Vec& s) { return b.solve(s).core_value; }, step));
  }
  return best;
}

}  // namespace srmpc::harness
