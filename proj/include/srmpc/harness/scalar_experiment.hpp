#pragma once

// Closed-loop learning on the scalar plant s+ = A s + B u + w with a gated
// policy-gradient update of (K, a_s).

#include <srmpc/harness/config.hpp>
#include <srmpc/harness/trace.hpp>
#include <srmpc/learning/scalar_constraints.hpp>
#include <srmpc/learning/scalar_gradient.hpp>
#include <srmpc/model/linear_model.hpp>
#include <srmpc/safety/gate.hpp>
#include <srmpc/safety/nonblocking.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <random>

namespace srmpc::harness {

struct ScalarExperimentConfig {
  mpc::ScalarSystem sys;
  mpc::ScalarMpcParameters theta0{2.0, 0.0};
  double s0 = -8.0;
  int steps = 60;
  safety::GateMode mode = safety::GateMode::Backtracking;
  learning::UpdateStepConfig step;
  learning::ScalarConstraintConfig constraints;
  learning::ScalarCostConfig cost;
  unsigned long long seed = 1;

  static ScalarExperimentConfig from(const Config& c, safety::GateMode mode, unsigned long long seed) {
    ScalarExperimentConfig e;
    auto& s = e.sys;
    s.A = c.get("scalar.A", s.A);
    s.B = c.get("scalar.B", s.B);
    s.w_lo = c.get("scalar.w_lo", s.w_lo);
    s.w_hi = c.get("scalar.w_hi", s.w_hi);
    s.s_max = c.get("scalar.s_max", s.s_max);
    s.u_min = c.get("scalar.u_min", s.u_min);
    s.u_max0 = c.get("scalar.u_max0", s.u_max0);
    s.u_max_slope = c.get("scalar.u_max_slope", s.u_max_slope);
    e.theta0.K = c.get("scalar.K0", e.theta0.K);
    e.theta0.a_s = c.get("scalar.a_s0", e.theta0.a_s);
    e.s0 = c.get("scalar.s0", e.s0);
    // The feasibility-constrained gate converges much later; give it a longer default horizon.
    e.steps = c.get("scalar.steps", mode == safety::GateMode::Backtracking ? 60 : 400);
    e.step.alpha = c.get("scalar.alpha", e.step.alpha);
    e.step.rho = c.get("rho", e.step.rho);
    e.step.n_fail = c.get("n_fail", e.step.n_fail);
    e.cost.gamma = c.get("scalar.gamma", e.cost.gamma);
    e.cost.grid_points = c.get("scalar.grid_points", e.cost.grid_points);
    e.cost.noise_nodes = c.get("scalar.noise_nodes", e.cost.noise_nodes);
    e.cost.richardson_tol = c.get("scalar.richardson_tol", e.cost.richardson_tol);
    const auto reading = c.get("scalar.boundary_reading", std::string("clipped"));
    if (reading == "clipped")
      e.constraints.reading = learning::BoundaryReading::Clipped;
    else if (reading == "projected")
      e.constraints.reading = learning::BoundaryReading::Projected;
    else
      fail(ErrorCode::InvalidArgument, "scalar.boundary_reading must be clipped or projected");
    e.mode = mode;
    e.seed = seed;
    return e;
  }

  json to_json() const {
    return {{"A", sys.A},
            {"B", sys.B},
            {"w_lo", sys.w_lo},
            {"w_hi", sys.w_hi},
            {"s_max", sys.s_max},
            {"u_min", sys.u_min},
            {"u_max0", sys.u_max0},
            {"u_max_slope", sys.u_max_slope},
            {"K0", theta0.K},
            {"a_s0", theta0.a_s},
            {"s0", s0},
            {"steps", steps},
            {"alpha", step.alpha},
            {"rho", step.rho},
            {"n_fail", step.n_fail},
            {"gamma", cost.gamma},
            {"grid_points", cost.grid_points},
            {"noise_nodes", cost.noise_nodes},
            {"boundary_reading", constraints.reading == learning::BoundaryReading::Clipped ? "clipped" : "projected"},
            {"gate", safety::to_string(mode)},
            {"seed", seed}};
  }
};

struct ScalarStepRecord {
  int step = 0;
  double s = 0.0;
  double a = 0.0;
  double s_next = 0.0;
  double w = 0.0;
  mpc::ScalarMpcParameters theta;
  std::optional<safety::UpdateDecision> decision;
  bool violation = false;
};

struct ScalarRunResult {
  std::vector<ScalarStepRecord> steps;
  std::vector<safety::Proposal> proposals;
  std::vector<double> alpha_history;  // alpha after every shrink
  std::vector<mpc::ScalarMpcParameters> applied;  // theta sequence (initial + every applied update)
  int violations = 0;
  bool alpha_underflow = false;
};

/// Memoized policy-gradient evaluations (the gradient depends on theta only).
class ScalarGradientCache {
 public:
  explicit ScalarGradientCache(const mpc::ScalarSystem& sys, const learning::ScalarCostConfig& cfg)
      : sys_(sys), cfg_(cfg) {}
  const Vec& at(const mpc::ScalarMpcParameters& p) {
    const auto key = std::make_pair(p.K, p.a_s);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, learning::exact_grad_scalar(sys_, p, cfg_).grad).first;
    return it->second;
  }

 private:
  mpc::ScalarSystem sys_;
  learning::ScalarCostConfig cfg_;
  std::map<std::pair<double, double>, Vec> cache_;
};

inline ScalarRunResult run_scalar_experiment(const ScalarExperimentConfig& cfg, TraceWriter* trace = nullptr,
                                             ScalarGradientCache* shared_cache = nullptr) {
  using mpc::ScalarMpcParameters;
  const auto& sys = cfg.sys;
  ScalarGradientCache local(sys, cfg.cost);
  ScalarGradientCache& grads = shared_cache ? *shared_cache : local;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> noise(sys.w_lo, sys.w_hi);
  ScalarRunResult out;

  safety::GateState<ScalarMpcParameters> g;
  g.current = cfg.theta0;
  g.mode = cfg.mode;
  g.alpha = cfg.step.alpha;
  out.applied.push_back(g.current);

  // Regions of attraction depend on theta only.
  std::map<std::pair<double, double>, mpc::Interval> roa;
  auto roa_of = [&](const ScalarMpcParameters& p) -> const mpc::Interval& {
    const auto key = std::make_pair(p.K, p.a_s);
    auto it = roa.find(key);
    if (it == roa.end()) it = roa.emplace(key, mpc::region_of_attraction_1d(sys, p)).first;
    return it->second;
  };
  const safety::PolicyFn<ScalarMpcParameters> policy = [&](const ScalarMpcParameters& p,
                                                           const Vec& s) -> std::optional<Vec> {
    if (!roa_of(p).contains(s(0))) return std::nullopt;
    const auto u = mpc::scalar_policy(sys, p, s(0));
    if (!u) return std::nullopt;
    return Vec::Constant(1, *u);
  };

  // Candidate from the incumbent at step scale alpha; worst-case successors are added
  // in the feasibility-constrained mode.
  std::vector<double> worst_case;
  auto compute = [&](double alpha) -> std::optional<ScalarMpcParameters> {
    learning::UpdateStepConfig sc = cfg.step;
    sc.alpha = alpha;
    const auto cons = learning::scalar_constraints(sys, cfg.constraints, worst_case);
    try {
      const auto r = learning::constrained_step(g.current.flat(), grads.at(g.current), sc, cons);
      return ScalarMpcParameters::from_flat(r.theta);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::PostCheckFailed) return std::nullopt;
      throw;
    }
  };

  auto emit_proposal = [&](int step) {
    if (!g.candidate) return;
    // A zero step is not an update; learning has converged for this incumbent.
    if ((g.candidate->flat() - g.current.flat()).norm() <= 1e-12) {
      g.candidate.reset();
      return;
    }
    out.proposals.push_back({step, -1});
    if (trace)
      trace->write({{"type", "proposal"}, {"step", step}, {"alpha", g.alpha},
                    {"theta", {g.candidate->K, g.candidate->a_s}}});
  };

  auto propose_now = [&](int step) {
    g.alpha = cfg.step.alpha;
    try {
      safety::propose<ScalarMpcParameters>(g, cfg.step, compute);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AlphaUnderflow) throw;
      out.alpha_underflow = true;
      return;
    }
    emit_proposal(step);
  };

  if (trace) trace->write({{"type", "header"}, {"experiment", "scalar"}, {"config", cfg.to_json()}, {"version", 1}});
  double s = cfg.s0;
  if (cfg.mode == safety::GateMode::Backtracking) propose_now(0);
  for (int i = 0; i < cfg.steps; ++i) {
    ScalarStepRecord rec;
    rec.step = i;
    rec.s = s;
    const bool had_candidate = g.candidate.has_value();
    const auto gs = safety::gate<ScalarMpcParameters>(Vec::Constant(1, s), g, policy);
    rec.a = gs.action(0);
    rec.decision = gs.decision;
    rec.theta = g.current;
    const double w = noise(rng);
    rec.w = w;
    rec.s_next = sys.A * s + sys.B * rec.a + w;
    rec.violation = rec.s_next > sys.s_max;
    out.violations += rec.violation ? 1 : 0;

    bool applied = false;
    if (had_candidate && gs.decision) {
      if (gs.decision->outcome == safety::UpdateOutcome::Applied) {
        applied = true;
        out.proposals.back().applied_at = i;
        out.applied.push_back(g.current);
      } else if (g.fail_count >= cfg.step.n_fail) {
        try {
          safety::backtrack_shrink<ScalarMpcParameters>(g, cfg.step, compute);
          out.alpha_history.push_back(g.alpha);
          if (trace) trace->write({{"type", "shrink"}, {"step", i}, {"alpha", g.alpha},
                                   {"theta", {g.candidate->K, g.candidate->a_s}}});
        } catch (const Error& e) {
          if (e.code() != ErrorCode::AlphaUnderflow) throw;
          out.alpha_underflow = true;
          out.proposals.back().applied_at = -1;
        }
      }
    }
    if (trace) {
      json j{{"type", "step"}, {"step", i}, {"state", {s}}, {"action", {rec.a}}, {"next_state", {rec.s_next}},
             {"noise", {w}}, {"theta", {rec.theta.K, rec.theta.a_s}}, {"theta_hash", theta_hash(rec.theta.flat())},
             {"feasible", true}, {"u_bound", sys.u_max(rec.theta.K)}, {"violation", rec.violation},
             {"noise_in_model", w >= sys.w_lo && w <= sys.w_hi}};
      if (gs.decision)
        j["decision"] = {{"outcome", safety::to_string(gs.decision->outcome)},
                         {"reason", safety::to_string(gs.decision->reason)},
                         {"alpha", gs.decision->alpha_used},
                         {"fail_count", gs.decision->fail_count}};
      trace->write(j);
    }
    out.steps.push_back(rec);
    s = rec.s_next;

    if (cfg.mode == safety::GateMode::Backtracking) {
      if (applied) propose_now(i + 1);
    } else {
      // Every step: the next parameter must keep all one-step successors feasible.
      worst_case = learning::worst_case_successors(sys, rec.s, rec.a);
      if (g.candidate) {
        out.proposals.back().applied_at = -1;
        g.candidate.reset();
      }
      propose_now(i + 1);
    }
  }
  return out;
}

}  // namespace srmpc::harness
