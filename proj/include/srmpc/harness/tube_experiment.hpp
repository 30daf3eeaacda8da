#pragma once

// Closed-loop batch Q-learning of the tube MPC parameters on a double integrator
// with polygonal noise; updates pass through the safety gate.

#include <srmpc/harness/config.hpp>
#include <srmpc/harness/sim_truth.hpp>
#include <srmpc/harness/trace.hpp>
#include <srmpc/geometry/polytope_json.hpp>
#include <srmpc/learning/q_learning.hpp>
#include <srmpc/safety/gate.hpp>
#include <srmpc/safety/nonblocking.hpp>

#include <cmath>
#include <memory>
#include <numbers>

namespace srmpc::harness {

struct TubeExperimentConfig {
  model::LinearModel truth_model;
  Vec x_lo, x_hi, u_lo, u_hi;
  int N = 50;
  int batch = 20;
  int epochs = 300;
  double alpha = 0.1;
  double alpha_feasibility = 0.005;  // per-step updates: alpha / batch
  double gamma = 0.9;
  double lyap_gamma = 0.9;
  double zeta = 0.1;
  double octagon_radius = 0.03;
  double octagon_phase = std::numbers::pi / 8.0;
  int prior_samples = 500;
  double prior_margin = 1.1;
  Vec s0, s_ref;
  Vec stage_weight;  // diagonal of the true stage cost over (s, a)
  int theta_star_window = 100;
  bool estimate_delta = true;
  double mrpi_eps = 1e-3;
  safety::GateMode mode = safety::GateMode::Backtracking;
  learning::UpdateStepConfig step;
  unsigned long long seed = 1;

  TubeExperimentConfig() {
    truth_model.A = (Mat(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
    truth_model.B = (Mat(2, 1) << 0.05, 0.1).finished();
    truth_model.b = Vec::Zero(2);
    x_lo = Vec::Constant(2, -1.0);
    x_hi = Vec::Constant(2, 1.0);
    u_lo = Vec::Constant(1, -10.0);
    u_hi = Vec::Constant(1, 10.0);
    s0 = (Vec(2) << 0.8, 0.0).finished();
    s_ref = (Vec(2) << -3.0, 0.0).finished();
    stage_weight = (Vec(3) << 1.0, 0.01, 0.01).finished();
  }

  static TubeExperimentConfig from(const Config& c, safety::GateMode mode, unsigned long long seed) {
    TubeExperimentConfig e;
    e.N = c.get("tube.N", e.N);
    e.batch = c.get("tube.batch", e.batch);
    e.epochs = c.get("tube.epochs", e.epochs);
    e.alpha = c.get("tube.alpha", e.alpha);
    e.alpha_feasibility = c.get("tube.alpha_feasibility", e.alpha_feasibility);
    e.gamma = c.get("tube.gamma", e.gamma);
    e.lyap_gamma = c.get("tube.lyap_gamma", e.lyap_gamma);
    e.zeta = c.get("tube.zeta", e.zeta);
    e.octagon_radius = c.get("tube.octagon_radius", e.octagon_radius);
    e.octagon_phase = c.get("tube.octagon_phase", e.octagon_phase);
    e.prior_samples = c.get("tube.prior_samples", e.prior_samples);
    e.prior_margin = c.get("tube.prior_margin", e.prior_margin);
    e.s0 = c.get("tube.s0", e.s0);
    e.s_ref = c.get("tube.s_ref", e.s_ref);
    e.stage_weight = c.get("tube.stage_weight", e.stage_weight);
    e.theta_star_window = c.get("tube.theta_star_window", e.theta_star_window);
    e.estimate_delta = c.get("tube.estimate_delta", e.estimate_delta);
    e.mrpi_eps = c.get("tube.mrpi_eps", e.mrpi_eps);
    e.step.rho = c.get("rho", e.step.rho);
    e.step.n_fail = c.get("n_fail", e.step.n_fail);
    require(e.s0.size() == 2 && e.s_ref.size() == 2 && e.stage_weight.size() == 3, "tube: vector sizes");
    require(e.batch > 0 && e.epochs > 0 && e.N > 0, "tube: batch, epochs and N must be positive");
    e.mode = mode;
    e.seed = seed;
    return e;
  }

  mpc::TubeProblem problem() const {
    auto p = mpc::TubeProblem::boxed(truth_model, x_lo, x_hi, u_lo, u_hi, 4, N);
    p.mrpi_eps = mrpi_eps;
    return p;
  }

  geometry::Polytope octagon() const { return geometry::Polytope::regular_polygon(8, octagon_radius, octagon_phase); }

  double stage_cost(const Vec& s, const Vec& a) const {
    const Vec e = s - s_ref;
    return stage_weight(0) * e(0) * e(0) + stage_weight(1) * e(1) * e(1) + stage_weight(2) * a.squaredNorm();
  }

  json to_json() const {
    return {{"N", N},
            {"batch", batch},
            {"epochs", epochs},
            {"alpha", alpha},
            {"alpha_feasibility", alpha_feasibility},
            {"gamma", gamma},
            {"lyap_gamma", lyap_gamma},
            {"zeta", zeta},
            {"octagon_radius", octagon_radius},
            {"octagon_phase", octagon_phase},
            {"prior_samples", prior_samples},
            {"prior_margin", prior_margin},
            {"s0", harness::to_json(s0)},
            {"s_ref", harness::to_json(s_ref)},
            {"stage_weight", harness::to_json(stage_weight)},
            {"theta_star_window", theta_star_window},
            {"estimate_delta", estimate_delta},
            {"mrpi_eps", mrpi_eps},
            {"rho", step.rho},
            {"n_fail", step.n_fail},
            {"gate", safety::to_string(mode)},
            {"seed", seed}};
  }
};

/// Initial parameters: zero initial-state terms, true stage weights, reference at the
/// origin and a square noise set enclosing the prior residuals with a margin.
inline mpc::TubeMpcParameters initial_tube_parameters(const TubeExperimentConfig& cfg,
                                                      const std::vector<Vec>& prior_residuals) {
  mpc::TubeMpcParameters p;
  p.Lambda = Mat::Zero(2, 2);
  p.lambda = Vec::Zero(2);
  p.l = 0.0;
  p.Q = cfg.stage_weight.head(2).asDiagonal();
  p.R = Mat::Constant(1, 1, cfg.stage_weight(2));
  p.x_r = Vec::Zero(2);
  p.u_r = Vec::Zero(1);
  Vec hw = Vec::Zero(2);
  for (const auto& r : prior_residuals) hw = hw.cwiseMax(r.cwiseAbs());
  hw *= cfg.prior_margin;
  require(hw.minCoeff() > 0.0, "tube: prior residuals must span both axes");
  p.M = Mat::Zero(4, 2);
  p.M(0, 0) = 1.0 / hw(0);
  p.M(1, 0) = -1.0 / hw(0);
  p.M(2, 1) = 1.0 / hw(1);
  p.M(3, 1) = -1.0 / hw(1);
  return p;
}

struct TubeStepRecord {
  int step = 0;
  int epoch = 0;
  Vec s, a, s_next, w;
  int theta_index = 0;
  double value = kInf;
  double core_value = kInf;
  bool truth_inclusion = false;     // octagon inside the acting W
  bool noise_in_model = false;      // realized w inside the acting W
  bool residuals_in_model = false;  // every residual observed so far inside the acting W
  bool in_mrpi = false;
  bool violation = false;
  bool fallback = false;
  std::optional<safety::UpdateDecision> decision;
};

struct TubeEpochRecord {
  int epoch = 0;
  int theta_index = 0;
  double mean_abs_td = 0.0;
  double J = 0.0;
  double alpha = 1.0;
};

struct TubeThetaRecord {
  Vec theta;
  double delta_hat = 0.0;
  int first_step = 0;
  int last_step = -1;
  std::optional<geometry::Polytope> mrpi;  // translated to the reference
};

struct TubeRunResult {
  std::vector<TubeStepRecord> steps;
  std::vector<TubeEpochRecord> epochs;
  std::vector<TubeThetaRecord> thetas;
  std::vector<safety::Proposal> proposals;
  std::vector<Vec> residuals;
  int violations = 0;
  int violations_with_inclusion = 0;
  int fallbacks = 0;
  int shrinks = 0;
  int post_check_failures = 0;
  std::map<std::string, int> post_check_reasons;
  bool alpha_underflow = false;
  geometry::Polytope W_initial, W_final, terminal_initial, terminal_final, mrpi_final;
  Vec x_r_final;
};

namespace detail {

using TubeCtl = std::shared_ptr<const mpc::TubeMpc>;

inline bool inside_all(const geometry::Polytope& P, const std::vector<Vec>& pts, double tol = 1e-9) {
  for (const auto& x : pts)
    if (!geometry::contains(P, x, tol)) return false;
  return true;
}

}  // namespace detail

inline TubeRunResult run_tube_experiment(const TubeExperimentConfig& cfg, TraceWriter* trace = nullptr) {
  using detail::TubeCtl;
  const auto prob = cfg.problem();
  SimTruth truth(cfg.truth_model, cfg.octagon(), cfg.seed);
  const auto oct_vertices = geometry::extreme_points(truth.noise_set());
  TubeRunResult out;

  // Prior data: transitions from random admissible state-action pairs.
  model::DataSet data;
  {
    std::uniform_real_distribution<double> us(-1.0, 1.0), ua(-10.0, 10.0);
    for (int k = 0; k < cfg.prior_samples; ++k) {
      Vec s(2), a(1);
      s << us(truth.rng()), us(truth.rng());
      a << ua(truth.rng());
      data.append({s, a, truth.step(s, a)});
    }
  }
  for (const auto& r : data.records()) out.residuals.push_back(model::residual(cfg.truth_model, r));
  std::vector<Vec> hull = model::hull_residuals(out.residuals);

  auto make = [&](const mpc::TubeMpcParameters& p) { return std::make_shared<const mpc::TubeMpc>(prob, p); };
  const auto p0 = initial_tube_parameters(cfg, out.residuals);
  safety::GateState<TubeCtl> g;
  g.current = make(p0);
  g.mode = cfg.mode;
  out.W_initial = g.current->derived().W;
  out.terminal_initial = g.current->derived().terminal_set();
  out.thetas.push_back({p0.flatten(), 0.0, 0, -1, g.current->derived().mrpi});

  if (trace) {
    trace->write({{"type", "header"},
                  {"experiment", "tube"},
                  {"config", cfg.to_json()},
                  {"theta_names", mpc::TubeMpcParameters::names(2, 1, 4)},
                  {"octagon", geometry::to_json(truth.noise_set())},
                  {"density_bound", truth.density_bound()},
                  {"version", 1}});
  }

  const learning::StageCost cost = [&cfg](const Vec& s, const Vec& a) { return cfg.stage_cost(s, a); };
  const safety::PolicyFn<TubeCtl> policy = [](const TubeCtl& c, const Vec& s) { return c->policy(s); };

  // Extra successor check in the feasibility-constrained mode.
  std::optional<std::pair<Vec, Vec>> dispersion_from;
  Vec grad;
  double alpha_base = cfg.mode == safety::GateMode::Backtracking ? cfg.alpha : cfg.alpha_feasibility;
  auto compute = [&](double scale) -> std::optional<TubeCtl> {
    learning::UpdateStepConfig sc = cfg.step;
    sc.alpha = alpha_base * scale;
    auto cons = learning::tube_constraints(prob, hull, &g.current->derived());
    try {
      const auto r = learning::constrained_step(g.current->params().flatten(), grad, sc, cons);
      auto cand = make(mpc::TubeMpcParameters::unflatten(r.theta, 2, 1, 4));
      if (dispersion_from) {
        const auto& [s, a] = *dispersion_from;
        const Vec c = prob.model.predict(s, a);
        for (const auto& v : cand->derived().W_vertices)
          if (!cand->is_feasible(Vec(c + v))) {
            ++out.post_check_failures;
            ++out.post_check_reasons["successor outside the feasible set"];
            return std::nullopt;
          }
      }
      return cand;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::PostCheckFailed) {
        ++out.post_check_failures;
        ++out.post_check_reasons[e.what()];
        return std::nullopt;
      }
      throw;
    }
  };

  std::vector<model::TransitionRecord> window;  // the latest `batch` transitions
  double last_td = 0.0;
  auto propose_now = [&](int step) {
    const auto td = learning::q_batch_update_direction(*g.current, window, cost, cfg.gamma);
    grad = td.direction.grad;
    last_td = td.mean_abs_td;
    g.alpha = 1.0;  // scale on alpha_base
    try {
      safety::propose<TubeCtl>(g, cfg.step, compute);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AlphaUnderflow) throw;
      out.alpha_underflow = true;
      return;
    }
    out.proposals.push_back({step, -1});
    if (trace)
      trace->write({{"type", "proposal"}, {"step", step}, {"alpha", alpha_base * g.alpha},
                    {"theta", harness::to_json(g.candidate->get()->params().flatten())}});
  };

  // delta estimate for the parameter that acted on steps [first, last].
  auto close_theta = [&](TubeThetaRecord& tr, const TubeCtl& ctl) {
    if (!cfg.estimate_delta || tr.last_step < tr.first_step) return;
    std::vector<Vec> samples;
    for (int i = tr.first_step; i <= tr.last_step; ++i) samples.push_back(out.steps[static_cast<std::size_t>(i)].s);
    const double d = mpc::estimate_delta(
        prob.model, ctl->derived().W_vertices, samples, cfg.lyap_gamma,
        [&](const Vec& x) { return ctl->solve(x).core_value; }, [&](const Vec& x) { return ctl->policy(x); });
    tr.delta_hat = std::isfinite(d) ? d : std::numeric_limits<double>::max();
  };

  Vec s = cfg.s0;
  int theta_index = 0;
  const int total = cfg.epochs * cfg.batch;
  double J = 0.0, disc = 1.0;
  bool inclusion_prev = geometry::subset(truth.noise_set(), g.current->derived().W);
  for (int i = 0; i < total; ++i) {
    const int epoch = i / cfg.batch;
    TubeStepRecord rec;
    rec.step = i;
    rec.epoch = epoch;
    rec.s = s;
    const bool had_candidate = g.candidate.has_value();
    const TubeCtl previous = g.current;
    std::optional<safety::GateStep<TubeCtl>> gs;
    try {
      gs = safety::gate<TubeCtl>(s, g, policy);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::IncumbentInfeasible) throw;
      if (inclusion_prev) fail(ErrorCode::SafetyViolation, "incumbent infeasible although the noise model holds");
      // The model was already violated: fall back to the saturated ancillary law.
      const auto& c = *g.current;
      Vec u = -c.derived().K * (s - c.params().x_r) + c.params().u_r;
      u = u.cwiseMax(cfg.u_lo).cwiseMin(cfg.u_hi);
      rec.fallback = true;
      ++out.fallbacks;
      gs = safety::GateStep<TubeCtl>{u, std::nullopt};
    }
    rec.a = gs->action;
    rec.decision = gs->decision;
    if (had_candidate && rec.decision && rec.decision->outcome == safety::UpdateOutcome::Applied) {
      out.proposals.back().applied_at = i;
      out.thetas.back().last_step = i - 1;
      close_theta(out.thetas.back(), previous);
      out.thetas.push_back({g.current->params().flatten(), 0.0, i, -1, g.current->derived().mrpi});
      ++theta_index;
    }
    rec.theta_index = theta_index;
    const auto& ctl = *g.current;
    const auto sol = ctl.solve(s);
    rec.value = sol.value;
    rec.core_value = sol.core_value;
    const auto& W = ctl.derived().W;
    rec.truth_inclusion = detail::inside_all(W, oct_vertices);
    rec.in_mrpi = ctl.derived().mrpi && geometry::contains(*ctl.derived().mrpi, s, 1e-9);

    rec.s_next = truth.step(s, rec.a, &rec.w);
    rec.noise_in_model = geometry::contains(W, rec.w, 1e-12);
    const model::TransitionRecord tr{s, rec.a, rec.s_next};
    data.append(tr);
    out.residuals.push_back(model::residual(cfg.truth_model, tr));
    hull.push_back(out.residuals.back());
    hull = model::hull_residuals(hull);
    rec.residuals_in_model = detail::inside_all(W, hull, 1e-12);
    rec.violation = (rec.s_next - cfg.x_hi).maxCoeff() > 0.0 || (cfg.x_lo - rec.s_next).maxCoeff() > 0.0;
    out.violations += rec.violation ? 1 : 0;
    if (rec.violation && rec.truth_inclusion) {
      ++out.violations_with_inclusion;
      if (trace) trace->write({{"type", "safety_violation"}, {"step", i}});
    }
    inclusion_prev = rec.truth_inclusion;
    window.push_back(tr);
    if (static_cast<int>(window.size()) > cfg.batch) window.erase(window.begin());
    J += disc * cfg.stage_cost(s, rec.a);
    disc *= cfg.gamma;

    if (trace) {
      json j{{"type", "step"},
             {"step", i},
             {"epoch", epoch},
             {"state", harness::to_json(s)},
             {"action", harness::to_json(rec.a)},
             {"next_state", harness::to_json(rec.s_next)},
             {"noise", harness::to_json(rec.w)},
             {"theta_index", theta_index},
             {"theta_hash", theta_hash(ctl.params().flatten())},
             {"feasible", sol.feasible},
             {"value", finite_or_max(rec.value)},
             {"core_value", finite_or_max(rec.core_value)},
             {"truth_inclusion", rec.truth_inclusion},
             {"noise_in_model", rec.noise_in_model},
             {"residuals_in_model", rec.residuals_in_model},
             {"in_mrpi", rec.in_mrpi},
             {"violation", rec.violation},
             {"fallback", rec.fallback}};
      if (rec.decision)
        j["decision"] = {{"outcome", safety::to_string(rec.decision->outcome)},
                         {"reason", safety::to_string(rec.decision->reason)},
                         {"alpha", alpha_base * rec.decision->alpha_used},
                         {"fail_count", rec.decision->fail_count}};
      trace->write(j);
    }
    out.steps.push_back(rec);
    s = rec.s_next;

    // Deferred candidate: shrink after n deferrals.
    if (had_candidate && rec.decision && rec.decision->outcome == safety::UpdateOutcome::Deferred &&
        g.fail_count >= cfg.step.n_fail) {
      try {
        safety::backtrack_shrink<TubeCtl>(g, cfg.step, compute);
        ++out.shrinks;
        if (trace) trace->write({{"type", "shrink"}, {"step", i}, {"alpha", alpha_base * g.alpha}});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::AlphaUnderflow) throw;
        out.alpha_underflow = true;
      }
    }

    const bool epoch_end = (i + 1) % cfg.batch == 0;
    if (cfg.mode == safety::GateMode::Backtracking) {
      if (epoch_end && !g.candidate) propose_now(i + 1);
    } else if (static_cast<int>(window.size()) == cfg.batch) {
      if (g.candidate) g.candidate.reset();
      dispersion_from = std::make_pair(rec.s, rec.a);
      propose_now(i + 1);
    }
    if (epoch_end) {
      TubeEpochRecord er;
      er.epoch = epoch;
      er.theta_index = theta_index;
      er.mean_abs_td = last_td;
      er.J = J;
      er.alpha = alpha_base * g.alpha;
      out.epochs.push_back(er);
      if (trace)
        trace->write({{"type", "epoch"},
                      {"epoch", epoch},
                      {"theta_index", theta_index},
                      {"theta", harness::to_json(g.current->params().flatten())},
                      {"mean_abs_td", er.mean_abs_td},
                      {"J", er.J},
                      {"alpha", er.alpha}});
      J = 0.0;
      disc = 1.0;
    }
  }
  out.thetas.back().last_step = total - 1;
  close_theta(out.thetas.back(), g.current);
  const auto& d = g.current->derived();
  out.W_final = d.W;
  out.terminal_final = d.terminal_set();
  if (d.mrpi) out.mrpi_final = *d.mrpi;
  out.x_r_final = g.current->params().x_r;
  if (trace) {
    for (std::size_t k = 0; k < out.thetas.size(); ++k)
      trace->write({{"type", "theta"},
                    {"index", k},
                    {"theta", harness::to_json(out.thetas[k].theta)},
                    {"delta_hat", out.thetas[k].delta_hat},
                    {"first_step", out.thetas[k].first_step},
                    {"last_step", out.thetas[k].last_step},
                    {"mrpi", out.thetas[k].mrpi ? geometry::to_json(*out.thetas[k].mrpi) : json()}});
    json res = json::array();
    for (const auto& r : hull) res.push_back(harness::to_json(r));
    trace->write({{"type", "sets"},
                  {"W_initial", geometry::to_json(out.W_initial)},
                  {"W_final", geometry::to_json(out.W_final)},
                  {"terminal_initial", geometry::to_json(out.terminal_initial)},
                  {"terminal_final", geometry::to_json(out.terminal_final)},
                  {"mrpi_final", geometry::to_json(out.mrpi_final)},
                  {"octagon", geometry::to_json(truth.noise_set())},
                  {"residual_hull", res},
                  {"x_r_final", harness::to_json(out.x_r_final)}});
  }
  return out;
}

}  // namespace srmpc::harness
