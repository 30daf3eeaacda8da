#pragma once

// Update gate: a proposed parameter is only switched in at a state where its
// controller is feasible; otherwise the incumbent keeps acting and, after n
// deferrals, the step is shrunk by rho and recomputed.

#include <srmpc/learning/constrained_step.hpp>

#include <functional>
#include <optional>

namespace srmpc::safety {

enum class GateMode { Backtracking, FeasibilityConstrained };
enum class UpdateOutcome { Applied, Deferred };
enum class UpdateReason { NewFeasibleHere, NewInfeasibleHere, PostCheckFailed };

inline const char* to_string(GateMode m) {
  return m == GateMode::Backtracking ? "backtracking" : "feasibility";
}
inline const char* to_string(UpdateOutcome o) { return o == UpdateOutcome::Applied ? "applied" : "deferred"; }
inline const char* to_string(UpdateReason r) {
  switch (r) {
    case UpdateReason::NewFeasibleHere: return "new_feasible_here";
    case UpdateReason::NewInfeasibleHere: return "new_infeasible_here";
    case UpdateReason::PostCheckFailed: return "post_check_failed";
  }
  return "?";
}

struct UpdateDecision {
  UpdateOutcome outcome = UpdateOutcome::Applied;
  UpdateReason reason = UpdateReason::NewFeasibleHere;
  double alpha_used = 1.0;
  int fail_count = 0;
};

template <class Theta>
struct GateState {
  Theta current;
  std::optional<Theta> candidate;
  double alpha = 1.0;
  int fail_count = 0;
  GateMode mode = GateMode::Backtracking;
};

/// Controller evaluated at a state: the action, or nullopt when infeasible.
template <class Theta>
using PolicyFn = std::function<std::optional<Vec>(const Theta&, const Vec&)>;

template <class Theta>
struct GateStep {
  Vec action;
  std::optional<UpdateDecision> decision;  // empty when no candidate was pending
};

/// Evaluate both controllers at s; promote the candidate if it is feasible here.
template <class Theta>
GateStep<Theta> gate(const Vec& s, GateState<Theta>& g, const PolicyFn<Theta>& policy) {
  const auto inc = policy(g.current, s);
  if (!inc) fail(ErrorCode::IncumbentInfeasible, "incumbent controller is infeasible at the current state");
  GateStep<Theta> out;
  out.action = *inc;
  if (!g.candidate) return out;
  UpdateDecision d;
  d.alpha_used = g.alpha;
  if (const auto cand = policy(*g.candidate, s)) {
    out.action = *cand;
    g.current = std::move(*g.candidate);
    g.candidate.reset();
    d.outcome = UpdateOutcome::Applied;
    d.reason = UpdateReason::NewFeasibleHere;
  } else {
    ++g.fail_count;
    d.outcome = UpdateOutcome::Deferred;
    d.reason = UpdateReason::NewInfeasibleHere;
  }
  d.fail_count = g.fail_count;
  out.decision = d;
  return out;
}

inline constexpr double kAlphaFloor = 1e-12;

/// alpha <- rho alpha and recompute the candidate; `recompute` returns nullopt when its
/// post-checks reject the step (shrinking continues). fail_count is reset.
template <class Theta>
void backtrack_shrink(GateState<Theta>& g, const learning::UpdateStepConfig& cfg,
                      const std::function<std::optional<Theta>(double)>& recompute) {
  require(g.fail_count >= cfg.n_fail, "backtrack: shrink requested before n deferrals");
  do {
    g.alpha *= cfg.rho;
    if (g.alpha < kAlphaFloor) {
      g.candidate.reset();
      g.fail_count = 0;
      fail(ErrorCode::AlphaUnderflow, "step scale fell below 1e-12");
    }
    g.candidate = recompute(g.alpha);
  } while (!g.candidate);
  g.fail_count = 0;
}

/// Compute a candidate at the given alpha, shrinking on post-check failures.
template <class Theta>
void propose(GateState<Theta>& g, const learning::UpdateStepConfig& cfg,
             const std::function<std::optional<Theta>(double)>& compute) {
  g.fail_count = 0;
  g.candidate = compute(g.alpha);
  if (!g.candidate) {
    g.fail_count = cfg.n_fail;
    backtrack_shrink(g, cfg, compute);
  }
}

}  // namespace srmpc::safety
