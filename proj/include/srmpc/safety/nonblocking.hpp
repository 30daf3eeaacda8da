#pragma once

// Post-run diagnostics for the update gate: how long proposals waited, and a
// Monte Carlo check of the bound P[s_k in A for all k] <= mu(A) phi_bar.

#include <srmpc/core.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace srmpc::safety {

struct Proposal {
  int proposed_at = 0;
  int applied_at = -1;  // -1: still pending when the run ended
};

struct DeferralStats {
  int proposals = 0;
  int applied = 0;
  int pending = 0;
  std::vector<int> durations;  // applied_at - proposed_at for applied proposals
  int max_duration = 0;
  double mean_duration = 0.0;
  bool all_applied() const { return pending == 0; }
};

inline DeferralStats deferral_stats(const std::vector<Proposal>& ps) {
  DeferralStats st;
  st.proposals = static_cast<int>(ps.size());
  for (const auto& p : ps) {
    if (p.applied_at < 0) {
      ++st.pending;
      continue;
    }
    require(p.applied_at >= p.proposed_at, "deferral: applied before proposed");
    ++st.applied;
    st.durations.push_back(p.applied_at - p.proposed_at);
  }
  if (!st.durations.empty()) {
    st.max_duration = *std::max_element(st.durations.begin(), st.durations.end());
    double sum = 0.0;
    for (int d : st.durations) sum += d;
    st.mean_duration = sum / static_cast<double>(st.durations.size());
  }
  return st;
}

struct VisitBoundConfig {
  std::function<double(double)> step;  // s -> f(s, pi(s)) before noise
  double noise_half_width = 0.1;       // w ~ U[-h, h], density 1/(2h)
  double a_lo = -0.01;
  double a_hi = 0.01;
  double s0 = 0.0;
  int horizon = 1;  // steps after s0 that must all stay in A
  int trajectories = 10000;
  unsigned long long seed = 1;
};

struct VisitBoundReport {
  double frequency = 0.0;
  double bound = 0.0;   // mu(A) phi_bar
  double margin = 0.0;  // 3 sigma binomial at the bound
  bool pass = false;
};

inline VisitBoundReport visit_bound_check(const VisitBoundConfig& cfg) {
  require(cfg.noise_half_width > 0.0 && cfg.a_hi > cfg.a_lo, "visit_bound: invalid sets");
  require(cfg.s0 >= cfg.a_lo && cfg.s0 <= cfg.a_hi, "visit_bound: initial state must lie in A");
  require(cfg.horizon >= 1 && cfg.trajectories > 0, "visit_bound: horizon and trajectory count must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> w(-cfg.noise_half_width, cfg.noise_half_width);
  int inside = 0;
  for (int t = 0; t < cfg.trajectories; ++t) {
    double s = cfg.s0;
    bool all = true;
    for (int k = 0; k < cfg.horizon && all; ++k) {
      s = cfg.step(s) + w(rng);
      all = s >= cfg.a_lo && s <= cfg.a_hi;
    }
    inside += all ? 1 : 0;
  }
  VisitBoundReport r;
  r.frequency = static_cast<double>(inside) / cfg.trajectories;
  r.bound = (cfg.a_hi - cfg.a_lo) / (2.0 * cfg.noise_half_width);
  const double p = std::min(1.0, r.bound);
  r.margin = 3.0 * std::sqrt(p * (1.0 - p) / cfg.trajectories);
  r.pass = r.frequency <= r.bound + r.margin;
  return r;
}

}  // namespace srmpc::safety
