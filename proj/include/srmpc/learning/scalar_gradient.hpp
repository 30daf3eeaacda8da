#pragma once

// Closed-loop cost of the scalar controller by policy evaluation on a state grid,
// and its gradient in (K, a_s) by central differences.

#include <srmpc/mpc/scalar_mpc.hpp>

#include <vector>

namespace srmpc::learning {

enum class GradientMethod { ExactGrid, ActorCritic, FiniteDifference, QBatch };

struct GradientEstimate {
  Vec grad;
  GradientMethod method = GradientMethod::ExactGrid;
  int sample_count = 0;
};

struct ScalarCostConfig {
  double gamma = 0.9;
  double grid_lo = -12.0;
  double grid_hi = 1.0;
  int grid_points = 2601;
  int noise_nodes = 21;      // midpoint rule over the noise interval
  double start_lo = 0.0;     // J averages the value over U[start_lo, start_hi]
  double start_hi = 0.1;
  int start_nodes = 101;
  double fd_step = 1e-4;
  double richardson_tol = 1e-3;  // relative change of J under grid doubling; infinite skips the check
  double tol = 1e-11;            // relative sup-norm change that stops the evaluation
};

/// Value of the closed loop on the grid, V = l + gamma * E[V(s+)], by fixed-point iteration.
inline std::vector<double> scalar_policy_values(const mpc::ScalarSystem& sys, const mpc::ScalarMpcParameters& p,
                                                const ScalarCostConfig& cfg, int grid_points) {
  const int n = grid_points;
  const double h = (cfg.grid_hi - cfg.grid_lo) / (n - 1);
  const int q = cfg.noise_nodes;
  std::vector<double> cost(n);
  std::vector<int> idx(static_cast<std::size_t>(n) * q);
  std::vector<double> wt(static_cast<std::size_t>(n) * q);
  for (int i = 0; i < n; ++i) {
    const double s = cfg.grid_lo + i * h;
    // Above the feasible range the input is pinned at its lower bound; such states are never visited.
    const double u = mpc::scalar_policy(sys, p, s).value_or(sys.u_min);
    cost[i] = mpc::scalar_stage_cost(s, u);
    for (int k = 0; k < q; ++k) {
      const double w = sys.w_lo + (k + 0.5) * (sys.w_hi - sys.w_lo) / q;
      const double sn = std::clamp(sys.A * s + sys.B * u + w, cfg.grid_lo, cfg.grid_hi);
      const double t = (sn - cfg.grid_lo) / h;
      const int j = std::min(static_cast<int>(t), n - 2);
      idx[static_cast<std::size_t>(i) * q + k] = j;
      wt[static_cast<std::size_t>(i) * q + k] = t - j;
    }
  }
  std::vector<double> V(cost), next(n);
  for (int it = 0; it < 100000; ++it) {
    double diff = 0.0, scale = 0.0;
    for (int i = 0; i < n; ++i) {
      double ev = 0.0;
      for (int k = 0; k < q; ++k) {
        const std::size_t o = static_cast<std::size_t>(i) * q + k;
        ev += (1.0 - wt[o]) * V[idx[o]] + wt[o] * V[idx[o] + 1];
      }
      next[i] = cost[i] + cfg.gamma * ev / q;
      diff = std::max(diff, std::abs(next[i] - V[i]));
      scale = std::max(scale, std::abs(next[i]));
    }
    V.swap(next);
    if (diff <= cfg.tol * scale) return V;
  }
  fail(ErrorCode::NotConverged, "scalar policy evaluation did not converge");
}

inline double scalar_cost_on_grid(const mpc::ScalarSystem& sys, const mpc::ScalarMpcParameters& p,
                                  const ScalarCostConfig& cfg, int grid_points) {
  const auto V = scalar_policy_values(sys, p, cfg, grid_points);
  const double h = (cfg.grid_hi - cfg.grid_lo) / (grid_points - 1);
  double J = 0.0;
  for (int k = 0; k < cfg.start_nodes; ++k) {
    const double s = cfg.start_lo + (k + 0.5) * (cfg.start_hi - cfg.start_lo) / cfg.start_nodes;
    const double t = (s - cfg.grid_lo) / h;
    const int j = std::min(static_cast<int>(t), grid_points - 2);
    J += (1.0 - (t - j)) * V[j] + (t - j) * V[j + 1];
  }
  return J / cfg.start_nodes;
}

/// Expected discounted cost from the start distribution.
inline double scalar_cost(const mpc::ScalarSystem& sys, const mpc::ScalarMpcParameters& p,
                          const ScalarCostConfig& cfg = {}) {
  return scalar_cost_on_grid(sys, p, cfg, cfg.grid_points);
}

/// Relative change of J when the grid spacing is halved.
inline double scalar_grid_refinement_error(const mpc::ScalarSystem& sys, const mpc::ScalarMpcParameters& p,
                                           const ScalarCostConfig& cfg = {}) {
  const double coarse = scalar_cost_on_grid(sys, p, cfg, cfg.grid_points);
  const double fine = scalar_cost_on_grid(sys, p, cfg, 2 * cfg.grid_points - 1);
  return std::abs(fine - coarse) / std::max(1.0, std::abs(fine));
}

inline GradientEstimate exact_grad_scalar(const mpc::ScalarSystem& sys, const mpc::ScalarMpcParameters& p,
                                          const ScalarCostConfig& cfg = {}) {
  if (std::isfinite(cfg.richardson_tol) && scalar_grid_refinement_error(sys, p, cfg) > cfg.richardson_tol)
    fail(ErrorCode::GridTooCoarse, "scalar cost changes by more than the tolerance under grid refinement");
  GradientEstimate g;
  g.grad = Vec::Zero(2);
  const Vec theta = p.flat();
  for (int k = 0; k < 2; ++k) {
    Vec tp = theta, tm = theta;
    tp(k) += cfg.fd_step;
    tm(k) -= cfg.fd_step;
    g.grad(k) = (scalar_cost(sys, mpc::ScalarMpcParameters::from_flat(tp), cfg) -
                 scalar_cost(sys, mpc::ScalarMpcParameters::from_flat(tm), cfg)) /
                (2.0 * cfg.fd_step);
  }
  g.method = GradientMethod::ExactGrid;
  g.sample_count = cfg.grid_points;
  return g;
}

}  // namespace srmpc::learning
