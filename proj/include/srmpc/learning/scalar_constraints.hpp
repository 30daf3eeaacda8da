#pragma once

// Parameter constraints of the scalar example: the boundary states must be kept
// safe, the closed loop must stay stable, and optionally the one-step worst-case
// successors must stay inside the region of attraction.

#include <srmpc/learning/constrained_step.hpp>
#include <srmpc/mpc/scalar_mpc.hpp>

#include <sstream>
#include <vector>

namespace srmpc::learning {

enum class BoundaryReading {
  Clipped,    // a_b = clip(-K s_b + a_s, u_min, u_max(K))
  Projected,  // a_b additionally projected onto the state-safe inputs (always satisfied)
};

struct ScalarConstraintConfig {
  std::vector<double> boundary_states{0.0, 0.1};
  BoundaryReading reading = BoundaryReading::Clipped;
};

inline double boundary_action(const mpc::ScalarSystem& sys, const mpc::ScalarMpcParameters& p, double s_b,
                              BoundaryReading reading) {
  const double clipped = mpc::clip(-p.K * s_b + p.a_s, sys.u_min, sys.u_max(p.K));
  if (reading == BoundaryReading::Clipped) return clipped;
  return std::min(sys.u_state(s_b), clipped);
}

/// Linear part: stability interval on K and, for the clipped reading, the convex
/// inner approximation -K s_b + a_s <= (s_max - w_hi - A s_b) / B of each boundary
/// condition (exact while u_max(K) exceeds the right-hand side). `worst_case`
/// adds K-bounds keeping those successors above the saturated lower endpoint.
inline ThetaConstraintSet scalar_constraints(const mpc::ScalarSystem& sys, const ScalarConstraintConfig& cfg,
                                             const std::vector<double>& worst_case = {}) {
  ThetaConstraintSet c = ThetaConstraintSet::none(2);
  std::vector<Eigen::RowVector2d> rows;
  std::vector<double> rhs;
  rows.emplace_back(1.0, 0.0);
  rhs.push_back(sys.K_max());
  rows.emplace_back(-1.0, 0.0);
  rhs.push_back(-sys.K_min());
  if (cfg.reading == BoundaryReading::Clipped)
    for (double sb : cfg.boundary_states) {
      rows.emplace_back(-sb, 1.0);
      rhs.push_back(sys.u_state(sb));
    }
  for (double swc : worst_case) {
    // -(B (u_max0 - slope K) + w_lo) / (A - 1) <= swc
    rows.emplace_back(sys.B * sys.u_max_slope, 0.0);
    rhs.push_back(sys.B * sys.u_max0 + sys.w_lo + (sys.A - 1.0) * swc);
  }
  Mat G(static_cast<Eigen::Index>(rows.size()), 2);
  Vec h(G.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    G.row(static_cast<Eigen::Index>(i)) = rows[i];
    h(static_cast<Eigen::Index>(i)) = rhs[i];
  }
  c.G = G;
  c.h = h;
  c.post_check = [sys, cfg, worst_case](const Vec& theta) -> std::string {
    const auto p = mpc::ScalarMpcParameters::from_flat(theta);
    if (!mpc::stability_margin_ok(sys, p)) return "closed loop outside the stability margin";
    for (double sb : cfg.boundary_states) {
      const double a = boundary_action(sys, p, sb, cfg.reading);
      if (sys.A * sb + sys.B * a + sys.w_hi > sys.s_max + 1e-9) {
        std::ostringstream os;
        os << "boundary state " << sb << " is not kept safe";
        return os.str();
      }
    }
    if (!worst_case.empty()) {
      const auto roa = mpc::region_of_attraction_1d(sys, p);
      for (double swc : worst_case)
        if (!roa.contains(swc, 1e-9)) return "worst-case successor outside the region of attraction";
    }
    return {};
  };
  return c;
}

/// One-step worst-case successors of the incumbent at (s, a).
inline std::vector<double> worst_case_successors(const mpc::ScalarSystem& sys, double s, double a) {
  return {sys.A * s + sys.B * a + sys.w_lo, sys.A * s + sys.B * a + sys.w_hi};
}

}  // namespace srmpc::learning
