#pragma once

// Scalar projection MPC: the input closest to -K s + a_s that keeps the
// worst-case successor below the state bound and respects [u_min, u_max(K)].

#include <srmpc/core.hpp>

#include <algorithm>
#include <cmath>
#include <optional>

namespace srmpc::mpc {

struct ScalarSystem {
  double A = 1.1;
  double B = 0.1;
  double w_lo = -0.01;  // noise interval used by both the plant and the controller
  double w_hi = 0.01;
  double s_max = 0.1;
  double u_min = -10.0;
  double u_max0 = 10.0;  // upper input bound is u_max0 - u_max_slope * K
  double u_max_slope = 0.5;
  double stability_eps = 1e-6;

  double u_max(double K) const { return u_max0 - u_max_slope * K; }
  double K_min() const { return (A - 1.0 + stability_eps) / B; }
  double K_max() const { return (A + 1.0 - stability_eps) / B; }
  /// Largest input keeping A s + B u + w_hi <= s_max.
  double u_state(double s) const { return (s_max - w_hi - A * s) / B; }
};

struct ScalarMpcParameters {
  double K = 2.0;
  double a_s = 0.0;

  Vec flat() const { return Eigen::Vector2d(K, a_s); }
  static ScalarMpcParameters from_flat(const Vec& v) { return {v(0), v(1)}; }
};

inline bool stability_margin_ok(const ScalarSystem& sys, const ScalarMpcParameters& p) {
  const double acl = sys.A - sys.B * p.K;
  return acl >= -1.0 + sys.stability_eps - 1e-12 && acl <= 1.0 - sys.stability_eps + 1e-12;
}

inline double clip(double v, double lo, double hi) { return std::max(lo, std::min(v, hi)); }

/// Closed-form solution of min (u - (a_s - K s))^2 s.t. A s + B u + w_hi <= s_max, u in [u_min, u_max(K)].
inline std::optional<double> scalar_policy(const ScalarSystem& sys, const ScalarMpcParameters& p, double s) {
  const double hi = std::min(sys.u_max(p.K), sys.u_state(s));
  if (hi < sys.u_min) return std::nullopt;
  return clip(-p.K * s + p.a_s, sys.u_min, hi);
}

inline double scalar_stage_cost(double s, double a) { return (s - 40.0) * (s - 40.0) + 1e-4 * a * a; }

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double s, double tol = 0.0) const { return s >= lo - tol && s <= hi + tol; }
};

namespace detail {

/// True when the closed loop driven by the constant noise w never loses feasibility
/// and does not run away to -infinity over `horizon` steps.
inline bool survives(const ScalarSystem& sys, const ScalarMpcParameters& p, double s, double w, int horizon) {
  for (int k = 0; k < horizon; ++k) {
    const auto u = scalar_policy(sys, p, s);
    if (!u || s > sys.s_max + 1e-12) return false;
    s = sys.A * s + sys.B * *u + w;
    if (!std::isfinite(s) || s < -1e6) return false;
  }
  return true;
}

}  // namespace detail

/**
 * Region of attraction of the scalar controller as an interval.
 *
 * The lower endpoint is found by bisection on the divergence of the closed loop
 * under the worst (lowest) noise, where the input saturates at u_max(K); the upper
 * endpoint is the state bound (or the last state with a feasible input, if lower).
 * With `nominal` the noise is set to zero instead.
 */
inline Interval region_of_attraction_1d(const ScalarSystem& sys, const ScalarMpcParameters& p, bool nominal = false,
                                        int horizon = 2000) {
  const double w = nominal ? 0.0 : sys.w_lo;
  Interval out;
  // Feasible input exists iff u_state(s) >= u_min.
  out.hi = std::min(sys.s_max, (sys.s_max - sys.w_hi - sys.B * sys.u_min) / sys.A);
  double good = out.hi;
  if (!detail::survives(sys, p, good, w, horizon)) {
    out.lo = out.hi;
    return out;
  }
  double step = 1.0;
  double bad = good - step;
  while (detail::survives(sys, p, bad, w, horizon)) {
    good = bad;
    step *= 2.0;
    bad = good - step;
    if (bad < -1e6) {
      out.lo = -kInf;
      return out;
    }
  }
  for (int it = 0; it < 200 && good - bad > 1e-12; ++it) {
    const double mid = 0.5 * (good + bad);
    (detail::survives(sys, p, mid, w, horizon) ? good : bad) = mid;
  }
  out.lo = good;
  return out;
}

/// Closed-form lower endpoint when the input is saturated at u_max(K) along the worst case.
inline double saturated_lower_endpoint(const ScalarSystem& sys, double K, bool nominal = false) {
  const double w = nominal ? 0.0 : sys.w_lo;
  return -(sys.B * sys.u_max(K) + w) / (sys.A - 1.0);
}

inline bool scalar_is_feasible(const ScalarSystem& sys, const ScalarMpcParameters& p, double s) {
  return region_of_attraction_1d(sys, p).contains(s);
}

}  // namespace srmpc::mpc
