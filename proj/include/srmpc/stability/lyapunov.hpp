#pragma once

// Lyapunov / ISS telemetry over closed-loop traces with parameter updates.
//   W(s, theta_p) = V(s) + zeta |theta_p - theta*|
// All functions are post-processing on recorded values; no controller is solved here
// except in alpha_v sampling, which takes value functions as callbacks.

#include <srmpc/core.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace srmpc::stability {

struct LyapunovRecord {
  int step = 0;
  int epoch = 0;
  double v_hat = 0.0;    // V_{theta(i)}(s_i)
  double delta_p = 0.0;  // |theta(i) - theta*|
  double w_value = 0.0;
  bool in_level_set = false;  // s_i in L_{theta(i)}
  double iss_residual = 0.0;
  // Filled in by annotate().
  double delta_hat = 0.0;  // delta estimate of theta(i)
  double level = 0.0;      // delta_hat / (1 - gamma)
  bool update_next = false;  // theta(i+1) != theta(i)
};

inline double w_value(double v_hat, double delta_p, double zeta) {
  if (!std::isfinite(v_hat)) fail(ErrorCode::InfeasibleState, "W: value is not finite");
  require(zeta >= 0.0, "W: zeta must be non-negative");
  return v_hat + zeta * delta_p;
}

inline double w_value(const Vec& theta_p, const Vec& theta_star, double v_hat, double zeta) {
  return w_value(v_hat, (theta_p - theta_star).norm(), zeta);
}

/// zeta >= alpha_V (r + 1) / (1 - r).
inline double zeta_min(double alpha_v, double r) {
  require(alpha_v >= 0.0 && r >= 0.0 && r < 1.0, "zeta_min: alpha_V >= 0 and r in [0, 1) required");
  return alpha_v * (r + 1.0) / (1.0 - r);
}

struct RateEstimates {
  double r_hat = kInf;        // max |theta_{p+1} - theta*| / |theta_p - theta*|
  double r_practical = 0.9;   // rate used for the offset fit
  double q_hat = 0.0;         // max (Delta_{p+1} - r_practical Delta_p)^+
  double alpha_v_hat = 0.0;
  double zeta_min = kInf;     // from r_hat when r_hat < 1, else from r_practical
  bool strict_armed = false;  // r_hat < 1
};

inline RateEstimates estimate_rates(const std::vector<Vec>& thetas, const Vec& theta_star, double alpha_v_hat = 0.0,
                                    double q_floor = 1e-9, double r_practical = 0.9) {
  require(thetas.size() >= 3, "rates: need at least three parameters");
  RateEstimates r;
  r.r_practical = r_practical;
  r.alpha_v_hat = alpha_v_hat;
  double rmax = -1.0;
  for (std::size_t p = 0; p + 1 < thetas.size(); ++p) {
    const double dp = (thetas[p] - theta_star).norm();
    const double dn = (thetas[p + 1] - theta_star).norm();
    r.q_hat = std::max(r.q_hat, dn - r_practical * dp);
    if (dp > q_floor) rmax = std::max(rmax, dn / dp);
  }
  if (rmax < 0.0) fail(ErrorCode::DegenerateSequence, "rates: every distance to theta* is below the floor");
  r.r_hat = rmax;
  r.strict_armed = rmax < 1.0;
  r.zeta_min = zeta_min(alpha_v_hat, r.strict_armed ? rmax : r_practical);
  return r;
}

/// max over samples s of |V_next(s) - V_prev(s)| / |theta_next - theta_prev|; samples where
/// either value is infinite are outside the intersection and skipped.
inline double alpha_v_sample(const std::vector<Vec>& samples, const std::function<double(const Vec&)>& v_prev,
                             const std::function<double(const Vec&)>& v_next, double theta_step) {
  if (theta_step <= 0.0) return 0.0;
  double best = 0.0;
  for (const auto& s : samples) {
    const double a = v_prev(s), b = v_next(s);
    if (!std::isfinite(a) || !std::isfinite(b)) continue;
    best = std::max(best, std::abs(b - a) / theta_step);
  }
  return best;
}

struct Violation {
  int step = 0;
  std::string kind;
  double amount = 0.0;
};

/// Decrease of V within a fixed parameter: for consecutive steps without an update,
/// V(s_{i+1}) < V(s_i) whenever s_i is outside the level set.
inline std::vector<Violation> check_v_decrease(const std::vector<LyapunovRecord>& rec, double tol = 1e-9) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i + 1 < rec.size(); ++i) {
    if (rec[i].update_next || rec[i].in_level_set) continue;
    const double inc = rec[i + 1].v_hat - rec[i].v_hat;
    if (inc >= -tol * std::max(1.0, rec[i].v_hat)) out.push_back({rec[i].step, "v_not_decreasing", inc});
  }
  return out;
}

/// W must decrease at steps outside the level set; inside it, without an update, the
/// successor must stay in the same level set.
inline std::vector<Violation> check_w_decrease(const std::vector<LyapunovRecord>& rec, double tol = 1e-9) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i + 1 < rec.size(); ++i) {
    const auto& a = rec[i];
    const auto& b = rec[i + 1];
    if (!a.in_level_set) {
      const double inc = b.w_value - a.w_value;
      if (inc >= -tol * std::max(1.0, a.w_value)) out.push_back({a.step, "w_not_decreasing", inc});
    } else if (!a.update_next && b.v_hat > a.level * (1.0 + tol) + tol) {
      out.push_back({a.step, "left_level_set", b.v_hat - a.level});
    }
  }
  return out;
}

struct IssReport {
  std::vector<double> knots_x;  // beta as a monotone piecewise-linear map through (0, 0)
  std::vector<double> knots_y;
  double margin = 0.0;          // min over records of beta(Delta) - residual
  bool fit_ok = false;
  std::string failure;

  double beta(double x) const {
    if (knots_x.empty() || x <= 0.0) return 0.0;
    if (x >= knots_x.back()) return knots_y.back();
    const auto it = std::upper_bound(knots_x.begin(), knots_x.end(), x);
    const auto k = static_cast<std::size_t>(it - knots_x.begin());
    const double x0 = k == 0 ? 0.0 : knots_x[k - 1], y0 = k == 0 ? 0.0 : knots_y[k - 1];
    return y0 + (knots_y[k] - y0) * (x - x0) / (knots_x[k] - x0);
  }
};

/// residual_i = V_{theta(i+1)}(s_{i+1}) - V_{theta(i)}(s_i) + (1 - gamma) V_{theta(i)}(s_i) - delta_hat(i),
/// stored in rec[i].iss_residual by annotate(). beta(Delta) is the smallest monotone
/// upper envelope of the residuals over Delta, interpolated linearly from (0, 0).
inline IssReport check_iss(const std::vector<LyapunovRecord>& rec, double tol = 1e-9) {
  IssReport r;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i + 1 < rec.size(); ++i) pts.emplace_back(rec[i].delta_p, rec[i].iss_residual);
  std::sort(pts.begin(), pts.end());
  for (const auto& [x, y] : pts)
    if (x <= 0.0 && y > tol) {
      r.failure = "positive residual at zero parameter distance";
      r.margin = -y;
      return r;
    }
  double running = 0.0;
  for (const auto& [x, y] : pts) {
    if (x <= 0.0) continue;
    running = std::max(running, y);
    if (!r.knots_x.empty() && r.knots_x.back() == x) {
      r.knots_y.back() = running;
    } else {
      r.knots_x.push_back(x);
      r.knots_y.push_back(running);
    }
  }
  r.margin = kInf;
  for (const auto& [x, y] : pts) r.margin = std::min(r.margin, r.beta(x) - y);
  if (pts.empty()) r.margin = 0.0;
  r.fit_ok = r.margin >= -tol;
  if (!r.fit_ok) r.failure = "no monotone fit";
  return r;
}

/// Fill in W, level-set flags and ISS residuals. `delta_hat(i)` returns the estimate for
/// the parameter acting at step i; `theta_index(i)` identifies that parameter.
inline void annotate(std::vector<LyapunovRecord>& rec, const std::vector<int>& theta_index,
                     const std::function<double(std::size_t)>& delta_hat, double gamma, double zeta) {
  require(theta_index.size() == rec.size(), "annotate: index length mismatch");
  for (std::size_t i = 0; i < rec.size(); ++i) {
    auto& r = rec[i];
    r.delta_hat = delta_hat(i);
    r.level = r.delta_hat / (1.0 - gamma);
    r.in_level_set = r.v_hat <= r.level;
    r.w_value = w_value(r.v_hat, r.delta_p, zeta);
    r.update_next = i + 1 < rec.size() && theta_index[i + 1] != theta_index[i];
    r.iss_residual = i + 1 < rec.size() ? rec[i + 1].v_hat - r.v_hat + (1.0 - gamma) * r.v_hat - r.delta_hat : 0.0;
  }
}

}  // namespace srmpc::stability
