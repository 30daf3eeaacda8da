#pragma once

// Constrained parameter update
//   min_theta 1/2 |theta - theta_p|_H^2 + alpha grad'(theta - theta_p)
//   s.t. G theta <= h, E theta = e,
// followed by nonlinear post-checks on the candidate.

#include <srmpc/solvers/qp.hpp>

#include <functional>
#include <string>

namespace srmpc::learning {

struct UpdateStepConfig {
  double alpha = 1.0;
  Mat H_metric;  // empty selects the identity
  double rho = 0.9;
  int n_fail = 1;

  void validate(Eigen::Index dim) const {
    require(alpha >= 0.0 && alpha <= 1.0, "step: alpha must lie in [0, 1]");
    require(rho > 0.0 && rho < 1.0, "step: rho must lie in (0, 1)");
    require(n_fail >= 1, "step: n_fail must be positive");
    if (H_metric.size() > 0) {
      require(H_metric.rows() == dim && H_metric.cols() == dim, "step: metric dimension mismatch");
      Eigen::LLT<Mat> llt(H_metric);
      require(llt.info() == Eigen::Success, "step: metric must be positive definite");
    }
  }
};

struct ThetaConstraintSet {
  Mat G;
  Vec h;
  Mat E;
  Vec e;
  /// Returns an empty string when the candidate passes, else the reason.
  std::function<std::string(const Vec&)> post_check;

  static ThetaConstraintSet none(Eigen::Index dim) {
    ThetaConstraintSet c;
    c.G.resize(0, dim);
    c.h.resize(0);
    c.E.resize(0, dim);
    c.e.resize(0);
    return c;
  }

  void append_inequalities(const Mat& G2, const Vec& h2) {
    Mat G3(G.rows() + G2.rows(), G2.cols());
    Vec h3(G3.rows());
    if (G.rows() > 0) G3.topRows(G.rows()) = G;
    G3.bottomRows(G2.rows()) = G2;
    h3 << h, h2;
    G = std::move(G3);
    h = std::move(h3);
  }

  bool satisfied(const Vec& theta, double tol = 1e-9) const {
    if (G.rows() > 0 && (G * theta - h).maxCoeff() > tol) return false;
    if (E.rows() > 0 && (E * theta - e).lpNorm<Eigen::Infinity>() > tol) return false;
    return true;
  }
};

struct StepResult {
  Vec theta;
  solvers::QpSolution qp;
};

inline StepResult constrained_step(const Vec& theta_p, const Vec& grad, const UpdateStepConfig& cfg,
                                   const ThetaConstraintSet& c) {
  const auto n = theta_p.size();
  require(grad.size() == n, "step: gradient dimension mismatch");
  cfg.validate(n);
  StepResult out;
  if (cfg.alpha == 0.0) {
    out.theta = theta_p;
    return out;
  }
  solvers::QpProblem qp;
  qp.hessian = cfg.H_metric.size() > 0 ? cfg.H_metric : Mat::Identity(n, n);
  qp.gradient = cfg.alpha * grad;
  qp.in_matrix = c.G.rows() > 0 ? c.G : Mat(0, n);
  qp.in_rhs = c.G.rows() > 0 ? Vec(c.h - c.G * theta_p) : Vec(0);
  qp.eq_matrix = c.E.rows() > 0 ? c.E : Mat(0, n);
  qp.eq_rhs = c.E.rows() > 0 ? Vec(c.e - c.E * theta_p) : Vec(0);
  out.qp = solvers::solve_qp(qp);
  if (!out.qp.optimal()) fail(ErrorCode::ConstraintQpInfeasible, "parameter-update QP has no feasible point");
  out.theta = theta_p + out.qp.primal;
  if (c.post_check) {
    const std::string why = c.post_check(out.theta);
    if (!why.empty()) fail(ErrorCode::PostCheckFailed, why);
  }
  return out;
}

}  // namespace srmpc::learning
