#pragma once

// Batch Q-learning for the tube MPC parameters.
//   delta_i = l(s_i, a_i) + gamma V(s_{i+1}) - Q(s_i, a_i)
//   direction = grad_theta 1/2 sum delta_i^2
// dQ/dtheta and dV/dtheta come from the Lagrangian of the parametric QP at the returned
// primal-dual point (envelope theorem). The Lagrangian's theta-dependence goes through
// DARE, tightening and the terminal rows, so it is differentiated by central differences
// of the problem data only; no QP is re-solved.

#include <srmpc/learning/constrained_step.hpp>
#include <srmpc/learning/scalar_gradient.hpp>
#include <srmpc/mpc/tube_mpc.hpp>

#include <functional>

namespace srmpc::learning {

using mpc::DerivedIngredients;
using mpc::TubeMpc;
using mpc::TubeMpcParameters;

/// Problem data at theta +- h e_j for every coordinate j.
struct PerturbedData {
  std::vector<TubeMpcParameters> plus_params, minus_params;
  std::vector<DerivedIngredients> plus, minus;
  Vec steps;
};

inline PerturbedData perturb_data(const TubeMpc& mpc, double rel_step = 1e-6) {
  const auto& prob = mpc.problem();
  const Vec theta = mpc.params().flatten();
  const auto n = theta.size();
  PerturbedData pd;
  pd.steps.resize(n);
  mpc::DeriveOptions opt;
  opt.full = false;
  opt.like = &mpc.derived();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = rel_step * std::max(1.0, std::abs(theta(j)));
    pd.steps(j) = h;
    for (int sgn : {1, -1}) {
      Vec t = theta;
      t(j) += sgn * h;
      auto p = TubeMpcParameters::unflatten(t, prob.nx(), prob.nu(), prob.facets());
      auto d = mpc::derive(prob, p, opt);
      (sgn > 0 ? pd.plus_params : pd.minus_params).push_back(std::move(p));
      (sgn > 0 ? pd.plus : pd.minus).push_back(std::move(d));
    }
  }
  return pd;
}

/// d(value)/d(theta) at a solved point.
inline Vec envelope_gradient(const TubeMpc& mpc, const Vec& s, const mpc::MpcSolution& sol, const PerturbedData& pd) {
  require(sol.feasible, "envelope gradient needs a feasible solution");
  const auto n = pd.steps.size();
  Vec g(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const double lp = mpc.lagrangian(s, sol, pd.plus_params[uj], pd.plus[uj]);
    const double lm = mpc.lagrangian(s, sol, pd.minus_params[uj], pd.minus[uj]);
    g(j) = (lp - lm) / (2.0 * pd.steps(j));
  }
  return g;
}

using StageCost = std::function<double(const Vec&, const Vec&)>;

struct TdBatch {
  Vec td;            // one entry per transition
  GradientEstimate direction;
  double mean_abs_td = 0.0;
};

/// Direction of 1/2 sum delta_i^2 over a batch of transitions.
inline TdBatch q_batch_update_direction(const TubeMpc& mpc, const std::vector<model::TransitionRecord>& batch,
                                        const StageCost& cost, double gamma) {
  require(!batch.empty(), "q batch: empty batch");
  require(gamma > 0.0 && gamma < 1.0, "q batch: gamma must lie in (0, 1)");
  const auto pd = perturb_data(mpc);
  const auto n = pd.steps.size();
  TdBatch out;
  out.td.resize(static_cast<Eigen::Index>(batch.size()));
  out.direction.grad = Vec::Zero(n);
  out.direction.method = GradientMethod::QBatch;
  out.direction.sample_count = static_cast<int>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    const auto q = mpc.solve(r.s, r.a);
    const auto v = mpc.solve(r.s_next);
    if (!q.feasible || !v.feasible)
      fail(ErrorCode::InfeasiblePoint, "q batch: a batch state is outside the feasible set");
    const double delta = cost(r.s, r.a) + gamma * v.value - q.value;
    out.td(static_cast<Eigen::Index>(i)) = delta;
    out.direction.grad += delta * (gamma * envelope_gradient(mpc, r.s_next, v, pd) - envelope_gradient(mpc, r.s, q, pd));
  }
  out.mean_abs_td = out.td.cwiseAbs().mean();
  return out;
}

/// Index layout of the flattened tube parameters.
struct TubeLayout {
  Eigen::Index nx, nu, facets;
  Eigen::Index Q_begin() const { return nx * (nx + 1) / 2 + nx + 1; }
  Eigen::Index R_begin() const { return Q_begin() + nx * (nx + 1) / 2; }
  Eigen::Index x_r_begin() const { return R_begin() + nu * (nu + 1) / 2; }
  Eigen::Index u_r_begin() const { return x_r_begin() + nx; }
  Eigen::Index M_begin() const { return u_r_begin() + nu; }
  Eigen::Index dim() const { return M_begin() + facets * nx; }
  /// Flat index of the diagonal entry i of an n x n upper-triangle block starting at `begin`.
  static Eigen::Index diag(Eigen::Index begin, Eigen::Index n, Eigen::Index i) {
    Eigen::Index k = begin;
    for (Eigen::Index r = 0; r < i; ++r) k += n - r;
    return k;
  }
  /// Flat index of entry (r, c) of an n x n upper-triangle block.
  static Eigen::Index entry(Eigen::Index begin, Eigen::Index n, Eigen::Index r, Eigen::Index c) {
    if (r > c) std::swap(r, c);
    return diag(begin, n, r) + (c - r);
  }
};

struct TubeConstraintConfig {
  double weight_floor = 1e-4;      // Gershgorin margin of the stage weight
  double reference_margin = 0.02;  // slack left for the tightening to grow with the gain
};

/// Strict diagonal dominance with margin `floor` of the symmetric block at `begin`:
/// theta_ii - sum_j s_j theta_ij >= floor for every sign pattern s.  A linear inner
/// approximation of {S : S - floor I is positive definite}.
inline void append_dominance_rows(ThetaConstraintSet& c, Eigen::Index begin, Eigen::Index n, double floor) {
  const auto dim = c.G.cols();
  const Eigen::Index patterns = Eigen::Index{1} << (n - 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index mask = 0; mask < patterns; ++mask) {
      Mat G = Mat::Zero(1, dim);
      G(0, TubeLayout::diag(begin, n, i)) = -1.0;
      Eigen::Index bit = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        G(0, TubeLayout::entry(begin, n, i, j)) = (mask >> bit++) & 1 ? 1.0 : -1.0;
      }
      c.append_inequalities(G, Vec::Constant(1, -floor));
    }
}

/// Rows C x_r + D u_r <= -c_hat - t_N - tail - margin, with the tightening t_N and the
/// residual tail sum_l h_W(F A_cl^(N+l)) frozen at the incumbent: the reference must be an
/// interior point of the terminal constraints, a necessary condition for a non-empty
/// terminal set (linearized in the gain).
inline std::pair<Mat, Vec> reference_rows(const mpc::TubeProblem& prob, const DerivedIngredients& d, double margin) {
  const Mat F = prob.C - prob.D * d.K;
  Mat FA = F;
  for (int k = 0; k < prob.N; ++k) FA = FA * d.A_cl;
  Vec tail = Vec::Zero(F.rows());
  for (int l = 0; l < 2000; ++l) {
    double biggest = 0.0;
    for (Eigen::Index i = 0; i < F.rows(); ++i) {
      const double h = mpc::detail::support_from_vertices(d.W_vertices, FA.row(i).transpose());
      tail(i) += h;
      biggest = std::max(biggest, std::abs(h));
    }
    if (biggest < 1e-15) break;
    FA = FA * d.A_cl;
  }
  Mat G(F.rows(), prob.nx() + prob.nu());
  G << prob.C, prob.D;
  // c_tight row N already includes c_hat.
  const Vec h = -d.c_tight.row(prob.N).transpose() - tail - Vec::Constant(F.rows(), margin);
  return {G, h};
}

/// Linear part of the parameter set plus post-checks:
///   membership of every observed residual in W (on the M entries),
///   steady state (A - I) x_r + B u_r + b = 0,
///   diagonal dominance of the stage weight,
///   reference inside the incumbent's terminal constraints (when given);
/// post-checks: stage weight positive definite, derive succeeds (bounded W, DARE,
/// non-empty terminal set).
inline ThetaConstraintSet tube_constraints(const mpc::TubeProblem& prob, const std::vector<Vec>& residuals,
                                           const DerivedIngredients* incumbent = nullptr,
                                           const TubeConstraintConfig& cfg = {}) {
  const TubeLayout L{prob.nx(), prob.nu(), prob.facets()};
  const auto n = L.dim();
  auto c = ThetaConstraintSet::none(n);
  // Only hull vertices matter for fixed m.
  const auto mc = model::membership_constraints_from_residuals(model::hull_residuals(residuals), prob.m);
  if (mc.G.rows() > 0) {
    Mat G = Mat::Zero(mc.G.rows(), n);
    G.middleCols(L.M_begin(), mc.G.cols()) = mc.G;
    c.append_inequalities(G, mc.h);
  }
  append_dominance_rows(c, L.Q_begin(), L.nx, cfg.weight_floor);
  append_dominance_rows(c, L.R_begin(), L.nu, cfg.weight_floor);
  if (incumbent) {
    const auto [Gr, hr] = reference_rows(prob, *incumbent, cfg.reference_margin);
    Mat G = Mat::Zero(Gr.rows(), n);
    G.middleCols(L.x_r_begin(), L.nx + L.nu) = Gr;
    c.append_inequalities(G, hr);
  }
  c.E = Mat::Zero(L.nx, n);
  c.E.middleCols(L.x_r_begin(), L.nx) = prob.model.A - Mat::Identity(L.nx, L.nx);
  c.E.middleCols(L.u_r_begin(), L.nu) = prob.model.B;
  c.e = -prob.model.b;
  // The eigenvalue margin keeps finite-difference neighbours of an accepted point valid.
  c.post_check = [prob, floor = cfg.weight_floor](const Vec& theta) -> std::string {
    const auto p = TubeMpcParameters::unflatten(theta, prob.nx(), prob.nu(), prob.facets());
    Eigen::SelfAdjointEigenSolver<Mat> eq(p.Q), er(p.R);
    if (eq.eigenvalues().minCoeff() < 0.5 * floor || er.eigenvalues().minCoeff() < 0.5 * floor)
      return "stage weight below the eigenvalue floor";
    try {
      mpc::DeriveOptions opt;
      opt.full = true;
      const auto d = mpc::derive(prob, p, opt);
      if (solvers::spectral_radius(d.A_cl) >= 1.0) return "closed loop not strictly stable";
    } catch (const Error& e) {
      return e.what();
    }
    return {};
  };
  return c;
}

}  // namespace srmpc::learning
