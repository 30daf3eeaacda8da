#pragma once

/**
 * @file tube_mpc.hpp
 * @brief Tube MPC with constraint tightening, parametrized for learning.
 *
 *   Q(s, a) = min  sum_{k<N} |(x_k - x_r, u_k - u_r)|_H^2 + |x_N - x_r|_P^2
 *                  + |x_0|_Lambda^2 + lambda' x_0 + l
 *             s.t. x_0 = s, u_0 = a,
 *                  x_{k+1} = A x_k + B u_k + b,
 *                  C x_k + D u_k + c_k <= 0,
 *                  G x_N + g <= 0.
 *
 * c_k tightens the raw rows by the k-step error propagation of the ancillary law
 * u = v - K (x - z); G, g is the maximal RPI set of that law around (x_r, u_r)
 * for the residual disturbance A_cl^N W, inside the stage-N tightened rows.
 */

#include <srmpc/geometry/invariant_sets.hpp>
#include <srmpc/model/linear_model.hpp>
#include <srmpc/solvers/dare.hpp>
#include <srmpc/solvers/qp.hpp>

#include <optional>
#include <string>
#include <vector>

namespace srmpc::mpc {

using geometry::Polytope;

/// Fixed problem data (not learned).
struct TubeProblem {
  model::LinearModel model;
  Mat C;      // raw constraint rows C x + D u + c_hat <= 0
  Mat D;
  Vec c_hat;
  Vec m;      // noise-set offsets, kept fixed
  int N = 50;
  double mrpi_eps = 1e-3;

  Eigen::Index nx() const { return model.nx(); }
  Eigen::Index nu() const { return model.nu(); }
  Eigen::Index facets() const { return m.size(); }

  /// Box constraints x_lo <= x <= x_hi, u_lo <= u <= u_hi in the C, D, c_hat form.
  static TubeProblem boxed(const model::LinearModel& mdl, const Vec& x_lo, const Vec& x_hi, const Vec& u_lo,
                           const Vec& u_hi, int facets, int N) {
    TubeProblem p;
    p.model = mdl;
    const auto nx = mdl.nx(), nu = mdl.nu();
    const auto rows = 2 * (nx + nu);
    p.C = Mat::Zero(rows, nx);
    p.D = Mat::Zero(rows, nu);
    p.c_hat = Vec::Zero(rows);
    for (Eigen::Index i = 0; i < nx; ++i) {
      p.C(i, i) = 1.0;
      p.c_hat(i) = -x_hi(i);
      p.C(nx + i, i) = -1.0;
      p.c_hat(nx + i) = x_lo(i);
    }
    for (Eigen::Index i = 0; i < nu; ++i) {
      p.D(2 * nx + i, i) = 1.0;
      p.c_hat(2 * nx + i) = -u_hi(i);
      p.D(2 * nx + nu + i, i) = -1.0;
      p.c_hat(2 * nx + nu + i) = u_lo(i);
    }
    p.m = Vec::Ones(facets);
    p.N = N;
    return p;
  }
};

/// theta = {Lambda, lambda, l, H, x_r, u_r, M}; H is block diagonal (state block Q, input block R).
struct TubeMpcParameters {
  Mat Lambda;
  Vec lambda;
  double l = 0.0;
  Mat Q;
  Mat R;
  Vec x_r;
  Vec u_r;
  Mat M;

  Mat H_cost() const {
    const auto nx = Q.rows(), nu = R.rows();
    Mat H = Mat::Zero(nx + nu, nx + nu);
    H.topLeftCorner(nx, nx) = Q;
    H.bottomRightCorner(nu, nu) = R;
    return H;
  }

  /// Flattened layout: upper triangle of Lambda, lambda, l, upper triangle of Q,
  /// upper triangle of R, x_r, u_r, M row by row.
  Vec flatten() const {
    std::vector<double> v;
    auto sym = [&v](const Mat& S) {
      for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (Eigen::Index j = i; j < S.cols(); ++j) v.push_back(S(i, j));
    };
    sym(Lambda);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) v.push_back(lambda(i));
    v.push_back(l);
    sym(Q);
    sym(R);
    for (Eigen::Index i = 0; i < x_r.size(); ++i) v.push_back(x_r(i));
    for (Eigen::Index i = 0; i < u_r.size(); ++i) v.push_back(u_r(i));
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      for (Eigen::Index j = 0; j < M.cols(); ++j) v.push_back(M(i, j));
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  static Eigen::Index dim(Eigen::Index nx, Eigen::Index nu, Eigen::Index facets) {
    return nx * (nx + 1) / 2 + nx + 1 + nx * (nx + 1) / 2 + nu * (nu + 1) / 2 + nx + nu + facets * nx;
  }

  static TubeMpcParameters unflatten(const Vec& v, Eigen::Index nx, Eigen::Index nu, Eigen::Index facets) {
    require(v.size() == dim(nx, nu, facets), "parameter vector has the wrong length");
    TubeMpcParameters p;
    Eigen::Index k = 0;
    auto sym = [&](Eigen::Index n) {
      Mat S(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) S(i, j) = S(j, i) = v(k++);
      return S;
    };
    p.Lambda = sym(nx);
    p.lambda = v.segment(k, nx);
    k += nx;
    p.l = v(k++);
    p.Q = sym(nx);
    p.R = sym(nu);
    p.x_r = v.segment(k, nx);
    k += nx;
    p.u_r = v.segment(k, nu);
    k += nu;
    p.M.resize(facets, nx);
    for (Eigen::Index i = 0; i < facets; ++i)
      for (Eigen::Index j = 0; j < nx; ++j) p.M(i, j) = v(k++);
    return p;
  }

  /// Human-readable coordinate names in flatten() order.
  static std::vector<std::string> names(Eigen::Index nx, Eigen::Index nu, Eigen::Index facets) {
    std::vector<std::string> out;
    auto sym = [&out](const std::string& base, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) out.push_back(base + "_" + std::to_string(i) + std::to_string(j));
    };
    sym("Lambda", nx);
    for (Eigen::Index i = 0; i < nx; ++i) out.push_back("lambda_" + std::to_string(i));
    out.push_back("l");
    sym("Q", nx);
    sym("R", nu);
    for (Eigen::Index i = 0; i < nx; ++i) out.push_back("x_r_" + std::to_string(i));
    for (Eigen::Index i = 0; i < nu; ++i) out.push_back("u_r_" + std::to_string(i));
    for (Eigen::Index i = 0; i < facets; ++i)
      for (Eigen::Index j = 0; j < nx; ++j) out.push_back("M_" + std::to_string(i) + std::to_string(j));
    return out;
  }
};

struct DerivedIngredients {
  Mat K;      // ancillary gain, u = -K x
  Mat P;      // terminal weight
  Mat A_cl;
  Polytope W;
  std::vector<Vec> W_vertices;
  Mat c_tight;                    // (N + 1) x rows; row k holds c_k
  geometry::TaggedRows terminal;  // rows on z = x - x_r
  std::vector<int> terminal_keep; // irredundant terminal rows
  Mat G;                          // terminal set G x + g <= 0
  Vec g;
  std::optional<Polytope> mrpi;   // outer mRPI approximation around x_r (full derive only)

  Polytope terminal_set() const { return {G, -g}; }
};

struct DeriveOptions {
  bool full = true;                             // redundancy pruning, emptiness test, mRPI
  const DerivedIngredients* like = nullptr;     // reuse terminal depth and kept rows
};

namespace detail {

inline double support_from_vertices(const std::vector<Vec>& V, const Vec& d) {
  double best = -kInf;
  for (const auto& v : V) best = std::max(best, d.dot(v));
  return best;
}

inline std::vector<Vec> noise_vertices(const Polytope& W) {
  try {
    return geometry::extreme_points(W);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnboundedDirection || e.code() == ErrorCode::EmptyPolytope)
      fail(ErrorCode::TerminalEmpty, std::string("noise set is not a bounded non-empty polytope: ") + e.what());
    throw;
  }
}

}  // namespace detail

inline void validate_parameters(const TubeProblem& prob, const TubeMpcParameters& p) {
  const auto nx = prob.nx(), nu = prob.nu();
  require(p.Lambda.rows() == nx && p.Lambda.cols() == nx, "Lambda dimension");
  require(p.lambda.size() == nx, "lambda dimension");
  require(p.Q.rows() == nx && p.Q.cols() == nx && p.R.rows() == nu && p.R.cols() == nu, "stage weight dimension");
  require(p.x_r.size() == nx && p.u_r.size() == nu, "reference dimension");
  require(p.M.rows() == prob.facets() && p.M.cols() == nx, "noise normals dimension");
}

/// Everything the QP needs that is a function of theta.
inline DerivedIngredients derive(const TubeProblem& prob, const TubeMpcParameters& p, const DeriveOptions& opt = {}) {
  validate_parameters(prob, p);
  const Mat& A = prob.model.A;
  const Mat& B = prob.model.B;
  DerivedIngredients d;
  Eigen::SelfAdjointEigenSolver<Mat> eh(p.H_cost());
  if (eh.eigenvalues().minCoeff() <= 0.0) fail(ErrorCode::RiccatiFailure, "stage weight is not positive definite");
  try {
    const auto r = solvers::dare(A, B, p.Q, p.R);
    d.K = r.K;
    d.P = r.P;
  } catch (const Error& e) {
    fail(ErrorCode::RiccatiFailure, e.what());
  }
  d.A_cl = A - B * d.K;
  d.W = Polytope(p.M, prob.m);
  d.W_vertices = detail::noise_vertices(d.W);

  // Stage tightening.
  const Mat F = prob.C - prob.D * d.K;
  const auto rows = F.rows();
  d.c_tight.resize(prob.N + 1, rows);
  Mat FA = F;
  Vec acc = Vec::Zero(rows);
  for (int k = 0; k <= prob.N; ++k) {
    d.c_tight.row(k) = (prob.c_hat + acc).transpose();
    for (Eigen::Index i = 0; i < rows; ++i)
      acc(i) += detail::support_from_vertices(d.W_vertices, FA.row(i).transpose());
    FA = FA * d.A_cl;
  }
  const Vec tN = d.c_tight.row(prob.N).transpose() - prob.c_hat;

  // Terminal rows on z = x - x_r: F z <= -c_hat - C x_r - D u_r - t_N, disturbance A_cl^N W.
  Mat AN = Mat::Identity(A.rows(), A.rows());
  for (int k = 0; k < prob.N; ++k) AN = d.A_cl * AN;
  std::vector<Vec> wn_vertices;
  for (const auto& v : d.W_vertices) wn_vertices.push_back(AN * v);
  const Vec h_term = -prob.c_hat - prob.C * p.x_r - prob.D * p.u_r - tN;
  // Support of A_cl^N W is evaluated on the mapped vertices; wrap it as a polytope only
  // for the routines that require one.
  Polytope WN;
  if (A.rows() == 2) {
    std::vector<geometry::Point2> pts;
    for (const auto& v : wn_vertices) pts.emplace_back(v(0), v(1));
    WN = Polytope::from_vertices_2d(pts);
  } else {
    WN = geometry::linear_image(d.W, AN);
  }

  if (opt.like) {
    d.terminal = geometry::tagged_rows(d.A_cl, F, h_term, WN, opt.like->terminal.depth);
    d.terminal_keep = opt.like->terminal_keep;
  } else {
    try {
      d.terminal = geometry::tagged_max_rpi(d.A_cl, F, h_term, WN);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EmptySet) fail(ErrorCode::TerminalEmpty, "terminal set is empty");
      throw;
    }
    // Keep only rows not implied by the others.
    std::vector<int> keep;
    for (Eigen::Index i = 0; i < d.terminal.rows.rows(); ++i) keep.push_back(static_cast<int>(i));
    if (opt.full) {
      for (std::size_t k = 0; k < keep.size();) {
        const int idx = keep[k];
        Mat N(static_cast<Eigen::Index>(keep.size()), A.rows());
        Vec b(N.rows());
        for (std::size_t j = 0; j < keep.size(); ++j) {
          N.row(static_cast<Eigen::Index>(j)) = d.terminal.rows.row(keep[j]);
          b(static_cast<Eigen::Index>(j)) = d.terminal.rhs(keep[j]) + (keep[j] == idx ? 1.0 : 0.0);
        }
        const auto s = solvers::solve_lp(-d.terminal.rows.row(idx).transpose(), N, b);
        const double scale = std::max(1.0, d.terminal.rows.row(idx).norm());
        if (s.optimal() && -s.value <= d.terminal.rhs(idx) - 1e-9 * scale)
          keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(k));
        else
          ++k;
      }
    }
    d.terminal_keep = keep;
  }
  const auto nt = static_cast<Eigen::Index>(d.terminal_keep.size());
  d.G.resize(nt, A.rows());
  d.g.resize(nt);
  for (Eigen::Index i = 0; i < nt; ++i) {
    const int r = d.terminal_keep[i];
    d.G.row(i) = d.terminal.rows.row(r);
    d.g(i) = -d.terminal.rows.row(r).dot(p.x_r) - d.terminal.rhs(r);
  }
  if (opt.full) {
    if (geometry::is_empty(d.terminal_set())) fail(ErrorCode::TerminalEmpty, "terminal set is empty");
    if (A.rows() <= 2) d.mrpi = geometry::min_rpi(d.A_cl, d.W, prob.mrpi_eps).set.translated(p.x_r);
  }
  return d;
}

struct MpcSolution {
  Mat nominal_states;  // nx x (N + 1)
  Mat nominal_inputs;  // nu x N
  double value = kInf;       // full objective including the initial-state terms
  double core_value = kInf;  // tracking cost only (no Lambda, lambda, l terms)
  bool feasible = false;
  std::vector<int> active_set;
  Vec dual_in;
  Vec dual_eq;
  int iterations = 0;
};

/// Parametric QP in the stacked inputs U = (u_0, ..., u_{N-1}).
class TubeMpc {
 public:
  TubeMpc(TubeProblem prob, TubeMpcParameters params, const DeriveOptions& opt = {})
      : prob_(std::move(prob)), params_(std::move(params)) {
    derived_ = derive(prob_, params_, opt);
    build();
  }

  TubeMpc(TubeProblem prob, TubeMpcParameters params, DerivedIngredients derived)
      : prob_(std::move(prob)), params_(std::move(params)), derived_(std::move(derived)) {
    build();
  }

  const TubeProblem& problem() const { return prob_; }
  const TubeMpcParameters& params() const { return params_; }
  const DerivedIngredients& derived() const { return derived_; }

  /// Number of stage rows in the QP (the terminal rows follow).
  Eigen::Index stage_rows() const { return prob_.N * prob_.C.rows(); }

  MpcSolution solve(const Vec& s, const std::optional<Vec>& a = std::nullopt) const {
    const auto nx = prob_.nx(), nu = prob_.nu();
    require(s.size() == nx, "tube mpc: state dimension mismatch");
    solvers::QpProblem qp;
    qp.hessian = hess_;
    qp.gradient = grad_s_ * s + grad_0_;
    qp.in_matrix = in_U_;
    qp.in_rhs = in_0_ - in_s_ * s;
    if (a) {
      require(a->size() == nu, "tube mpc: action dimension mismatch");
      qp.eq_matrix = Mat::Zero(nu, U_dim());
      qp.eq_matrix.leftCols(nu).setIdentity();
      qp.eq_rhs = *a;
    } else {
      qp.eq_matrix.resize(0, U_dim());
      qp.eq_rhs.resize(0);
    }
    MpcSolution out;
    const auto sol = solvers::solve_qp(qp);
    out.iterations = sol.iterations;
    if (!sol.optimal()) return out;
    out.feasible = true;
    out.active_set = sol.active_set;
    out.dual_in = sol.dual_in;
    out.dual_eq = sol.dual_eq;
    const Vec X = Phi_ * s + Gamma_ * sol.primal + beta_;
    out.nominal_states = Eigen::Map<const Mat>(X.data(), nx, prob_.N + 1);
    out.nominal_inputs = Eigen::Map<const Mat>(sol.primal.data(), nu, prob_.N);
    out.core_value = tracking_cost(out.nominal_states, out.nominal_inputs, params_, derived_.P);
    out.value = out.core_value + initial_cost(s, params_);
    return out;
  }

  double value(const Vec& s) const { return solve(s).value; }
  double action_value(const Vec& s, const Vec& a) const { return solve(s, a).value; }
  bool is_feasible(const Vec& s) const { return solve(s).feasible; }
  bool is_feasible_with_action(const Vec& s, const Vec& a) const { return solve(s, a).feasible; }

  std::optional<Vec> policy(const Vec& s) const {
    const auto sol = solve(s);
    if (!sol.feasible) return std::nullopt;
    return Vec(sol.nominal_inputs.col(0));
  }

  static double tracking_cost(const Mat& X, const Mat& U, const TubeMpcParameters& p, const Mat& P) {
    double c = 0.0;
    for (Eigen::Index k = 0; k < U.cols(); ++k) {
      const Vec ex = X.col(k) - p.x_r;
      const Vec eu = U.col(k) - p.u_r;
      c += ex.dot(p.Q * ex) + eu.dot(p.R * eu);
    }
    const Vec eN = X.col(U.cols()) - p.x_r;
    return c + eN.dot(P * eN);
  }

  static double initial_cost(const Vec& s, const TubeMpcParameters& p) {
    return s.dot(p.Lambda * s) + p.lambda.dot(s) + p.l;
  }

  /// Lagrangian of the QP in the problem data of (params, derived) at a fixed primal-dual point.
  double lagrangian(const Vec& s, const MpcSolution& sol, const TubeMpcParameters& p,
                    const DerivedIngredients& d) const {
    double L = tracking_cost(sol.nominal_states, sol.nominal_inputs, p, d.P) + initial_cost(s, p);
    const auto rows = prob_.C.rows();
    for (int k = 0; k < prob_.N; ++k)
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double mu = sol.dual_in(k * rows + i);
        if (mu == 0.0) continue;
        L += mu * (prob_.C.row(i).dot(sol.nominal_states.col(k)) + prob_.D.row(i).dot(sol.nominal_inputs.col(k)) +
                   d.c_tight(k, i));
      }
    const Vec xN = sol.nominal_states.col(prob_.N);
    for (Eigen::Index t = 0; t < d.G.rows(); ++t) {
      const double mu = sol.dual_in(stage_rows() + t);
      if (mu == 0.0) continue;
      L += mu * (d.G.row(t).dot(xN) + d.g(t));
    }
    return L;
  }

  Eigen::Index U_dim() const { return prob_.N * prob_.nu(); }

 private:
  void build() {
    const auto nx = prob_.nx(), nu = prob_.nu();
    const int N = prob_.N;
    const Mat& A = prob_.model.A;
    const Mat& B = prob_.model.B;
    const Vec& b = prob_.model.b;
    // X = Phi s + Gamma U + beta, stacked x_0..x_N.
    Phi_ = Mat::Zero(nx * (N + 1), nx);
    Gamma_ = Mat::Zero(nx * (N + 1), nu * N);
    beta_ = Vec::Zero(nx * (N + 1));
    Phi_.topRows(nx).setIdentity();
    for (int k = 1; k <= N; ++k) {
      Phi_.middleRows(nx * k, nx) = A * Phi_.middleRows(nx * (k - 1), nx);
      Gamma_.middleRows(nx * k, nx) = A * Gamma_.middleRows(nx * (k - 1), nx);
      Gamma_.block(nx * k, nu * (k - 1), nx, nu) = B;
      beta_.segment(nx * k, nx) = A * beta_.segment(nx * (k - 1), nx) + b;
    }
    // Cost weights.
    const auto& p = params_;
    Mat Qbar = Mat::Zero(nx * (N + 1), nx * (N + 1));
    for (int k = 0; k < N; ++k) Qbar.block(nx * k, nx * k, nx, nx) = p.Q;
    Qbar.block(nx * N, nx * N, nx, nx) = derived_.P;
    Mat Rbar = Mat::Zero(nu * N, nu * N);
    for (int k = 0; k < N; ++k) Rbar.block(nu * k, nu * k, nu, nu) = p.R;
    Vec Xr(nx * (N + 1)), Ur(nu * N);
    for (int k = 0; k <= N; ++k) Xr.segment(nx * k, nx) = p.x_r;
    for (int k = 0; k < N; ++k) Ur.segment(nu * k, nu) = p.u_r;
    const Mat GtQ = Gamma_.transpose() * Qbar;
    hess_ = 2.0 * (GtQ * Gamma_ + Rbar);
    hess_ = 0.5 * (hess_ + hess_.transpose());
    grad_s_ = 2.0 * GtQ * Phi_;
    grad_0_ = 2.0 * GtQ * (beta_ - Xr) - 2.0 * Rbar * Ur;

    // Stage rows, then terminal rows: in_U U <= in_0 - in_s s.
    const auto rows = prob_.C.rows();
    const auto nt = derived_.G.rows();
    in_U_ = Mat::Zero(rows * N + nt, nu * N);
    in_s_ = Mat::Zero(rows * N + nt, nx);
    in_0_ = Vec::Zero(rows * N + nt);
    for (int k = 0; k < N; ++k) {
      const auto r0 = rows * k;
      in_U_.middleRows(r0, rows) = prob_.C * Gamma_.middleRows(nx * k, nx);
      in_U_.block(r0, nu * k, rows, nu) += prob_.D;
      in_s_.middleRows(r0, rows) = prob_.C * Phi_.middleRows(nx * k, nx);
      in_0_.segment(r0, rows) = -derived_.c_tight.row(k).transpose() - prob_.C * beta_.segment(nx * k, nx);
    }
    if (nt > 0) {
      in_U_.bottomRows(nt) = derived_.G * Gamma_.bottomRows(nx);
      in_s_.bottomRows(nt) = derived_.G * Phi_.bottomRows(nx);
      in_0_.tail(nt) = -derived_.g - derived_.G * beta_.tail(nx);
    }
  }

  TubeProblem prob_;
  TubeMpcParameters params_;
  DerivedIngredients derived_;
  Mat Phi_, Gamma_;
  Vec beta_;
  Mat hess_, grad_s_;
  Vec grad_0_;
  Mat in_U_, in_s_;
  Vec in_0_;
};

/// Level set {s : V(s) <= delta / (1 - gamma)}.
inline bool level_set_membership(double value, double delta, double gamma) {
  require(delta >= 0.0 && gamma > 0.0 && gamma < 1.0, "level set: delta >= 0 and gamma in (0, 1) required");
  return value <= delta / (1.0 - gamma);
}

/// max over samples and noise vertices of V(s+) - gamma V(s), floored at zero; `value` maps a
/// state to the Lyapunov value (infinite when infeasible, such samples are skipped).
template <class ValueFn, class PolicyFn>
double estimate_delta(const model::LinearModel& mdl, const std::vector<Vec>& W_vertices,
                      const std::vector<Vec>& samples, double gamma, ValueFn&& value, PolicyFn&& policy) {
  double delta = 0.0;
  for (const auto& s : samples) {
    const double v = value(s);
    if (!std::isfinite(v)) continue;
    const std::optional<Vec> a = policy(s);
    if (!a) continue;
    const Vec c = mdl.predict(s, *a);
    for (const auto& w : W_vertices) {
      const double vn = value(Vec(c + w));
      if (!std::isfinite(vn)) return kInf;
      delta = std::max(delta, vn - gamma * v);
    }
  }
  return delta;
}

}  // namespace srmpc::mpc
