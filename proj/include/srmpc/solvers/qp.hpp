#pragma once

/**
 * @file qp.hpp
 * @brief Dense primal active-set solver for convex QPs and LPs.
 *
 * Problem form:
 *
 *   min  1/2 x'Hx + g'x
 *   s.t. E x  = e
 *        A x <= b
 *
 * Multipliers follow the Lagrangian L = f + dual_eq'(Ex - e) + dual_in'(Ax - b),
 * so dual_in >= 0 at an optimum and Hx + g + E'dual_eq + A'dual_in = 0.
 *
 * A phase-1 LP (minimise the maximal violation) provides the starting point;
 * the main loop is the textbook primal active-set method with a most-negative
 * multiplier exit rule and a switch to Bland's lowest-index rule once
 * degenerate steps accumulate.
 */

#include <srmpc/core.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace srmpc::solvers {

struct QpProblem {
  Mat hessian;
  Vec gradient;
  Mat eq_matrix;
  Vec eq_rhs;
  Mat in_matrix;
  Vec in_rhs;

  Eigen::Index dim() const { return gradient.size(); }
};

enum class QpStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::Unbounded: return "Unbounded";
  }
  return "?";
}

struct QpSolution {
  Vec primal;
  Vec dual_eq;
  Vec dual_in;
  std::vector<int> active_set;  ///< inequality rows in the final working set
  double value = kInf;
  QpStatus status = QpStatus::Infeasible;
  int iterations = 0;

  bool optimal() const { return status == QpStatus::Optimal; }
};

struct QpOptions {
  double feasibility_tol = tol::feasibility;
  double optimality_tol = tol::optimality;
  int max_iterations = 0;  ///< 0 selects 20 * (n + m) + 200
};

/// KKT residuals of a candidate solution, in the problem's original scaling.
struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;  ///< most negative inequality multiplier, as a positive number
  double complementarity = 0.0;
};

inline KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& s) {
  KktResiduals r;
  const Eigen::Index n = p.dim();
  Vec grad = p.gradient;
  if (p.hessian.size() > 0) grad += p.hessian * s.primal;
  if (p.eq_matrix.rows() > 0) grad += p.eq_matrix.transpose() * s.dual_eq;
  if (p.in_matrix.rows() > 0) grad += p.in_matrix.transpose() * s.dual_in;
  r.stationarity = n > 0 ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  if (p.eq_matrix.rows() > 0)
    r.primal = (p.eq_matrix * s.primal - p.eq_rhs).lpNorm<Eigen::Infinity>();
  if (p.in_matrix.rows() > 0) {
    const Vec slack = p.in_matrix * s.primal - p.in_rhs;
    r.primal = std::max(r.primal, std::max(0.0, slack.maxCoeff()));
    r.dual = std::max(0.0, -s.dual_in.minCoeff());
    r.complementarity = (slack.array() * s.dual_in.array()).abs().maxCoeff();
  }
  return r;
}

namespace detail {

/// Normalised copy of the constraint data plus bookkeeping to map back.
struct ScaledConstraints {
  Mat E;                   // independent, unit-norm equality rows
  Vec e;
  std::vector<int> eq_src;  // original index of each kept equality row
  Vec eq_scale;             // kept row = original row * eq_scale
  Mat A;                    // unit-norm inequality rows (zero rows removed)
  Vec b;
  std::vector<int> in_src;
  Vec in_scale;
};

inline constexpr double kTinyRow = 1e-14;

/// Returns std::nullopt when the constraint data alone proves infeasibility.
inline std::optional<ScaledConstraints> scale_constraints(const QpProblem& p, double feas_tol) {
  const Eigen::Index n = p.dim();
  ScaledConstraints sc;

  // Equalities: normalise, then keep a maximal independent subset.
  std::vector<int> eq_rows;
  std::vector<double> eq_scales;
  Mat basis(n, 0);
  for (Eigen::Index i = 0; i < p.eq_matrix.rows(); ++i) {
    const double nrm = p.eq_matrix.row(i).norm();
    if (nrm < kTinyRow) {
      if (std::abs(p.eq_rhs(i)) > feas_tol) return std::nullopt;
      continue;
    }
    Vec r = p.eq_matrix.row(i).transpose() / nrm;
    Vec res = r;
    if (basis.cols() > 0) res -= basis * (basis.transpose() * r);
    if (res.norm() > 1e-9) {
      basis.conservativeResize(n, basis.cols() + 1);
      basis.col(basis.cols() - 1) = res.normalized();
      eq_rows.push_back(static_cast<int>(i));
      eq_scales.push_back(1.0 / nrm);
    }
  }
  sc.E.resize(static_cast<Eigen::Index>(eq_rows.size()), n);
  sc.e.resize(sc.E.rows());
  sc.eq_scale.resize(sc.E.rows());
  for (std::size_t k = 0; k < eq_rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    sc.E.row(i) = p.eq_matrix.row(eq_rows[k]) * eq_scales[k];
    sc.e(i) = p.eq_rhs(eq_rows[k]) * eq_scales[k];
    sc.eq_scale(i) = eq_scales[k];
  }
  sc.eq_src = std::move(eq_rows);

  std::vector<int> in_rows;
  std::vector<double> in_scales;
  for (Eigen::Index i = 0; i < p.in_matrix.rows(); ++i) {
    const double nrm = p.in_matrix.row(i).norm();
    if (nrm < kTinyRow) {
      if (p.in_rhs(i) < -feas_tol) return std::nullopt;
      continue;
    }
    in_rows.push_back(static_cast<int>(i));
    in_scales.push_back(1.0 / nrm);
  }
  sc.A.resize(static_cast<Eigen::Index>(in_rows.size()), n);
  sc.b.resize(sc.A.rows());
  sc.in_scale.resize(sc.A.rows());
  for (std::size_t k = 0; k < in_rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    sc.A.row(i) = p.in_matrix.row(in_rows[k]) * in_scales[k];
    sc.b(i) = p.in_rhs(in_rows[k]) * in_scales[k];
    sc.in_scale(i) = in_scales[k];
  }
  sc.in_src = std::move(in_rows);
  return sc;
}

/// Core primal active-set loop on already scaled data, started from a feasible point.
class ActiveSetEngine {
 public:
  enum class Result { Optimal, Unbounded, EarlyStop };

  ActiveSetEngine(const Mat& H, const Vec& g, const Mat& E, const Mat& A, const Vec& b,
                  const QpOptions& opt)
      : H_(H), g_(g), E_(E), A_(A), b_(b), opt_(opt), n_(g.size()) {
    zero_hessian_ = H_.size() == 0 || H_.cwiseAbs().maxCoeff() == 0.0;
    if (!zero_hessian_) {
      llt_.compute(H_);
      if (llt_.info() == Eigen::Success) {
        const Vec d = Mat(llt_.matrixL()).diagonal().cwiseAbs();
        const double ratio = d.minCoeff() / std::max(d.maxCoeff(), 1e-300);
        range_space_ = ratio * ratio > 1e-10;
      }
    }
  }

  /// Optional predicate checked after every step; returning true stops the loop.
  template <class Stop>
  Result run(Vec& x, std::vector<int>& working, int& iterations, int max_iter, Stop&& stop) {
    int degenerate = 0;
    bool bland = false;
    bool at_minimiser = false;
    Vec carried;
    while (true) {
      if (iterations >= max_iter)
        fail(ErrorCode::MaxIterations, "active-set iteration cap reached");
      ++iterations;
      const Vec gx = gradient_at(x);
      const Mat Aw = working_rows(working);

      Vec p;
      Vec lambda;
      bool ray = false;
      if (at_minimiser) {
        // A full unblocked step lands on the subspace minimiser; the step's
        // multipliers are the multipliers at the new point.
        p = Vec::Zero(n_);
        lambda = std::move(carried);
      } else {
        subproblem(Aw, gx, p, lambda, ray);
      }
      at_minimiser = false;

      const double step_scale = std::max(1.0, x.lpNorm<Eigen::Infinity>());
      if (!ray && p.lpNorm<Eigen::Infinity>() <= 1e-13 * step_scale) {
        if (lambda.size() == 0 && Aw.rows() > 0) lambda = multipliers(Aw, gx);
        const Eigen::Index m_eq = E_.rows();
        int leave = -1;
        double worst = -opt_.optimality_tol;
        for (std::size_t k = 0; k < working.size(); ++k) {
          const double mu = lambda(m_eq + static_cast<Eigen::Index>(k));
          if (bland) {
            if (mu < -opt_.optimality_tol && (leave < 0 || working[k] < working[leave])) leave = static_cast<int>(k);
          } else if (mu < worst || (mu == worst && leave >= 0 && working[k] < working[leave])) {
            worst = mu;
            leave = static_cast<int>(k);
          }
        }
        if (leave < 0) {
          last_lambda_ = lambda;
          return Result::Optimal;
        }
        working.erase(working.begin() + leave);
        continue;
      }

      // Ratio test over constraints outside the working set.
      double alpha = ray ? kInf : 1.0;
      int block = -1;
      const double dir_tol = 1e-12 * std::max(1.0, p.lpNorm<Eigen::Infinity>());
      for (Eigen::Index i = 0; i < A_.rows(); ++i) {
        if (std::find(working.begin(), working.end(), static_cast<int>(i)) != working.end()) continue;
        const double ap = A_.row(i).dot(p);
        if (ap <= dir_tol) continue;
        const double slack = std::max(0.0, b_(i) - A_.row(i).dot(x));
        const double ratio = slack / ap;
        if (ratio < alpha) {
          alpha = ratio;
          block = static_cast<int>(i);
        }
      }
      if (!std::isfinite(alpha)) return Result::Unbounded;
      x += alpha * p;
      if (block >= 0) {
        working.push_back(block);
      } else if (!ray) {
        at_minimiser = true;
        carried = lambda;
      }

      if (alpha <= 1e-14) {
        if (++degenerate > 2 * (n_ + 5)) bland = true;
      } else {
        degenerate = 0;
      }
      if (stop(x)) return Result::EarlyStop;
    }
  }

  const Vec& last_multipliers() const { return last_lambda_; }

 private:
  Vec gradient_at(const Vec& x) const {
    if (zero_hessian_) return g_;
    return H_ * x + g_;
  }

  Mat working_rows(const std::vector<int>& working) const {
    Mat Aw(E_.rows() + static_cast<Eigen::Index>(working.size()), n_);
    if (E_.rows() > 0) Aw.topRows(E_.rows()) = E_;
    for (std::size_t k = 0; k < working.size(); ++k)
      Aw.row(E_.rows() + static_cast<Eigen::Index>(k)) = A_.row(working[k]);
    return Aw;
  }

  Vec multipliers(const Mat& Aw, const Vec& gx) const {
    return Aw.transpose().colPivHouseholderQr().solve(-gx);
  }

  /// Minimiser of the quadratic model on the null space of Aw, or a descent ray.
  void subproblem(const Mat& Aw, const Vec& gx, Vec& p, Vec& lambda, bool& ray) const {
    ray = false;
    lambda.resize(0);
    if (range_space_) {
      if (Aw.rows() == 0) {
        p = -llt_.solve(gx);
        return;
      }
      const Mat Y = llt_.matrixL().solve(Aw.transpose());
      const Vec yg = llt_.matrixL().solve(gx);
      const Mat S = Y.transpose() * Y;
      lambda = S.ldlt().solve(-Y.transpose() * yg);
      p = -llt_.matrixU().solve(yg + Y * lambda);
      return;
    }

    Mat Z;
    if (Aw.rows() == 0) {
      Z = Mat::Identity(n_, n_);
    } else if (Aw.rows() >= n_) {
      p = Vec::Zero(n_);
      return;
    } else {
      Eigen::HouseholderQR<Mat> qr(Aw.transpose());
      const Mat Q = qr.householderQ();
      Z = Q.rightCols(n_ - Aw.rows());
    }
    const Vec gz = Z.transpose() * gx;
    if (zero_hessian_) {
      if (gz.lpNorm<Eigen::Infinity>() <= opt_.optimality_tol * 1e-3) {
        p = Vec::Zero(n_);
      } else {
        p = -Z * gz;
        ray = true;
      }
      return;
    }
    const Mat Hz = Z.transpose() * H_ * Z;
    Eigen::SelfAdjointEigenSolver<Mat> es(Hz);
    const Vec& ev = es.eigenvalues();
    const Mat& V = es.eigenvectors();
    const double lmax = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    const double zero_cut = 1e-14 * std::max(1.0, lmax);
    const Vec gv = V.transpose() * gz;
    Vec null_part = Vec::Zero(gv.size());
    double smallest_nonzero = kInf;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev(i) <= zero_cut)
        null_part(i) = gv(i);
      else
        smallest_nonzero = std::min(smallest_nonzero, ev(i));
    }
    if (null_part.lpNorm<Eigen::Infinity>() > opt_.optimality_tol * 1e-3) {
      p = -Z * (V * null_part);
      ray = true;
      return;
    }
    if (std::isfinite(smallest_nonzero) && smallest_nonzero / lmax < 1e-12)
      fail(ErrorCode::IllConditioned, "reduced Hessian condition number above 1e12");
    Vec pz = Vec::Zero(gv.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
      if (ev(i) > zero_cut) pz(i) = -gv(i) / ev(i);
    p = Z * (V * pz);
  }

  const Mat& H_;
  const Vec& g_;
  const Mat& E_;
  const Mat& A_;
  const Vec& b_;
  QpOptions opt_;
  Eigen::Index n_;
  bool zero_hessian_ = true;
  bool range_space_ = false;
  Eigen::LLT<Mat> llt_;
  Vec last_lambda_;
};

inline void add_independent(const Mat& E, const Mat& A, const std::vector<int>& candidates,
                            std::vector<int>& working) {
  const Eigen::Index n = A.cols();
  Mat basis(n, 0);
  auto push = [&](const Vec& r) {
    Vec res = r;
    if (basis.cols() > 0) res -= basis * (basis.transpose() * r);
    if (res.norm() <= 1e-9 * std::max(1.0, r.norm())) return false;
    basis.conservativeResize(n, basis.cols() + 1);
    basis.col(basis.cols() - 1) = res.normalized();
    return true;
  };
  for (Eigen::Index i = 0; i < E.rows(); ++i) push(E.row(i).transpose());
  for (int c : candidates) {
    if (basis.cols() >= n) break;
    if (push(A.row(c).transpose())) working.push_back(c);
  }
}

}  // namespace detail

/**
 * @brief Solve a dense convex QP (H positive semidefinite on the equality null space).
 *
 * Deterministic for identical input. Returns Infeasible when the phase-1 LP
 * proves there is no feasible point and Unbounded when a descent ray exists.
 */
inline QpSolution solve_qp(const QpProblem& prob, const QpOptions& opt = {}) {
  const Eigen::Index n = prob.dim();
  require(prob.hessian.size() == 0 || (prob.hessian.rows() == n && prob.hessian.cols() == n),
          "hessian dimension mismatch");
  require(prob.eq_matrix.rows() == prob.eq_rhs.size() && (prob.eq_matrix.rows() == 0 || prob.eq_matrix.cols() == n),
          "equality dimension mismatch");
  require(prob.in_matrix.rows() == prob.in_rhs.size() && (prob.in_matrix.rows() == 0 || prob.in_matrix.cols() == n),
          "inequality dimension mismatch");

  QpSolution sol;
  sol.dual_eq = Vec::Zero(prob.eq_matrix.rows());
  sol.dual_in = Vec::Zero(prob.in_matrix.rows());

  const auto scaled = detail::scale_constraints(prob, opt.feasibility_tol);
  if (!scaled) {
    sol.status = QpStatus::Infeasible;
    sol.primal = Vec::Zero(n);
    return sol;
  }
  const auto& sc = *scaled;
  const Mat H = prob.hessian.size() == 0 ? Mat::Zero(n, n) : Mat(prob.hessian);
  const int max_iter =
      opt.max_iterations > 0 ? opt.max_iterations : static_cast<int>(20 * (n + sc.A.rows()) + 200);

  // Starting point: equality-constrained minimiser when H is definite, else min-norm solution.
  Vec x = Vec::Zero(n);
  {
    const Vec empty_g = prob.gradient;
    Mat noA(0, n);
    Vec nob(0);
    detail::ActiveSetEngine probe(H, empty_g, sc.E, noA, nob, opt);
    bool started = false;
    Eigen::LLT<Mat> llt(H);
    if (llt.info() == Eigen::Success) {
      const Vec d = Mat(llt.matrixL()).diagonal().cwiseAbs();
      if (d.size() > 0 && d.minCoeff() / std::max(d.maxCoeff(), 1e-300) > 1e-5) {
        if (sc.E.rows() == 0) {
          x = -llt.solve(prob.gradient);
        } else {
          const Mat Y = llt.matrixL().solve(sc.E.transpose());
          const Vec yg = llt.matrixL().solve(prob.gradient);
          // x = H^-1(-g - E'l), E x = e
          const Mat S = Y.transpose() * Y;
          const Vec lam = S.ldlt().solve(-Y.transpose() * yg - sc.e);
          x = -llt.matrixU().solve(yg + Y * lam);
        }
        started = true;
      }
    }
    if (!started && sc.E.rows() > 0) x = sc.E.completeOrthogonalDecomposition().solve(sc.e);
    if (sc.E.rows() > 0 && (sc.E * x - sc.e).lpNorm<Eigen::Infinity>() > opt.feasibility_tol) {
      // Independent rows always admit a solution; a residual here means numerical trouble.
      x = sc.E.completeOrthogonalDecomposition().solve(sc.e);
    }
  }

  int iterations = 0;
  std::vector<int> working;
  const double violation = sc.A.rows() > 0 ? (sc.A * x - sc.b).maxCoeff() : -kInf;
  if (violation > opt.feasibility_tol) {
    // Phase 1: min t  s.t.  E x = e,  A x - t <= b,  -t <= 0, started at (x, violation).
    const Eigen::Index m = sc.A.rows();
    Mat E1 = Mat::Zero(sc.E.rows(), n + 1);
    E1.leftCols(n) = sc.E;
    Mat A1 = Mat::Zero(m + 1, n + 1);
    A1.topLeftCorner(m, n) = sc.A;
    A1.block(0, n, m, 1).setConstant(-1.0);
    A1(m, n) = -1.0;
    // Row scaling keeps the phase-1 rows comparable to the originals.
    Vec b1(m + 1);
    b1.head(m) = sc.b;
    b1(m) = 0.0;
    Mat H1 = Mat::Zero(n + 1, n + 1);
    Vec g1 = Vec::Zero(n + 1);
    g1(n) = 1.0;
    Vec x1(n + 1);
    x1.head(n) = x;
    x1(n) = violation;
    std::vector<int> w1;
    const double stop_at = opt.feasibility_tol * 0.5;
    detail::ActiveSetEngine eng(H1, g1, E1, A1, b1, opt);
    eng.run(x1, w1, iterations, max_iter, [&](const Vec& z) { return z(n) <= stop_at; });
    if (x1(n) > opt.feasibility_tol) {
      sol.status = QpStatus::Infeasible;
      sol.primal = x1.head(n);
      sol.iterations = iterations;
      return sol;
    }
    x = x1.head(n);
    std::vector<int> cand;
    for (int r : w1)
      if (r < m) cand.push_back(r);
    std::sort(cand.begin(), cand.end());
    detail::add_independent(sc.E, sc.A, cand, working);
  }

  detail::ActiveSetEngine eng(H, prob.gradient, sc.E, sc.A, sc.b, opt);
  const auto res = eng.run(x, working, iterations, max_iter, [](const Vec&) { return false; });
  sol.iterations = iterations;
  sol.primal = x;
  if (res == detail::ActiveSetEngine::Result::Unbounded) {
    sol.status = QpStatus::Unbounded;
    sol.value = -kInf;
    return sol;
  }
  sol.status = QpStatus::Optimal;
  Vec lambda = eng.last_multipliers();
  if (lambda.size() == 0) {
    // Empty working set: multipliers are all zero.
    lambda = Vec::Zero(sc.E.rows() + static_cast<Eigen::Index>(working.size()));
  }
  for (Eigen::Index i = 0; i < sc.E.rows(); ++i) sol.dual_eq(sc.eq_src[i]) = lambda(i) * sc.eq_scale(i);
  for (std::size_t k = 0; k < working.size(); ++k) {
    const int r = working[k];
    sol.dual_in(sc.in_src[r]) = std::max(0.0, lambda(sc.E.rows() + static_cast<Eigen::Index>(k))) * sc.in_scale(r);
    sol.active_set.push_back(sc.in_src[r]);
  }
  std::sort(sol.active_set.begin(), sol.active_set.end());
  sol.value = prob.gradient.dot(x);
  if (prob.hessian.size() > 0) sol.value += 0.5 * x.dot(prob.hessian * x);
  return sol;
}

/// LP: min c'x s.t. A x <= b (and optionally E x = e).
inline QpSolution solve_lp(const Vec& c, const Mat& in_matrix, const Vec& in_rhs, const Mat& eq_matrix = Mat(),
                           const Vec& eq_rhs = Vec(), const QpOptions& opt = {}) {
  QpProblem p;
  p.gradient = c;
  p.in_matrix = in_matrix;
  p.in_rhs = in_rhs;
  p.eq_matrix = eq_matrix.size() == 0 ? Mat(0, c.size()) : eq_matrix;
  p.eq_rhs = eq_rhs.size() == 0 ? Vec(0) : eq_rhs;
  return solve_qp(p, opt);
}

/// Re-solve with the given inequality rows held as equalities and all others dropped.
inline QpSolution solve_qp_fixed_active(const QpProblem& prob, std::span<const int> active,
                                        const QpOptions& opt = {}) {
  QpProblem q;
  q.hessian = prob.hessian;
  q.gradient = prob.gradient;
  const auto m_eq = prob.eq_matrix.rows();
  const auto k = static_cast<Eigen::Index>(active.size());
  q.eq_matrix.resize(m_eq + k, prob.dim());
  q.eq_rhs.resize(m_eq + k);
  if (m_eq > 0) {
    q.eq_matrix.topRows(m_eq) = prob.eq_matrix;
    q.eq_rhs.head(m_eq) = prob.eq_rhs;
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    q.eq_matrix.row(m_eq + i) = prob.in_matrix.row(active[i]);
    q.eq_rhs(m_eq + i) = prob.in_rhs(active[i]);
  }
  q.in_matrix.resize(0, prob.dim());
  q.in_rhs.resize(0);
  return solve_qp(q, opt);
}

}  // namespace srmpc::solvers
