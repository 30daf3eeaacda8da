#pragma once

// Robust positively invariant sets for x+ = A x + w, w in W.

#include <srmpc/geometry/polytope.hpp>
#include <srmpc/solvers/dare.hpp>

#include <utility>
#include <vector>

namespace srmpc::geometry {

inline void require_strictly_stable(const Mat& A) {
  require(A.rows() == A.cols(), "closed-loop matrix must be square");
  require(solvers::spectral_radius(A) < 1.0, "closed-loop matrix must be strictly stable");
}

/**
 * Maximal RPI set inside `constraints` by the pre-set recursion
 *   O_{k+1} = O_k  cap  {x : A x + w in O_k  for all w in W},
 * stopped when O_k is contained in O_{k+1} (mutual inclusion, LP tolerance 1e-9).
 */
inline Polytope max_rpi(const Mat& A_cl, const Polytope& constraints, const Polytope& W, int max_iter = 500) {
  require_strictly_stable(A_cl);
  require(constraints.dim() == A_cl.rows() && W.dim() == A_cl.rows(), "max_rpi: dimension mismatch");
  auto reduce = [](const Polytope& P) {
    try {
      return remove_redundant(P);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EmptyPolytope) fail(ErrorCode::EmptySet, "max_rpi: invariant set is empty");
      throw;
    }
  };
  if (is_empty(constraints)) fail(ErrorCode::EmptySet, "max_rpi: constraint set is empty");
  Polytope omega = reduce(constraints);
  const Vec zero = Vec::Zero(A_cl.rows());
  for (int k = 0; k < max_iter; ++k) {
    const Polytope shrunk = pontryagin_diff(omega, W);
    const Polytope pre = affine_preimage(shrunk, A_cl, zero);
    Polytope next = reduce(intersect(omega, pre));
    if (subset(omega, next)) return next;
    omega = std::move(next);
  }
  fail(ErrorCode::NotConverged, "max_rpi: iteration cap reached");
}

/// MRPI constraint rows kept in unreduced, tagged form: row (i, j) reads
///   F_i A^j z <= h_i - sum_{l<j} h_W((F_i A^l)').
/// The tags let callers rebuild the rows for perturbed data without new LPs.
struct TaggedRows {
  Mat rows;
  Vec rhs;
  std::vector<std::pair<int, int>> tags;  // (constraint row i, power j)
  int depth = 0;                          // powers 0..depth-1 are present
};

/// Rows for powers 0..depth-1 (no redundancy tests).
inline TaggedRows tagged_rows(const Mat& A, const Mat& F, const Vec& h, const Polytope& W, int depth) {
  TaggedRows out;
  out.depth = depth;
  const auto m = F.rows();
  out.rows.resize(m * depth, A.rows());
  out.rhs.resize(m * depth);
  Mat FA = F;  // F A^j
  Vec acc = Vec::Zero(m);
  for (int j = 0; j < depth; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      out.rows.row(j * m + i) = FA.row(i);
      out.rhs(j * m + i) = h(i) - acc(i);
      out.tags.emplace_back(static_cast<int>(i), j);
    }
    for (Eigen::Index i = 0; i < m; ++i) acc(i) += support(W, FA.row(i).transpose());
    FA = FA * A;
  }
  return out;
}

/// Finitely determined MRPI of {z : F z <= h}: powers are added until every row of the
/// next power is implied by the rows already present.
inline TaggedRows tagged_max_rpi(const Mat& A, const Mat& F, const Vec& h, const Polytope& W, int max_depth = 500) {
  require_strictly_stable(A);
  const auto m = F.rows();
  Mat FA = F;
  Vec acc = Vec::Zero(m);
  for (int depth = 1; depth <= max_depth; ++depth) {
    const TaggedRows cur = tagged_rows(A, F, h, W, depth);
    const Polytope set(cur.rows, cur.rhs);
    if (is_empty(set)) fail(ErrorCode::EmptySet, "MRPI constraint rows are infeasible");
    // Rows of power `depth`.
    for (Eigen::Index i = 0; i < m; ++i) acc(i) += support(W, FA.row(i).transpose());
    FA = FA * A;
    bool all_implied = true;
    for (Eigen::Index i = 0; i < m && all_implied; ++i) {
      const auto s = maximise(set, FA.row(i).transpose());
      if (!s.optimal() || -s.value > h(i) - acc(i) + tol::lp_objective * std::max(1.0, FA.row(i).norm()))
        all_implied = false;
    }
    if (all_implied) return cur;
  }
  fail(ErrorCode::NotConverged, "tagged MRPI: depth cap reached");
}

struct MinRpiResult {
  Polytope set;
  int terms = 0;
  double alpha = 0.0;
};

/**
 * Outer approximation of the minimal RPI set: with s terms and alpha such that
 * A^s W is inside alpha W, F = (1 - alpha)^-1 (W + A W + ... + A^{s-1} W).
 * s grows until alpha / (1 - alpha) * max_j h_{F_s}(+-e_j) <= eps.
 */
inline MinRpiResult min_rpi(const Mat& A_cl, const Polytope& W, double eps, int max_terms = 200) {
  require_strictly_stable(A_cl);
  require(eps > 0, "min_rpi: eps must be positive");
  require(W.dim() == A_cl.rows(), "min_rpi: dimension mismatch");
  const auto n = A_cl.rows();
  MinRpiResult out;
  if (W.offsets().size() > 0 && W.offsets().maxCoeff() <= 0.0 && !is_empty(W)) {
    // W = {0}: the minimal RPI set is the origin itself.
    out.set = W;
    out.terms = 1;
    return out;
  }
  require(W.offsets().minCoeff() > 0.0, "min_rpi: W must contain the origin in its interior");

  Mat As = Mat::Identity(n, n);
  Vec axis_sum = Vec::Zero(2 * n);  // sum_{i<s} h_W((A^i)' (+-e_j))
  for (int s = 1; s <= max_terms; ++s) {
    for (Eigen::Index j = 0; j < n; ++j) {
      axis_sum(2 * j) += support(W, As.row(j).transpose());
      axis_sum(2 * j + 1) += support(W, -As.row(j).transpose());
    }
    As = A_cl * As;
    double alpha = 0.0;
    for (Eigen::Index i = 0; i < W.num_facets(); ++i)
      alpha = std::max(alpha, support(W, (W.normals().row(i) * As).transpose()) / W.offsets()(i));
    if (alpha >= 1.0) continue;
    if (alpha / (1.0 - alpha) * axis_sum.maxCoeff() > eps) continue;

    Polytope F = W;
    Mat Ai = Mat::Identity(n, n);
    for (int i = 1; i < s; ++i) {
      Ai = A_cl * Ai;
      F = minkowski_sum(F, linear_image(W, Ai));
    }
    out.set = alpha > 0.0 ? F.scaled(1.0 / (1.0 - alpha)) : F;
    out.terms = s;
    out.alpha = alpha;
    return out;
  }
  fail(ErrorCode::NotConverged, "min_rpi: no admissible truncation found");
}

}  // namespace srmpc::geometry
