#pragma once

// H-representation polytopes {x : normals * x <= offsets} and the LP-backed
// set operations the controllers need. Minkowski sums and vertex lists are
// restricted to dimension <= 2.

#include <srmpc/core.hpp>
#include <srmpc/solvers/qp.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace srmpc::geometry {

using Point2 = Eigen::Vector2d;

class Polytope {
 public:
  Polytope() = default;
  Polytope(Mat normals, Vec offsets) : normals_(std::move(normals)), offsets_(std::move(offsets)) {
    require(normals_.rows() == offsets_.size(), "polytope: row count of normals must equal length of offsets");
  }

  static Polytope box(const Vec& lo, const Vec& hi) {
    require(lo.size() == hi.size(), "box: bound dimensions differ");
    const auto n = lo.size();
    Mat N(2 * n, n);
    N << Mat::Identity(n, n), -Mat::Identity(n, n);
    Vec b(2 * n);
    b << hi, -lo;
    return {N, b};
  }

  static Polytope box(const Vec& half_width) { return box(-half_width, half_width); }

  /// Degenerate single-point polytope (two opposite rows per axis).
  static Polytope point(const Vec& x) { return box(x, x); }

  /// Regular polygon with given circumradius; vertices at angles phase + 2*pi*k/n.
  static Polytope regular_polygon(int n, double circumradius, double phase = 0.0) {
    std::vector<Point2> v;
    for (int k = 0; k < n; ++k) {
      const double t = phase + 2.0 * M_PI * k / n;
      v.emplace_back(circumradius * std::cos(t), circumradius * std::sin(t));
    }
    return from_vertices_2d(v);
  }

  /// Convex hull of a 2-D point cloud. Collinear or single-point clouds give a degenerate polytope.
  static Polytope from_vertices_2d(const std::vector<Point2>& pts);

  Eigen::Index dim() const { return normals_.cols(); }
  Eigen::Index num_facets() const { return normals_.rows(); }
  const Mat& normals() const { return normals_; }
  const Vec& offsets() const { return offsets_; }

  Polytope translated(const Vec& t) const {
    Polytope out(normals_, offsets_ + normals_ * t);
    if (!hull_.empty())
      for (const auto& v : hull_) out.hull_.push_back(v + t.head<2>());
    return out;
  }
  /// Scaling about the origin.
  Polytope scaled(double s) const {
    require(s > 0, "scale factor must be positive");
    Polytope out(normals_, offsets_ * s);
    for (const auto& v : hull_) out.hull_.push_back(s * v);
    return out;
  }

  /// Vertex list remembered from from_vertices_2d (empty otherwise).
  const std::vector<Point2>& cached_vertices() const { return hull_; }

 private:
  Mat normals_;
  Vec offsets_;
  std::vector<Point2> hull_;
};

/// LP maximiser of d'x over P; status carried in the QpSolution.
inline solvers::QpSolution maximise(const Polytope& P, const Vec& d) {
  return solvers::solve_lp(-d, P.normals(), P.offsets());
}

inline double support(const Polytope& P, const Vec& d) {
  require(d.size() == P.dim(), "support: direction dimension mismatch");
  const auto s = maximise(P, d);
  if (s.status == solvers::QpStatus::Infeasible) fail(ErrorCode::EmptyPolytope, "support of an empty polytope");
  if (s.status == solvers::QpStatus::Unbounded) fail(ErrorCode::UnboundedDirection, "polytope unbounded in direction");
  return -s.value;
}

inline bool is_empty(const Polytope& P) {
  if (P.num_facets() == 0) return false;
  const auto s = solvers::solve_lp(Vec::Zero(P.dim()), P.normals(), P.offsets());
  return s.status == solvers::QpStatus::Infeasible;
}

inline bool contains(const Polytope& P, const Vec& x, double tol = tol::lp_objective) {
  require(x.size() == P.dim(), "contains: point dimension mismatch");
  if (P.num_facets() == 0) return true;
  return (P.normals() * x - P.offsets()).maxCoeff() <= tol;
}

/// P subset of Q, decided facet by facet through the support function of P.
inline bool subset(const Polytope& P, const Polytope& Q, double tol = tol::lp_objective) {
  require(P.dim() == Q.dim(), "subset: dimension mismatch");
  if (is_empty(P)) return true;
  for (Eigen::Index i = 0; i < Q.num_facets(); ++i) {
    const auto s = maximise(P, Q.normals().row(i).transpose());
    if (s.status == solvers::QpStatus::Unbounded) return false;
    const double scale = std::max(1.0, Q.normals().row(i).norm());
    if (-s.value > Q.offsets()(i) + tol * scale) return false;
  }
  return true;
}

inline Polytope intersect(const Polytope& P, const Polytope& Q) {
  require(P.dim() == Q.dim(), "intersect: dimension mismatch");
  Mat N(P.num_facets() + Q.num_facets(), P.dim());
  Vec b(N.rows());
  N << P.normals(), Q.normals();
  b << P.offsets(), Q.offsets();
  return {N, b};
}

/// {x : A x + c in P}.
inline Polytope affine_preimage(const Polytope& P, const Mat& A, const Vec& c) {
  require(A.rows() == P.dim() && c.size() == P.dim(), "affine_preimage: dimension mismatch");
  return {P.normals() * A, P.offsets() - P.normals() * c};
}

/// Unit-norm rows, zero rows dropped (or the set declared empty), duplicates merged,
/// then every row that an LP shows to be implied by the others removed.
inline Polytope remove_redundant(const Polytope& P, double tol = tol::lp_objective) {
  const auto n = P.dim();
  std::vector<Vec> rows;
  std::vector<double> rhs;
  for (Eigen::Index i = 0; i < P.num_facets(); ++i) {
    const double nrm = P.normals().row(i).norm();
    if (nrm < 1e-12) {
      if (P.offsets()(i) < -tol) fail(ErrorCode::EmptyPolytope, "remove_redundant: infeasible zero row");
      continue;
    }
    Vec r = P.normals().row(i).transpose() / nrm;
    const double o = P.offsets()(i) / nrm;
    bool merged = false;
    for (std::size_t k = 0; k < rows.size(); ++k)
      if ((rows[k] - r).lpNorm<Eigen::Infinity>() < 1e-12) {
        rhs[k] = std::min(rhs[k], o);
        merged = true;
        break;
      }
    if (!merged) {
      rows.push_back(r);
      rhs.push_back(o);
    }
  }
  auto build = [&](const std::vector<int>& keep) {
    Mat N(static_cast<Eigen::Index>(keep.size()), n);
    Vec b(N.rows());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      N.row(static_cast<Eigen::Index>(k)) = rows[keep[k]].transpose();
      b(static_cast<Eigen::Index>(k)) = rhs[keep[k]];
    }
    return Polytope(N, b);
  };
  std::vector<int> keep(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) keep[k] = static_cast<int>(k);
  if (is_empty(build(keep))) fail(ErrorCode::EmptyPolytope, "remove_redundant: empty polytope");

  for (std::size_t k = 0; k < keep.size();) {
    // Test row keep[k] against every other kept row, with itself relaxed by one unit.
    const int idx = keep[k];
    std::vector<int> others;
    for (int j : keep)
      if (j != idx) others.push_back(j);
    Polytope rest = build(others);
    Mat N(rest.num_facets() + 1, n);
    Vec b(N.rows());
    N << rest.normals(), rows[idx].transpose();
    b << rest.offsets(), rhs[idx] + 1.0;
    const auto s = solvers::solve_lp(-rows[idx], N, b);
    if (s.optimal() && -s.value <= rhs[idx] + tol) {
      keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      ++k;
    }
  }
  return build(keep);
}

/// P (-) W = {x : x + w in P for all w in W}.
inline Polytope pontryagin_diff(const Polytope& P, const Polytope& W) {
  require(P.dim() == W.dim(), "pontryagin_diff: dimension mismatch");
  Vec b = P.offsets();
  for (Eigen::Index i = 0; i < P.num_facets(); ++i) b(i) -= support(W, P.normals().row(i).transpose());
  return {P.normals(), b};
}

namespace detail {

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace detail

/// Andrew's monotone chain; counterclockwise, no repeated points and no point within
/// distance `tol` of the segment joining its neighbours.
inline std::vector<Point2> convex_hull_2d(std::vector<Point2> pts, double tol = 1e-12) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [tol](const Point2& a, const Point2& b) { return (a - b).lpNorm<Eigen::Infinity>() <= tol; }),
            pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point2> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && detail::cross(h[k - 2], h[k - 1], p) <= tol * (p - h[k - 2]).norm()) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && detail::cross(h[k - 2], h[k - 1], pts[i]) <= tol * (pts[i] - h[k - 2]).norm()) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

inline Polytope Polytope::from_vertices_2d(const std::vector<Point2>& pts) {
  require(!pts.empty(), "from_vertices_2d: no points");
  const auto h = convex_hull_2d(pts);
  if (h.size() == 1) return point(h[0]);
  if (h.size() == 2) {
    // Segment: two opposite rows along its normal and two end caps.
    const Point2 d = (h[1] - h[0]).normalized();
    const Point2 nrm(-d.y(), d.x());
    Mat N(4, 2);
    Vec b(4);
    N.row(0) = nrm.transpose();
    N.row(1) = -nrm.transpose();
    N.row(2) = d.transpose();
    N.row(3) = -d.transpose();
    b << nrm.dot(h[0]), -nrm.dot(h[0]), d.dot(h[1]), -d.dot(h[0]);
    return {N, b};
  }
  Mat N(static_cast<Eigen::Index>(h.size()), 2);
  Vec b(N.rows());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Point2 e = h[(i + 1) % h.size()] - h[i];
    const Point2 nrm = Point2(e.y(), -e.x()).normalized();  // outward for a ccw hull
    N.row(static_cast<Eigen::Index>(i)) = nrm.transpose();
    // Both endpoints lie on the facet; the max guards against round-off in the normal.
    b(static_cast<Eigen::Index>(i)) = std::max(nrm.dot(h[i]), nrm.dot(h[(i + 1) % h.size()]));
  }
  Polytope out(N, b);
  out.hull_ = h;
  return out;
}

namespace detail {

inline void require_bounded_2d(const Polytope& P) {
  for (const Vec& d : {Vec(Point2(1, 0)), Vec(Point2(-1, 0)), Vec(Point2(0, 1)), Vec(Point2(0, -1))}) {
    const auto s = maximise(P, d);
    if (s.status == solvers::QpStatus::Infeasible) fail(ErrorCode::EmptyPolytope, "vertices of an empty polytope");
    if (s.status == solvers::QpStatus::Unbounded) fail(ErrorCode::UnboundedDirection, "polytope is unbounded");
  }
}

/// Hull of all feasible pairwise facet intersections of a bounded 2-D polytope.
inline std::vector<Point2> hull_of_intersections(const Polytope& P) {
  const Mat& N = P.normals();
  const Vec& b = P.offsets();
  std::vector<Point2> cand;
  for (Eigen::Index i = 0; i < N.rows(); ++i)
    for (Eigen::Index j = i + 1; j < N.rows(); ++j) {
      Eigen::Matrix2d M;
      M.row(0) = N.row(i);
      M.row(1) = N.row(j);
      if (std::abs(M.determinant()) < 1e-12 * std::max(1.0, M.squaredNorm())) continue;
      const Point2 x = M.inverse() * Eigen::Vector2d(b(i), b(j));
      if ((N * x - b).maxCoeff() <= 1e-9 * std::max(1.0, x.norm())) cand.push_back(x);
    }
  return convex_hull_2d(cand, 1e-10);
}

}  // namespace detail

/// Vertices of a full-dimensional bounded polytope of dimension <= 2 (counterclockwise in 2-D).
inline std::vector<Vec> vertices(const Polytope& P) {
  if (P.dim() > 2) fail(ErrorCode::DimensionTooHigh, "vertex enumeration is limited to dimension <= 2");
  if (P.dim() == 1) {
    const double hi = support(P, Vec::Ones(1));
    const double lo = -support(P, -Vec::Ones(1));
    if (hi - lo <= 1e-12) fail(ErrorCode::InvalidArgument, "vertices: degenerate interval");
    return {Vec::Constant(1, lo), Vec::Constant(1, hi)};
  }
  detail::require_bounded_2d(P);
  const auto h = detail::hull_of_intersections(P);
  if (h.size() < 3) fail(ErrorCode::InvalidArgument, "vertices: polytope is lower-dimensional");
  std::vector<Vec> out;
  for (const auto& p : h) out.emplace_back(p);
  return out;
}

inline std::vector<Point2> vertices_2d(const Polytope& P) {
  require(P.dim() == 2, "vertices_2d: polytope is not 2-D");
  std::vector<Point2> out;
  for (const auto& v : vertices(P)) out.emplace_back(v(0), v(1));
  return out;
}

/// Like vertices(), but degenerate (segment / point) polytopes are allowed.
inline std::vector<Vec> extreme_points(const Polytope& P) {
  if (P.dim() > 2) fail(ErrorCode::DimensionTooHigh, "extreme points limited to dimension <= 2");
  if (P.dim() == 1) {
    const double hi = support(P, Vec::Ones(1));
    const double lo = -support(P, -Vec::Ones(1));
    if (hi - lo <= 1e-12) return {Vec::Constant(1, hi)};
    return {Vec::Constant(1, lo), Vec::Constant(1, hi)};
  }
  std::vector<Point2> h = P.cached_vertices();
  if (h.empty()) {
    detail::require_bounded_2d(P);
    h = detail::hull_of_intersections(P);
  }
  if (h.empty()) fail(ErrorCode::EmptyPolytope, "extreme points: no vertex found");
  std::vector<Vec> out;
  for (const auto& p : h) out.emplace_back(p);
  return out;
}

inline Polytope minkowski_sum(const Polytope& P, const Polytope& W) {
  require(P.dim() == W.dim(), "minkowski_sum: dimension mismatch");
  if (P.dim() > 2) fail(ErrorCode::DimensionTooHigh, "minkowski_sum implemented for dimension <= 2");
  if (is_empty(P) || is_empty(W)) fail(ErrorCode::EmptyPolytope, "minkowski_sum of an empty polytope");
  if (P.dim() == 1) {
    const Vec e = Vec::Ones(1);
    const double hi = support(P, e) + support(W, e);
    const double lo = -(support(P, -e) + support(W, -e));
    return Polytope::box(Vec::Constant(1, lo), Vec::Constant(1, hi));
  }
  const auto vp = extreme_points(P);
  const auto vw = extreme_points(W);
  std::vector<Point2> sums;
  for (const auto& a : vp)
    for (const auto& b : vw) sums.emplace_back(a(0) + b(0), a(1) + b(1));
  return Polytope::from_vertices_2d(sums);
}

/// Image under an arbitrary linear map (dimension <= 2, via vertices).
inline Polytope linear_image(const Polytope& P, const Mat& A) {
  require(A.cols() == P.dim(), "linear_image: dimension mismatch");
  if (A.rows() > 2) fail(ErrorCode::DimensionTooHigh, "linear_image implemented for dimension <= 2");
  const auto v = extreme_points(P);
  if (A.rows() == 1) {
    double lo = kInf, hi = -kInf;
    for (const auto& x : v) {
      lo = std::min(lo, (A * x)(0));
      hi = std::max(hi, (A * x)(0));
    }
    return Polytope::box(Vec::Constant(1, lo), Vec::Constant(1, hi));
  }
  std::vector<Point2> img;
  for (const auto& x : v) {
    const Vec y = A * x;
    img.emplace_back(y(0), y(1));
  }
  return Polytope::from_vertices_2d(img);
}

/// Largest support-value gap max_d |h_P(d) - h_Q(d)| over unit directions sampled on the circle.
inline double support_gap(const Polytope& P, const Polytope& Q, int directions = 360) {
  require(P.dim() == Q.dim() && P.dim() <= 2, "support_gap: dimension <= 2 only");
  double gap = 0.0;
  if (P.dim() == 1) {
    for (double s : {1.0, -1.0}) gap = std::max(gap, std::abs(support(P, Vec::Constant(1, s)) - support(Q, Vec::Constant(1, s))));
    return gap;
  }
  for (int k = 0; k < directions; ++k) {
    const double t = 2.0 * M_PI * k / directions;
    const Vec d = Eigen::Vector2d(std::cos(t), std::sin(t));
    gap = std::max(gap, std::abs(support(P, d) - support(Q, d)));
  }
  return gap;
}

}  // namespace srmpc::geometry
