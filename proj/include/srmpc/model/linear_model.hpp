#pragma once

// Pessimistic linear model x+ = A x + B u + b + w, w in {w : M w <= m},
// together with the transition data used for set-membership constraints.

#include <srmpc/geometry/polytope.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace srmpc::model {

using geometry::Polytope;

struct LinearModel {
  Mat A;
  Mat B;
  Vec b;

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index nu() const { return B.cols(); }

  void validate() const {
    require(A.rows() == A.cols(), "model: A must be square");
    require(B.rows() == A.rows(), "model: B row count must match A");
    require(b.size() == A.rows(), "model: offset dimension must match A");
  }

  Vec predict(const Vec& s, const Vec& a) const { return A * s + B * a + b; }
};

struct NoiseModel {
  Mat M;
  Vec m;

  Polytope set() const { return {M, m}; }
};

struct TransitionRecord {
  Vec s;
  Vec a;
  Vec s_next;
};

/// Append-only record store; all records are kept for the whole run.
class DataSet {
 public:
  void append(TransitionRecord r) {
    require(r.s.allFinite() && r.a.allFinite() && r.s_next.allFinite(), "dataset: non-finite record");
    records_.push_back(std::move(r));
  }
  const std::vector<TransitionRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// CSV columns: s_0..s_{n-1}, a_0..a_{m-1}, s_next_0..s_next_{n-1}.
  void write_csv(std::ostream& os) const {
    if (records_.empty()) return;
    const auto nx = records_.front().s.size(), nu = records_.front().a.size();
    for (Eigen::Index i = 0; i < nx; ++i) os << "s" << i << ",";
    for (Eigen::Index i = 0; i < nu; ++i) os << "a" << i << ",";
    for (Eigen::Index i = 0; i < nx; ++i) os << "s_next" << i << (i + 1 < nx ? "," : "\n");
    os << std::setprecision(17);
    for (const auto& r : records_) {
      for (Eigen::Index i = 0; i < nx; ++i) os << r.s(i) << ",";
      for (Eigen::Index i = 0; i < nu; ++i) os << r.a(i) << ",";
      for (Eigen::Index i = 0; i < nx; ++i) os << r.s_next(i) << (i + 1 < nx ? "," : "\n");
    }
  }

  static DataSet read_csv(std::istream& is, Eigen::Index nx, Eigen::Index nu) {
    DataSet d;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> v;
      while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
      require(static_cast<Eigen::Index>(v.size()) == 2 * nx + nu, "dataset csv: wrong column count");
      TransitionRecord r{Vec(nx), Vec(nu), Vec(nx)};
      for (Eigen::Index i = 0; i < nx; ++i) r.s(i) = v[i];
      for (Eigen::Index i = 0; i < nu; ++i) r.a(i) = v[nx + i];
      for (Eigen::Index i = 0; i < nx; ++i) r.s_next(i) = v[nx + nu + i];
      d.append(std::move(r));
    }
    return d;
  }

 private:
  std::vector<TransitionRecord> records_;
};

inline Vec residual(const LinearModel& model, const TransitionRecord& rec) {
  return rec.s_next - model.predict(rec.s, rec.a);
}

/// Linear inequalities G vec(M) <= h, with vec(M) stacked row by row (entry j*nx + k is M(j, k)).
struct MembershipConstraints {
  Mat G;
  Vec h;
};

/// One inequality M_j . r <= m_j for every residual r and facet j.
inline MembershipConstraints membership_constraints_from_residuals(const std::vector<Vec>& residuals, const Vec& m) {
  MembershipConstraints out;
  const auto facets = m.size();
  if (residuals.empty() || facets == 0) {
    out.G.resize(0, residuals.empty() ? 0 : facets * residuals.front().size());
    out.h.resize(0);
    return out;
  }
  const auto nx = residuals.front().size();
  out.G = Mat::Zero(static_cast<Eigen::Index>(residuals.size()) * facets, facets * nx);
  out.h.resize(out.G.rows());
  Eigen::Index row = 0;
  for (const auto& r : residuals)
    for (Eigen::Index j = 0; j < facets; ++j, ++row) {
      out.G.block(row, j * nx, 1, nx) = r.transpose();
      out.h(row) = m(j);
    }
  return out;
}

inline MembershipConstraints membership_constraints(const DataSet& data, const LinearModel& model, const Vec& m) {
  std::vector<Vec> res;
  for (const auto& r : data.records()) res.push_back(residual(model, r));
  return membership_constraints_from_residuals(res, m);
}

/// Residuals that are vertices of the 2-D convex hull of all residuals. For fixed m the
/// constraints of every other residual are implied by these (each is a convex combination).
inline std::vector<Vec> hull_residuals(const std::vector<Vec>& residuals) {
  if (residuals.empty() || residuals.front().size() != 2) return residuals;
  std::vector<geometry::Point2> pts;
  for (const auto& r : residuals) pts.emplace_back(r(0), r(1));
  std::vector<Vec> out;
  for (const auto& p : geometry::convex_hull_2d(pts, 0.0)) out.emplace_back(p);
  return out;
}

/// {A s + B a + b} (+) W as {x : M (x - c) <= m}.
inline Polytope one_step_dispersion(const LinearModel& model, const NoiseModel& noise, const Vec& s, const Vec& a) {
  const Vec c = model.predict(s, a);
  return {noise.M, noise.m + noise.M * c};
}

}  // namespace srmpc::model
