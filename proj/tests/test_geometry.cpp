#include <srmpc/geometry/invariant_sets.hpp>
#include <srmpc/geometry/polytope_json.hpp>

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace srmpc;
using namespace srmpc::geometry;

namespace {

Polytope unit_box() { return Polytope::box(Vec::Ones(2)); }

Polytope octagon(double r) { return Polytope::regular_polygon(8, r, M_PI / 8); }

std::vector<Vec> octagon_vertices(double r) {
  std::vector<Vec> v;
  for (int k = 0; k < 8; ++k) {
    const double t = M_PI / 8 + k * M_PI / 4;
    v.push_back(Eigen::Vector2d(r * std::cos(t), r * std::sin(t)));
  }
  return v;
}

double max_dot(const std::vector<Vec>& v, const Vec& d) {
  double m = -kInf;
  for (const auto& x : v) m = std::max(m, d.dot(x));
  return m;
}

}  // namespace

TEST(Support, BoxBound) { EXPECT_NEAR(support(unit_box(), Eigen::Vector2d(1, 0)), 1.0, 1e-12); }

TEST(Support, OctagonMatchesVertexEnumeration) {
  const auto P = octagon(0.03);
  const auto v = octagon_vertices(0.03);
  EXPECT_NEAR(support(P, Eigen::Vector2d(1, 0)), max_dot(v, Eigen::Vector2d(1, 0)), 1e-12);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 50; ++k) {
    const Vec d = oracle::random_matrix(rng, 2, 1);
    EXPECT_NEAR(support(P, d), max_dot(v, d), 1e-12);
  }
}

TEST(Support, EmptyThrows) {
  Mat N(2, 1);
  N << 1, -1;
  const Polytope P(N, Vec(Eigen::Vector2d(0, -1)));
  try {
    support(P, Vec::Ones(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPolytope);
  }
}

TEST(Support, UnboundedThrows) {
  Mat N(1, 2);
  N << 1, 0;
  try {
    support(Polytope(N, Vec::Ones(1)), Eigen::Vector2d(0, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnboundedDirection);
  }
}

TEST(Support, HomogeneousAndSubadditive) {
  std::mt19937_64 rng(2);
  const auto P = minkowski_sum(unit_box(), octagon(0.3));
  for (int k = 0; k < 50; ++k) {
    const Vec d1 = oracle::random_matrix(rng, 2, 1), d2 = oracle::random_matrix(rng, 2, 1);
    EXPECT_NEAR(support(P, 2.5 * d1), 2.5 * support(P, d1), 1e-10);
    EXPECT_LE(support(P, d1 + d2), support(P, d1) + support(P, d2) + 1e-10);
  }
}

TEST(Pontryagin, BoxMinusBox) {
  const auto R = pontryagin_diff(unit_box(), Polytope::box(Vec::Constant(2, 0.1)));
  EXPECT_TRUE(subset(R, Polytope::box(Vec::Constant(2, 0.9))));
  EXPECT_TRUE(subset(Polytope::box(Vec::Constant(2, 0.9)), R));
}

TEST(Pontryagin, PointIsIdentity) {
  const auto R = pontryagin_diff(unit_box(), Polytope::point(Vec::Zero(2)));
  EXPECT_LT((R.offsets() - unit_box().offsets()).norm(), 1e-12);
}

TEST(Pontryagin, OctagonShrinksEachFacet) {
  const auto v = octagon_vertices(0.03);
  const auto R = pontryagin_diff(unit_box(), octagon(0.03));
  for (Eigen::Index i = 0; i < 4; ++i)
    EXPECT_NEAR(R.offsets()(i), 1.0 - max_dot(v, unit_box().normals().row(i).transpose()), 1e-12);
}

TEST(Minkowski, Identity1dAnd2d) {
  const auto S = minkowski_sum(unit_box(), Polytope::point(Vec::Zero(2)));
  EXPECT_TRUE(subset(S, unit_box()) && subset(unit_box(), S));
  const auto I = minkowski_sum(Polytope::box(Vec::Ones(1)), Polytope::box(Vec::Constant(1, 0.1)));
  EXPECT_NEAR(support(I, Vec::Ones(1)), 1.1, 1e-12);
  EXPECT_NEAR(support(I, -Vec::Ones(1)), 1.1, 1e-12);
}

TEST(Minkowski, BoxPlusOctagonMatchesVertexSumHull) {
  const auto S = minkowski_sum(unit_box(), octagon(0.3));
  std::vector<Vec> sums;
  for (const auto& a : vertices(unit_box()))
    for (const auto& b : octagon_vertices(0.3)) sums.push_back(a + b);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const Vec d = oracle::random_matrix(rng, 2, 1);
    EXPECT_NEAR(support(S, d), max_dot(sums, d), 1e-10);
  }
}

TEST(Minkowski, HighDimensionRejected) {
  const auto B = Polytope::box(Vec::Ones(3));
  try {
    minkowski_sum(B, B);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionTooHigh);
  }
}

TEST(Minkowski, RoundTripSubset) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int k = 0; k < 50; ++k) {
    const auto P = Polytope::box(Eigen::Vector2d(-u(rng) - 0.5, -u(rng) - 0.5), Eigen::Vector2d(u(rng) + 0.5, u(rng) + 0.5));
    const auto W = octagon(0.3 * u(rng));
    const auto D = pontryagin_diff(P, W);
    EXPECT_TRUE(subset(minkowski_sum(D, W), P, 1e-9));
  }
}

TEST(Predicates, ContainsSubsetRedundant) {
  EXPECT_TRUE(contains(unit_box(), Vec::Zero(2)));
  EXPECT_FALSE(contains(unit_box(), Eigen::Vector2d(1.5, 0)));
  const auto half = Polytope::box(Vec::Constant(2, 0.5));
  EXPECT_TRUE(subset(half, unit_box()));
  EXPECT_FALSE(subset(unit_box(), half));
  Mat N(5, 2);
  N << unit_box().normals(), 1, 0;
  Vec b(5);
  b << unit_box().offsets(), 1;
  EXPECT_EQ(remove_redundant(Polytope(N, b)).num_facets(), 4);
  N.row(4) << 1, 1;
  b(4) = 5;
  EXPECT_EQ(remove_redundant(Polytope(N, b)).num_facets(), 4);
  EXPECT_FALSE(is_empty(unit_box()));
}

TEST(Predicates, RemovingAnyRowEnlarges) {
  const auto R = remove_redundant(intersect(octagon(1.0), Polytope::box(Vec::Constant(2, 0.95))));
  for (Eigen::Index i = 0; i < R.num_facets(); ++i) {
    Mat N(R.num_facets() - 1, 2);
    Vec b(N.rows());
    for (Eigen::Index k = 0, r = 0; k < R.num_facets(); ++k)
      if (k != i) {
        N.row(r) = R.normals().row(k);
        b(r++) = R.offsets()(k);
      }
    EXPECT_FALSE(subset(Polytope(N, b), R));
  }
}

TEST(Vertices, CounterclockwiseAndDegenerateRejected) {
  const auto v = vertices_2d(unit_box());
  ASSERT_EQ(v.size(), 4u);
  double area = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    area += a.x() * b.y() - a.y() * b.x();
  }
  EXPECT_NEAR(area / 2, 4.0, 1e-12);
  EXPECT_THROW(vertices_2d(Polytope::point(Vec::Zero(2))), Error);
  // Degenerate sets are still fine for support and containment.
  EXPECT_NEAR(support(Polytope::point(Vec::Zero(2)), Eigen::Vector2d(1, 1)), 0.0, 1e-12);
}

TEST(Json, RoundTrip) {
  const auto P = octagon(0.03);
  const auto Q = polytope_from_json(nlohmann::json::parse(to_json(P).dump()));
  EXPECT_EQ(Q.normals(), P.normals());
  EXPECT_EQ(Q.offsets(), P.offsets());
}

// ---------------------------------------------------------------- invariant sets

namespace {

bool vertex_invariant(const Polytope& S, const Mat& A, const Polytope& W, double tol = 1e-8) {
  const auto vs = extreme_points(S);
  const auto vw = extreme_points(W);
  for (const auto& x : vs)
    for (const auto& w : vw)
      if (!contains(S, A * x + w, tol)) return false;
  return true;
}

bool sampled_invariant(const Polytope& S, const Mat& A, const Polytope& W, std::mt19937_64& rng, int n) {
  const auto vs = vertices(S);
  const auto vw = extreme_points(W);
  Vec lo = vs[0], hi = vs[0];
  for (const auto& v : vs) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  std::uniform_real_distribution<double> u(0, 1);
  int tested = 0;
  while (tested < n) {
    Vec x(2);
    for (int k = 0; k < 2; ++k) x(k) = lo(k) + (hi(k) - lo(k)) * u(rng);
    if (!contains(S, x, 0.0)) continue;
    ++tested;
    for (const auto& w : vw)
      if (!contains(S, A * x + w, 1e-8)) return false;
  }
  return true;
}

}  // namespace

TEST(MaxRpi, DeadbeatIsOneTightening) {
  const Mat A = Mat::Zero(2, 2);
  const auto W = Polytope::box(Vec::Constant(2, 0.1));
  const auto O = max_rpi(A, unit_box(), W);
  // Fixed point: X cap {x : w in X (-) W for all w} = X when W is inside X (-) W... here X itself.
  EXPECT_TRUE(subset(O, unit_box()) && subset(unit_box(), O));
}

TEST(MaxRpi, ContractionKeepsBox) {
  const Mat A = 0.5 * Mat::Identity(2, 2);
  const auto O = max_rpi(A, unit_box(), Polytope::point(Vec::Zero(2)));
  EXPECT_TRUE(subset(O, unit_box()) && subset(unit_box(), O));
}

TEST(MaxRpi, MonteCarloInvariance) {
  Mat A(2, 2);
  A << 0.9, 0.3, -0.2, 0.7;
  const auto W = octagon(0.05);
  const auto O = max_rpi(A, unit_box(), W);
  std::mt19937_64 rng(5);
  EXPECT_TRUE(vertex_invariant(O, A, W));
  EXPECT_TRUE(sampled_invariant(O, A, W, rng, 10000));
}

TEST(MaxRpi, EmptyWhenNoiseTooLarge) {
  const Mat A = 0.5 * Mat::Identity(2, 2);
  try {
    max_rpi(A, unit_box(), Polytope::box(Vec::Constant(2, 1.5)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySet);
  }
}

TEST(TaggedMaxRpi, MatchesPresetIteration) {
  Mat A(2, 2);
  A << 0.9, 0.3, -0.2, 0.7;
  const auto W = octagon(0.05);
  const auto X = unit_box();
  const auto T = tagged_max_rpi(A, X.normals(), X.offsets(), W);
  const Polytope P(T.rows, T.rhs);
  const auto O = max_rpi(A, X, W);
  EXPECT_TRUE(subset(P, O, 1e-8));
  EXPECT_TRUE(subset(O, P, 1e-8));
}

TEST(MinRpi, DeadbeatIsW) {
  const auto W = octagon(0.05);
  const auto F = min_rpi(Mat::Zero(2, 2), W, 1e-6);
  EXPECT_LT(support_gap(F.set, W), 1e-10);
}

TEST(MinRpi, ScalarGeometricSeries) {
  const auto W = Polytope::box(Vec::Constant(1, 0.1));
  const double eps = 1e-4;
  const auto F = min_rpi(Mat::Constant(1, 1, 0.5), W, eps);
  EXPECT_GE(support(F.set, Vec::Ones(1)), 0.2 - 1e-12);
  EXPECT_LE(support(F.set, Vec::Ones(1)), 0.2 + eps);
  EXPECT_GE(support(F.set, -Vec::Ones(1)), 0.2 - 1e-12);
}

TEST(MinRpi, InvariantAndContainsW) {
  Mat A(2, 2);
  A << 0.9, 0.3, -0.2, 0.7;
  const auto W = octagon(0.05);
  const auto F = min_rpi(A, W, 1e-4);
  EXPECT_TRUE(subset(W, F.set));
  EXPECT_TRUE(vertex_invariant(F.set, A, W));
  std::mt19937_64 rng(6);
  EXPECT_TRUE(sampled_invariant(F.set, A, W, rng, 10000));
}
