#pragma once

// Simulated ground truth: a linear plant with bounded noise drawn uniformly from
// an interval (1-D) or a polygon (by rejection from its bounding box).

#include <srmpc/geometry/polytope.hpp>
#include <srmpc/model/linear_model.hpp>

#include <random>

namespace srmpc::harness {

class SimTruth {
 public:
  SimTruth(model::LinearModel m, geometry::Polytope noise_set, unsigned long long seed)
      : model_(std::move(m)), noise_(std::move(noise_set)), rng_(seed) {
    const auto n = noise_.dim();
    lo_.resize(n);
    hi_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec e = Vec::Unit(n, i);
      hi_(i) = geometry::support(noise_, e);
      lo_(i) = -geometry::support(noise_, -e);
    }
    double vol = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) vol *= hi_(i) - lo_(i);
    if (n == 2) {
      const auto v = geometry::vertices_2d(noise_);
      double area = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        const auto& a = v[k];
        const auto& b = v[(k + 1) % v.size()];
        area += a.x() * b.y() - a.y() * b.x();
      }
      area = 0.5 * std::abs(area);
      density_bound_ = area > 0.0 ? 1.0 / area : kInf;
    } else {
      density_bound_ = vol > 0.0 ? 1.0 / vol : kInf;
    }
  }

  const model::LinearModel& model() const { return model_; }
  const geometry::Polytope& noise_set() const { return noise_; }
  /// Upper bound on the transition density (uniform noise: 1 / volume).
  double density_bound() const { return density_bound_; }

  Vec sample_noise() {
    const auto n = noise_.dim();
    Vec w(n);
    for (;;) {
      for (Eigen::Index i = 0; i < n; ++i) w(i) = std::uniform_real_distribution<double>(lo_(i), hi_(i))(rng_);
      if (geometry::contains(noise_, w, 0.0)) return w;
    }
  }

  Vec step(const Vec& s, const Vec& a, Vec* noise = nullptr) {
    const Vec w = sample_noise();
    if (noise) *noise = w;
    return model_.predict(s, a) + w;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  model::LinearModel model_;
  geometry::Polytope noise_;
  std::mt19937_64 rng_;
  Vec lo_, hi_;
  double density_bound_ = kInf;
};

}  // namespace srmpc::harness
