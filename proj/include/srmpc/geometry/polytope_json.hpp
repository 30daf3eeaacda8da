#pragma once

// {"normals": [[...], ...], "offsets": [...]}

#include <srmpc/geometry/polytope.hpp>

#include <json.hpp>

namespace srmpc::geometry {

inline nlohmann::json to_json(const Polytope& P) {
  nlohmann::json j;
  j["normals"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < P.num_facets(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < P.dim(); ++k) row.push_back(P.normals()(i, k));
    j["normals"].push_back(row);
  }
  j["offsets"] = std::vector<double>(P.offsets().data(), P.offsets().data() + P.offsets().size());
  return j;
}

inline Polytope polytope_from_json(const nlohmann::json& j) {
  const auto& rows = j.at("normals");
  const auto& offs = j.at("offsets");
  require(rows.size() == offs.size(), "polytope json: normals/offsets length mismatch");
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto n = m > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Mat N(m, n);
  Vec b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    require(static_cast<Eigen::Index>(rows[i].size()) == n, "polytope json: ragged normals");
    for (Eigen::Index k = 0; k < n; ++k) N(i, k) = rows[i][k].get<double>();
    b(i) = offs[i].get<double>();
  }
  return {N, b};
}

}  // namespace srmpc::geometry
