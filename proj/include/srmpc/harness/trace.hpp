#pragma once

// Run traces as JSON lines: one object per line with a "type" field
// (header, step, epoch, theta, sets, summary).

#include <srmpc/core.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace srmpc::harness {

using nlohmann::json;

inline json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec vec_from_json(const json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

/// Infinite values never enter the trace; they are stored as the largest finite double
/// next to an explicit flag.
inline double finite_or_max(double v) {
  return std::isfinite(v) ? v : std::numeric_limits<double>::max();
}

/// FNV-1a over the bytes of the vector, as 16 hex digits.
inline std::string theta_hash(const Vec& theta) {
  std::uint64_t h = 1469598103934665603ull;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    unsigned char b[sizeof(double)];
    const double x = theta(i);
    std::memcpy(b, &x, sizeof(double));
    for (unsigned char c : b) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& file) : out_(file) {
    if (!out_) fail(ErrorCode::Io, "cannot write trace " + file.string());
  }
  void write(const json& j) {
    out_ << j.dump() << '\n';
    if (!out_) fail(ErrorCode::Io, "trace write failed");
  }

 private:
  std::ofstream out_;
};

inline std::vector<json> read_trace(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::Io, "cannot read trace " + file.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorCode::Io, std::string("malformed trace line: ") + e.what());
    }
  }
  return out;
}

inline std::vector<json> of_type(const std::vector<json>& lines, const std::string& type) {
  std::vector<json> out;
  for (const auto& j : lines)
    if (j.value("type", "") == type) out.push_back(j);
  return out;
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream f(file);
  if (!f) fail(ErrorCode::Io, "cannot write " + file.string());
  f << text;
  if (!f) fail(ErrorCode::Io, "write failed: " + file.string());
}

}  // namespace srmpc::harness
