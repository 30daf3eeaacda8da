#pragma once

// Key-value configuration:  `key = value` per line, '#' starts a comment.
// Vectors are comma separated.

#include <srmpc/core.hpp>

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace srmpc::harness {

class Config {
 public:
  static Config parse(std::istream& is) {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key = value");
      const auto key = trim(t.substr(0, eq));
      if (key.empty()) fail(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::Io, "cannot open config " + path);
    return parse(f);
  }

  bool has(const std::string& k) const { return values_.count(k) > 0; }
  void set(const std::string& k, const std::string& v) { values_[k] = v; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& k, const std::string& def) const {
    const auto it = values_.find(k);
    return it == values_.end() ? def : it->second;
  }

  double get(const std::string& k, double def) const {
    const auto it = values_.find(k);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(k);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "config key " + k + ": not a number: " + it->second);
    }
  }

  int get(const std::string& k, int def) const {
    const double v = get(k, static_cast<double>(def));
    if (v != static_cast<double>(static_cast<int>(v)))
      fail(ErrorCode::InvalidArgument, "config key " + k + ": not an integer");
    return static_cast<int>(v);
  }

  bool get(const std::string& k, bool def) const {
    const auto s = get(k, std::string(def ? "true" : "false"));
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(ErrorCode::InvalidArgument, "config key " + k + ": not a boolean: " + s);
  }

  Vec get(const std::string& k, const Vec& def) const {
    const auto it = values_.find(k);
    if (it == values_.end()) return def;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      Config one;
      one.values_["x"] = trim(item);
      out.push_back(one.get("x", 0.0));
    }
    return Eigen::Map<Vec>(out.data(), static_cast<Eigen::Index>(out.size()));
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace srmpc::harness
