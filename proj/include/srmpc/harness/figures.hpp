#pragma once

// Figure data from a trace directory: CSV series plus a gnuplot stub. Sets are
// written as closed polygons (first vertex repeated), one block per set.

#include <srmpc/geometry/polytope_json.hpp>
#include <srmpc/harness/report.hpp>
#include <srmpc/harness/trace.hpp>

#include <filesystem>
#include <sstream>

namespace srmpc::harness {

namespace fs = std::filesystem;

inline std::ostringstream csv_stream() {
  std::ostringstream os;
  os.precision(17);
  return os;
}

/// "x,y" rows of a closed polygon; empty when the set is empty or degenerate.
inline std::string polygon_rows(const geometry::Polytope& P, const std::string& prefix = {}) {
  if (P.num_facets() == 0 || P.dim() != 2) return {};
  std::vector<geometry::Point2> v;
  try {
    v = geometry::vertices_2d(P);
  } catch (const Error&) {
    return {};
  }
  auto os = csv_stream();
  for (std::size_t k = 0; k <= v.size(); ++k) {
    const auto& p = v[k % v.size()];
    os << prefix << p.x() << ',' << p.y() << '\n';
  }
  return os.str();
}

/// epoch, theta..., mean_abs_td, J, |theta - theta*|
inline std::string epoch_csv(const std::vector<Vec>& thetas, const std::vector<double>& td,
                             const std::vector<double>& J, const Vec& theta_star,
                             const std::vector<std::string>& names) {
  auto os = csv_stream();
  os << "epoch";
  for (const auto& n : names) os << ',' << n;
  os << ",mean_abs_td,J,dist_theta_star\n";
  for (std::size_t e = 0; e < thetas.size(); ++e) {
    os << e;
    for (Eigen::Index k = 0; k < thetas[e].size(); ++k) os << ',' << thetas[e](k);
    os << ',' << td[e] << ',' << J[e] << ',' << (thetas[e] - theta_star).norm() << '\n';
  }
  return os.str();
}

inline std::vector<std::string> emit_scalar_figures(const std::vector<json>& trace, const fs::path& dir) {
  auto os = csv_stream();
  os << "step,s,a,s_next,u_bound,K,a_s,outcome\n";
  for (const auto& j : of_type(trace, "step")) {
    os << j.at("step").get<int>() << ',' << j.at("state")[0].get<double>() << ',' << j.at("action")[0].get<double>()
       << ',' << j.at("next_state")[0].get<double>() << ',' << j.at("u_bound").get<double>() << ','
       << j.at("theta")[0].get<double>() << ',' << j.at("theta")[1].get<double>() << ','
       << (j.contains("decision") ? j["decision"].at("outcome").get<std::string>() : std::string("none")) << '\n';
  }
  write_text(dir / "fig_scalar_state.csv", os.str());
  auto ps = csv_stream();
  ps << "step,alpha,K,a_s,kind\n";
  for (const auto& j : trace) {
    const auto t = j.value("type", "");
    if (t != "proposal" && t != "shrink") continue;
    ps << j.at("step").get<int>() << ',' << j.at("alpha").get<double>() << ',' << j.at("theta")[0].get<double>() << ','
       << j.at("theta")[1].get<double>() << ',' << t << '\n';
  }
  write_text(dir / "fig_scalar_proposals.csv", ps.str());
  write_text(dir / "figures.gp",
             "set datafile separator ','\n"
             "set key autotitle columnhead\n"
             "set multiplot layout 2,1\n"
             "plot 'fig_scalar_state.csv' using 1:2 with lines title 's', 0.1 with lines dt 2 title 's max'\n"
             "plot 'fig_scalar_state.csv' using 1:3 with lines title 'a', "
             "'fig_scalar_state.csv' using 1:5 with lines dt 2 title 'u bound'\n"
             "unset multiplot\n");
  return {"fig_scalar_state.csv", "fig_scalar_proposals.csv", "figures.gp"};
}

inline std::vector<std::string> emit_tube_figures(const std::vector<json>& trace, const fs::path& dir) {
  std::vector<std::string> files;
  auto put = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    files.push_back(name);
  };
  const auto header = of_type(trace, "header").at(0);

  auto st = csv_stream();
  st << "step,epoch,s0,s1,a,v_hat,in_mrpi,theta_index\n";
  for (const auto& j : of_type(trace, "step"))
    st << j.at("step").get<int>() << ',' << j.at("epoch").get<int>() << ',' << j.at("state")[0].get<double>() << ','
       << j.at("state")[1].get<double>() << ',' << j.at("action")[0].get<double>() << ','
       << j.at("core_value").get<double>() << ',' << (j.at("in_mrpi").get<bool>() ? 1 : 0) << ','
       << j.at("theta_index").get<int>() << '\n';
  put("fig_tube_state.csv", st.str());

  // Sets: one closed polygon per block, blocks separated by blank lines (gnuplot index).
  const auto sets = of_type(trace, "sets").at(0);
  auto ss = csv_stream();
  ss << "set,x,y\n";
  for (const char* name : {"terminal_initial", "terminal_final", "mrpi_final", "W_initial", "W_final", "octagon"}) {
    const auto rows = polygon_rows(geometry::polytope_from_json(sets.at(name)), std::string(name) + ",");
    if (rows.empty()) continue;
    ss << rows << "\n\n";
  }
  put("fig_tube_sets.csv", ss.str());

  auto hull = csv_stream();
  hull << "x,y\n";
  std::vector<geometry::Point2> pts;
  for (const auto& r : sets.at("residual_hull")) pts.emplace_back(r[0].get<double>(), r[1].get<double>());
  const auto h = geometry::convex_hull_2d(pts);
  for (std::size_t k = 0; k <= h.size() && !h.empty(); ++k) hull << h[k % h.size()].x() << ',' << h[k % h.size()].y() << '\n';
  put("fig_tube_residual_hull.csv", hull.str());

  auto mr = csv_stream();
  mr << "theta_index,x,y\n";
  for (const auto& t : of_type(trace, "theta")) {
    if (t.at("mrpi").is_null()) continue;
    const auto rows = polygon_rows(geometry::polytope_from_json(t.at("mrpi")), std::to_string(t.at("index").get<int>()) + ",");
    if (!rows.empty()) mr << rows << "\n\n";
  }
  put("fig_tube_mrpi_history.csv", mr.str());

  const auto in = stability_inputs(trace);
  const auto rep = analyze_stability(in);
  std::vector<double> J;
  for (const auto& e : of_type(trace, "epoch")) J.push_back(e.at("J").get<double>());
  put("fig_tube_epochs.csv", epoch_csv(in.epoch_thetas, in.epoch_td, J, rep.theta_star,
                                       header.at("theta_names").get<std::vector<std::string>>()));
  put("fig_tube_lyapunov.csv", rep.series_csv());
  put("figures.gp",
      "set datafile separator ','\n"
      "set key autotitle columnhead\n"
      "set terminal pngcairo size 900,700\n"
      "set output 'tube_sets.png'\n"
      "plot for [i=0:5] 'fig_tube_sets.csv' index i using 2:3 with lines, "
      "'fig_tube_state.csv' using 3:4 with linespoints pt 7 ps 0.3 title 'state'\n"
      "set output 'tube_noise.png'\n"
      "plot 'fig_tube_sets.csv' index 3:5 using 2:3 with lines, 'fig_tube_residual_hull.csv' using 1:2 with lines\n"
      "set output 'tube_td.png'\n"
      "set logscale y\n"
      "plot 'fig_tube_epochs.csv' using 1:'mean_abs_td' with lines\n"
      "unset logscale y\n"
      "set output 'tube_lyapunov.png'\n"
      "plot 'fig_tube_lyapunov.csv' using 1:3 with lines title 'V', '' using 1:4 with lines title 'W'\n"
      "set output 'tube_performance.png'\n"
      "plot 'fig_tube_epochs.csv' using 1:'J' with lines\n");
  return files;
}

/// Reads DIR/trace.jsonl and writes the figure files next to it.
inline std::vector<std::string> emit_figures(const fs::path& dir) {
  const auto trace = read_trace(dir / "trace.jsonl");
  const auto header = of_type(trace, "header");
  if (header.empty()) fail(ErrorCode::InvalidArgument, "figures: trace has no header");
  const auto kind = header[0].value("experiment", "");
  if (kind == "scalar") return emit_scalar_figures(trace, dir);
  if (kind == "tube") return emit_tube_figures(trace, dir);
  fail(ErrorCode::InvalidArgument, "figures: unknown experiment " + kind);
}

}  // namespace srmpc::harness
