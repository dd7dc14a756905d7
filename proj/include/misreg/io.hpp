#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/dataset.hpp"
#include "misreg/empvario.hpp"
#include "misreg/kriging.hpp"
#include "misreg/twostep.hpp"

namespace misreg {

// Fixed-precision numeric formatting (12 significant digits) so emitted
// files re-ingest without loss and identical runs are byte-identical.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::string(buf);
}

// Full run configuration echoed into every report for reproducibility.
struct RunConfig {
  std::string subcommand;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> options;

  void set(const std::string& key, const std::string& value) { options.emplace_back(key, value); }
  void set(const std::string& key, double value) { options.emplace_back(key, fmt(value)); }
  void set(const std::string& key, int value) { options.emplace_back(key, std::to_string(value)); }

  std::string echo(const std::string& prefix) const {
    std::ostringstream os;
    os << prefix << "subcommand=" << subcommand << "\n";
    os << prefix << "seed=" << seed << "\n";
    for (const auto& [k, v] : options) os << prefix << k << "=" << v << "\n";
    return os.str();
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& tok, const std::string& file, int line,
                           const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing characters");
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
    return v;
  } catch (const std::exception&) {
    throw invalid_input(file + ":" + std::to_string(line) + ": column '" + column +
                        "' is not a finite number: '" + tok + "'");
  }
}

}  // namespace detail

struct StationsCsv {
  std::vector<std::string> ids;
  FieldSample sample;
};

// stations.csv schema: id,x_km,y_km,value (header required).
inline StationsCsv read_stations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw invalid_input(path + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() != 4 || header[0] != "id" || header[1] != "x_km" || header[2] != "y_km" ||
      header[3] != "value")
    throw invalid_input(path + ":1: expected header 'id,x_km,y_km,value'");
  StationsCsv out;
  std::vector<double> vals;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tok = detail::split_csv_line(line);
    if (tok.size() != 4)
      throw invalid_input(path + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                          std::to_string(tok.size()));
    out.ids.push_back(tok[0]);
    out.sample.locations.push_back(
        Location{detail::parse_number(tok[1], path, lineno, "x_km"),
                 detail::parse_number(tok[2], path, lineno, "y_km")});
    vals.push_back(detail::parse_number(tok[3], path, lineno, "value"));
  }
  if (vals.empty()) throw invalid_input(path + ": no station rows");
  out.sample.values = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return out;
}

struct OutcomesCsv {
  std::vector<std::string> ids;
  std::vector<Location> locations;
  Eigen::VectorXd y;
  Eigen::MatrixXd controls;  // file columns only; no intercept yet
  std::vector<std::string> control_names;
  std::vector<std::string> group;
};

// outcomes.csv schema: id,x_km,y_km,y[,ctrl_1..ctrl_p][,group].
inline OutcomesCsv read_outcomes_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw invalid_input(path + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "x_km" || header[2] != "y_km" ||
      header[3] != "y")
    throw invalid_input(path + ":1: expected header starting 'id,x_km,y_km,y'");
  bool has_group = false;
  std::vector<std::string> ctrl_names;
  for (std::size_t c = 4; c < header.size(); ++c) {
    if (header[c] == "group") {
      if (c + 1 != header.size())
        throw invalid_input(path + ":1: 'group' must be the last column");
      has_group = true;
    } else if (header[c].rfind("ctrl_", 0) == 0) {
      ctrl_names.push_back(header[c]);
    } else {
      throw invalid_input(path + ":1: unexpected column '" + header[c] + "'");
    }
  }
  OutcomesCsv out;
  out.control_names = ctrl_names;
  std::vector<double> ys;
  std::vector<std::vector<double>> ctrl_rows;
  int lineno = 1;
  const std::size_t expected = 4 + ctrl_names.size() + (has_group ? 1 : 0);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tok = detail::split_csv_line(line);
    if (tok.size() != expected)
      throw invalid_input(path + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(expected) + " fields, got " + std::to_string(tok.size()));
    out.ids.push_back(tok[0]);
    out.locations.push_back(Location{detail::parse_number(tok[1], path, lineno, "x_km"),
                                     detail::parse_number(tok[2], path, lineno, "y_km")});
    ys.push_back(detail::parse_number(tok[3], path, lineno, "y"));
    std::vector<double> row;
    for (std::size_t c = 0; c < ctrl_names.size(); ++c)
      row.push_back(detail::parse_number(tok[4 + c], path, lineno, ctrl_names[c]));
    ctrl_rows.push_back(std::move(row));
    if (has_group) {
      if (tok.back().empty())
        throw invalid_input(path + ":" + std::to_string(lineno) + ": empty group label");
      out.group.push_back(tok.back());
    }
  }
  if (ys.empty()) throw invalid_input(path + ": no outcome rows");
  const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
  out.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  out.controls.resize(n, static_cast<Eigen::Index>(ctrl_names.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t c = 0; c < ctrl_names.size(); ++c)
      out.controls(i, static_cast<Eigen::Index>(c)) = ctrl_rows[static_cast<std::size_t>(i)][c];
  return out;
}

// Validated dataset from the two CSV files. Duplicate station locations are
// averaged; an intercept column is prepended to the controls; a summary
// (sizes and distance quantiles to the closest station) is logged.
inline MisalignedDataset ingest(const std::string& stations_path,
                                const std::string& outcomes_path) {
  StationsCsv sta = read_stations_csv(stations_path);
  OutcomesCsv outc = read_outcomes_csv(outcomes_path);
  MisalignedDataset data;
  const FieldSample dedup = average_duplicate_stations(sta.sample);
  data.station_locs = dedup.locations;
  data.r_star = dedup.values;
  data.outcome_locs = outc.locations;
  data.y = outc.y;
  data.group = outc.group;
  const Eigen::Index n = outc.y.size();
  data.controls.resize(n, 1 + outc.controls.cols());
  data.controls.col(0).setOnes();
  if (outc.controls.cols() > 0) data.controls.rightCols(outc.controls.cols()) = outc.controls;
  validate(data);

  std::vector<double> nearest;
  nearest.reserve(static_cast<std::size_t>(n));
  for (const auto& loc : data.outcome_locs) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : data.station_locs) best = std::min(best, distance(loc, s));
    nearest.push_back(best);
  }
  log_info("ingest: N=" + std::to_string(n) + " outcomes, M=" +
           std::to_string(data.r_star.size()) + " stations; distance to closest station: median=" +
           fmt(quantile(nearest, 0.5)) + " km, q3=" + fmt(quantile(nearest, 0.75)) + " km");
  return data;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw invalid_input("cannot write " + path);
  out << content;
  if (!out) throw invalid_input("write failed: " + path);
}

inline std::string predictions_csv(const std::vector<std::string>& ids,
                                   const KrigingPrediction& pred) {
  std::ostringstream os;
  os << "id,x_km,y_km,value,kvar\n";
  for (Eigen::Index i = 0; i < pred.values.size(); ++i) {
    const std::string id = ids.empty() ? std::to_string(i) : ids[static_cast<std::size_t>(i)];
    os << id << "," << fmt(pred.locations[static_cast<std::size_t>(i)].x) << ","
       << fmt(pred.locations[static_cast<std::size_t>(i)].y) << "," << fmt(pred.values(i)) << ","
       << fmt(pred.variances(i)) << "\n";
  }
  return os.str();
}

// Variogram table. Estimates are in the full-variance convention; the
// semivariance column carries the conventional halved value.
inline std::string variogram_csv(const EmpiricalVariogram& ev) {
  std::ostringstream os;
  os << "r,angle,estimate,semivariance,count,mean_distance\n";
  for (const auto& e : ev.entries) {
    os << fmt(e.lag.r) << ","
       << (e.lag.mode == LagMode::directional ? fmt(e.lag.angle) : std::string("")) << ","
       << fmt(e.estimate) << "," << fmt(e.estimate / 2.0) << "," << e.count << ","
       << fmt(e.mean_distance) << "\n";
  }
  return os.str();
}

inline std::string estimate_csv(const RegressionEstimate& est, const RunConfig& cfg) {
  std::ostringstream os;
  os << cfg.echo("# ");
  os << "coef,estimate,se,ci_lo,ci_hi,method\n";
  for (Eigen::Index i = 0; i < est.beta.size(); ++i)
    os << est.beta_labels[static_cast<std::size_t>(i)] << "," << fmt(est.beta(i)) << ","
       << fmt(est.se(i)) << "," << fmt(est.ci[static_cast<std::size_t>(i)].first) << ","
       << fmt(est.ci[static_cast<std::size_t>(i)].second) << "," << est.method << "\n";
  for (Eigen::Index j = 0; j < est.gamma.size(); ++j) {
    const Eigen::Index i = est.beta.size() + j;
    os << "gamma_" << j << "," << fmt(est.gamma(j)) << "," << fmt(est.se(i)) << ","
       << fmt(est.ci[static_cast<std::size_t>(i)].first) << ","
       << fmt(est.ci[static_cast<std::size_t>(i)].second) << "," << est.method << "\n";
  }
  return os.str();
}

inline std::string estimate_text(const RegressionEstimate& est, const RunConfig& cfg) {
  std::ostringstream os;
  os << "method: " << est.method << "\n";
  for (Eigen::Index i = 0; i < est.beta.size(); ++i)
    os << est.beta_labels[static_cast<std::size_t>(i)] << " = " << fmt(est.beta(i)) << "  (se "
       << fmt(est.se(i)) << ", " << fmt(100 * (1 - est.alpha)) << "% ci ["
       << fmt(est.ci[static_cast<std::size_t>(i)].first) << ", "
       << fmt(est.ci[static_cast<std::size_t>(i)].second) << "])\n";
  for (Eigen::Index j = 0; j < est.gamma.size(); ++j) {
    const Eigen::Index i = est.beta.size() + j;
    os << "gamma_" << j << " = " << fmt(est.gamma(j)) << "  (se " << fmt(est.se(i)) << ")\n";
  }
  for (const auto& [k, v] : est.diagnostics) os << k << " = " << fmt(v) << "\n";
  os << "run configuration:\n" << cfg.echo("  ");
  return os.str();
}

}  // namespace misreg
