#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/common.hpp"
#include "misreg/geometry.hpp"

namespace misreg {

// Values of one random field observed at a set of locations.
struct FieldSample {
  std::vector<Location> locations;
  Eigen::VectorXd values;
};

inline void validate(const FieldSample& s) {
  if (s.locations.size() != static_cast<std::size_t>(s.values.size()))
    throw invalid_input("field sample: locations and values differ in length");
  for (const auto& loc : s.locations)
    if (!std::isfinite(loc.x) || !std::isfinite(loc.y))
      throw invalid_input("field sample: non-finite coordinate");
  if (!s.values.allFinite()) throw invalid_input("field sample: non-finite value");
}

// Known basis s(.) of the random-field mean m(x) = s(x)^T rho.
struct MeanBasis {
  int dim = 1;
  std::function<Eigen::VectorXd(const Location&)> eval;

  // s(x) = (1): constant mean.
  static MeanBasis constant() {
    MeanBasis b;
    b.dim = 1;
    b.eval = [](const Location&) { return Eigen::VectorXd::Ones(1); };
    return b;
  }

  // s(x) = (1, x, y): planar trend.
  static MeanBasis planar() {
    MeanBasis b;
    b.dim = 3;
    b.eval = [](const Location& loc) {
      Eigen::VectorXd s(3);
      s << 1.0, loc.x, loc.y;
      return s;
    };
    return b;
  }

  Eigen::MatrixXd design(const std::vector<Location>& locs) const {
    Eigen::MatrixXd s(static_cast<Eigen::Index>(locs.size()), dim);
    for (std::size_t i = 0; i < locs.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = eval(locs[i]).transpose();
    return s;
  }
};

// A fitted or known mean function s(x)^T rho.
struct MeanModel {
  MeanBasis basis = MeanBasis::constant();
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(1);

  static MeanModel constant(double m) {
    MeanModel mm;
    mm.basis = MeanBasis::constant();
    mm.rho = Eigen::VectorXd::Constant(1, m);
    return mm;
  }

  double value(const Location& loc) const { return basis.eval(loc).dot(rho); }

  Eigen::VectorXd values(const std::vector<Location>& locs) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(locs.size()));
    for (std::size_t i = 0; i < locs.size(); ++i) v(static_cast<Eigen::Index>(i)) = value(locs[i]);
    return v;
  }
};

// The immutable input of every estimator: outcomes with controls at one set
// of locations, regressor observations at another. The control matrix
// includes the intercept column. Group labels, when present, interact the
// imputed regressor's coefficient per group.
struct MisalignedDataset {
  std::vector<Location> outcome_locs;
  Eigen::VectorXd y;
  Eigen::MatrixXd controls;         // N x p, includes intercept column
  std::vector<std::string> group;   // empty, or one label per outcome row
  std::vector<Location> station_locs;
  Eigen::VectorXd r_star;

  Eigen::Index n_outcomes() const { return y.size(); }
  Eigen::Index n_stations() const { return r_star.size(); }

  FieldSample stations() const { return FieldSample{station_locs, r_star}; }
};

inline void validate(const MisalignedDataset& d) {
  const Eigen::Index n = d.y.size();
  if (static_cast<Eigen::Index>(d.outcome_locs.size()) != n || d.controls.rows() != n)
    throw invalid_input("dataset: outcome locations, outcomes and controls differ in length");
  if (!d.group.empty() && static_cast<Eigen::Index>(d.group.size()) != n)
    throw invalid_input("dataset: group labels differ in length from outcomes");
  if (static_cast<Eigen::Index>(d.station_locs.size()) != d.r_star.size())
    throw invalid_input("dataset: station locations and values differ in length");
  if (n == 0) throw invalid_input("dataset: no outcome observations");
  if (d.r_star.size() == 0) throw invalid_input("dataset: no station observations");
  if (!d.y.allFinite() || !d.controls.allFinite() || !d.r_star.allFinite())
    throw invalid_input("dataset: non-finite value");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.controls);
  if (qr.rank() < d.controls.cols()) throw invalid_input("dataset: control matrix rank deficient");
}

}  // namespace misreg
