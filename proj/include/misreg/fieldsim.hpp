#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "misreg/covmodel.hpp"
#include "misreg/dataset.hpp"
#include "misreg/rng.hpp"

namespace misreg {

// Regression-error model of the simulator: independent errors with variance
// sigma2, or errors drawn from a second spatially correlated field.
struct ErrorModel {
  enum class Kind { iid, spatial };
  Kind kind = Kind::iid;
  double sigma2 = 0.0;
  CovParams theta;  // spatial errors only

  static ErrorModel iid(double sigma2) {
    if (!(sigma2 >= 0.0)) throw invalid_input("error model: sigma2 must be >= 0");
    ErrorModel m;
    m.kind = Kind::iid;
    m.sigma2 = sigma2;
    return m;
  }

  static ErrorModel spatial(const CovParams& theta) {
    validate(theta);
    ErrorModel m;
    m.kind = Kind::spatial;
    m.theta = theta;
    return m;
  }
};

// Full generative configuration: field mean and covariance, outcome equation
// coefficients, error model, and the master seed.
struct SimConfig {
  std::uint64_t seed = 0;
  MeanModel mean = MeanModel::constant(0.0);
  CovParams theta;
  RegressionParams reg;
  ErrorModel errors = ErrorModel::iid(0.0);
};

namespace detail {

// Indices of locations deduplicated by exact coordinate equality, so that a
// joint draw over lists with repeats (or aligned station/outcome sets) is a
// single consistent field realization.
struct UniqueIndex {
  std::vector<Location> unique;
  std::vector<Eigen::Index> map;  // original index -> unique index

  static UniqueIndex build(const std::vector<Location>& locs) {
    UniqueIndex u;
    std::map<std::pair<double, double>, Eigen::Index> seen;
    u.map.reserve(locs.size());
    for (const auto& loc : locs) {
      auto key = std::make_pair(loc.x, loc.y);
      auto it = seen.find(key);
      if (it == seen.end()) {
        seen.emplace(key, static_cast<Eigen::Index>(u.unique.size()));
        u.map.push_back(static_cast<Eigen::Index>(u.unique.size()));
        u.unique.push_back(loc);
      } else {
        u.map.push_back(it->second);
      }
    }
    return u;
  }
};

inline Eigen::VectorXd draw_field_values(Rng& rng, const CovParams& theta, const MeanModel& mean,
                                         const std::vector<Location>& locs) {
  const UniqueIndex u = UniqueIndex::build(locs);
  Eigen::MatrixXd k = cov_matrix(theta, u.unique);
  Eigen::LLT<Eigen::MatrixXd> llt = factor_covariance(std::move(k), theta.sill);
  Eigen::VectorXd z = draw_standard_normal(rng, static_cast<Eigen::Index>(u.unique.size()));
  Eigen::VectorXd vals = mean.values(u.unique) + llt.matrixL() * z;
  Eigen::VectorXd out(static_cast<Eigen::Index>(locs.size()));
  for (std::size_t i = 0; i < locs.size(); ++i) out(static_cast<Eigen::Index>(i)) = vals(u.map[i]);
  return out;
}

}  // namespace detail

// One seeded draw of the field at the given locations: mean(locs) + L z with
// L L^T the model covariance. Deterministic given cfg.seed.
inline FieldSample simulate_field(const SimConfig& cfg, const std::vector<Location>& locs) {
  if (locs.empty()) throw invalid_input("simulate_field: no locations");
  validate(cfg.theta);
  Rng rng = make_rng(cfg.seed);
  return FieldSample{locs, detail::draw_field_values(rng, cfg.theta, cfg.mean, locs)};
}

// A simulated misaligned dataset plus the latent regressor values at the
// outcome locations, kept for oracle checks.
struct SimulatedMisaligned {
  MisalignedDataset data;
  Eigen::VectorXd latent_r;
};

// One joint field draw over the union of outcome and station locations;
// Y = R(outcome) beta + gamma0 + eps with eps from the error model. The
// returned dataset observes R only at the stations.
inline SimulatedMisaligned simulate_misaligned(const SimConfig& cfg,
                                               const std::vector<Location>& outcome_locs,
                                               const std::vector<Location>& station_locs) {
  if (outcome_locs.empty() || station_locs.empty())
    throw invalid_input("simulate_misaligned: empty location list");
  validate(cfg.theta);
  if (cfg.reg.beta.size() != 1)
    throw invalid_input("simulate_misaligned: simulator uses a single beta");
  Rng rng = make_rng(cfg.seed);

  std::vector<Location> all = outcome_locs;
  all.insert(all.end(), station_locs.begin(), station_locs.end());
  Eigen::VectorXd r_all = detail::draw_field_values(rng, cfg.theta, cfg.mean, all);
  const Eigen::Index n = static_cast<Eigen::Index>(outcome_locs.size());
  const Eigen::Index m = static_cast<Eigen::Index>(station_locs.size());
  Eigen::VectorXd r_out = r_all.head(n);
  Eigen::VectorXd r_sta = r_all.tail(m);

  Eigen::VectorXd eps = Eigen::VectorXd::Zero(n);
  if (cfg.errors.kind == ErrorModel::Kind::iid) {
    if (cfg.errors.sigma2 > 0.0)
      eps = std::sqrt(cfg.errors.sigma2) * draw_standard_normal(rng, n);
  } else {
    eps = detail::draw_field_values(rng, cfg.errors.theta, MeanModel::constant(0.0), outcome_locs);
  }

  MisalignedDataset data;
  data.outcome_locs = outcome_locs;
  data.station_locs = station_locs;
  data.r_star = r_sta;
  data.controls = Eigen::MatrixXd::Ones(n, 1);
  const double gamma0 = cfg.reg.gamma.size() > 0 ? cfg.reg.gamma(0) : 0.0;
  data.y = r_out * cfg.reg.beta(0) + Eigen::VectorXd::Constant(n, gamma0) + eps;
  return SimulatedMisaligned{std::move(data), std::move(r_out)};
}

}  // namespace misreg
