#pragma once

#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "misreg/covfit.hpp"
#include "misreg/covmodel.hpp"
#include "misreg/dataset.hpp"

namespace misreg {

// Field predictions at target locations with optional pointwise prediction
// variances (zero at observed stations when the nugget is zero).
struct KrigingPrediction {
  std::vector<Location> locations;
  Eigen::VectorXd values;
  Eigen::VectorXd variances;
};

// Exact-duplicate station locations are averaged; the station covariance is
// singular otherwise.
inline FieldSample average_duplicate_stations(const FieldSample& stations) {
  std::map<std::pair<double, double>, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < stations.locations.size(); ++i)
    groups[{stations.locations[i].x, stations.locations[i].y}].push_back(
        static_cast<Eigen::Index>(i));
  if (groups.size() == stations.locations.size()) return stations;
  FieldSample out;
  out.locations.reserve(groups.size());
  out.values.resize(static_cast<Eigen::Index>(groups.size()));
  Eigen::Index k = 0;
  // Keep first-appearance order for reproducible output.
  std::vector<std::pair<Eigen::Index, std::pair<double, double>>> ordered;
  for (const auto& [key, idx] : groups) ordered.emplace_back(idx.front(), key);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [first, key] : ordered) {
    const auto& idx = groups[key];
    double sum = 0.0;
    for (Eigen::Index i : idx) sum += stations.values(i);
    out.locations.push_back(stations.locations[static_cast<std::size_t>(first)]);
    out.values(k++) = sum / static_cast<double>(idx.size());
  }
  log_warning("averaged " + std::to_string(stations.locations.size() - groups.size()) +
              " duplicate station location(s)");
  return out;
}

namespace detail {

// Shared solve: factor K* once, predict a batch, and accumulate prediction
// variances. When mean_basis is non-null the GLS mean-estimation term enters
// the variances (universal-kriging form).
inline KrigingPrediction krig_core(const CovParams& theta, const FieldSample& stations_in,
                                   const Eigen::VectorXd& station_mean,
                                   const std::vector<Location>& targets,
                                   const Eigen::VectorXd& target_mean,
                                   const MeanBasis* mean_basis) {
  validate(theta);
  const FieldSample stations = average_duplicate_stations(stations_in);
  Eigen::VectorXd sta_mean = station_mean;
  if (stations.values.size() != station_mean.size()) {
    // Means correspond to the deduplicated stations.
    throw invalid_input("krig: station mean length mismatch after deduplication");
  }
  const Eigen::Index m = stations.values.size();
  const Eigen::Index n = static_cast<Eigen::Index>(targets.size());
  if (n == 0) throw invalid_input("krig: no target locations");

  Eigen::MatrixXd kstar = cov_matrix(theta, stations.locations);
  Eigen::LLT<Eigen::MatrixXd> llt = factor_covariance(std::move(kstar), theta.sill);
  Eigen::VectorXd alpha = llt.solve(stations.values - sta_mean);

  Eigen::MatrixXd kbar = cov_matrix(theta, stations.locations, targets);  // m x n

  KrigingPrediction pred;
  pred.locations = targets;
  pred.values = target_mean + kbar.transpose() * alpha;

  Eigen::MatrixXd kinv_kbar = llt.solve(kbar);
  pred.variances.resize(n);
  const double k0 = cov(theta, 0.0);
  Eigen::MatrixXd sks_inv;
  Eigen::MatrixXd s;
  if (mean_basis != nullptr) {
    s = mean_basis->design(stations.locations);
    Eigen::MatrixXd sks = s.transpose() * llt.solve(s);
    Eigen::LLT<Eigen::MatrixXd> sks_llt(sks);
    if (sks_llt.info() != Eigen::Success) throw invalid_input("mean basis collinear");
    sks_inv = sks_llt.solve(Eigen::MatrixXd::Identity(s.cols(), s.cols()));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    double v = k0 - kbar.col(j).dot(kinv_kbar.col(j));
    if (mean_basis != nullptr) {
      Eigen::VectorXd s0 = mean_basis->eval(targets[static_cast<std::size_t>(j)]);
      Eigen::VectorXd u = s0 - s.transpose() * kinv_kbar.col(j);
      v += u.dot(sks_inv * u);
    }
    pred.variances(j) = std::max(v, 0.0);
  }
  return pred;
}

}  // namespace detail

// Best linear predictor with a known mean function.
inline KrigingPrediction blp(const CovParams& theta, const MeanModel& mean,
                             const FieldSample& stations, const std::vector<Location>& targets) {
  const FieldSample dedup = average_duplicate_stations(stations);
  return detail::krig_core(theta, dedup, mean.values(dedup.locations), targets,
                           mean.values(targets), nullptr);
}

// Best linear unbiased predictor: the mean coefficients are replaced by
// their GLS estimate at the given theta.
inline KrigingPrediction blup(const CovParams& theta, const MeanBasis& basis,
                              const FieldSample& stations, const std::vector<Location>& targets) {
  const FieldSample dedup = average_duplicate_stations(stations);
  MeanModel mean;
  mean.basis = basis;
  mean.rho = gls_mean(theta, dedup, basis);
  return detail::krig_core(theta, dedup, mean.values(dedup.locations), targets,
                           mean.values(targets), &basis);
}

// Estimated BLUP: the BLUP evaluated at the fitted covariance and mean.
inline KrigingPrediction eblup(const FitResult& fit, const FieldSample& stations,
                               const std::vector<Location>& targets) {
  const FieldSample dedup = average_duplicate_stations(stations);
  return detail::krig_core(fit.theta, dedup, fit.mean.values(dedup.locations), targets,
                           fit.mean.values(targets), &fit.mean.basis);
}

// Leave-one-out prediction errors over the stations (observed minus
// predicted), for interpolation diagnostics.
inline Eigen::VectorXd loo_residuals(const CovParams& theta, const MeanBasis& basis,
                                     const FieldSample& stations_in) {
  const FieldSample stations = average_duplicate_stations(stations_in);
  const Eigen::Index m = stations.values.size();
  if (m < basis.dim + 2) throw invalid_input("loo_residuals: too few stations");
  Eigen::VectorXd res(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    FieldSample rest;
    rest.locations.reserve(static_cast<std::size_t>(m - 1));
    rest.values.resize(m - 1);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      rest.locations.push_back(stations.locations[static_cast<std::size_t>(j)]);
      rest.values(k++) = stations.values(j);
    }
    KrigingPrediction p = blup(theta, basis, rest, {stations.locations[static_cast<std::size_t>(i)]});
    res(i) = stations.values(i) - p.values(0);
  }
  return res;
}

}  // namespace misreg
