#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/dataset.hpp"
#include "misreg/geometry.hpp"

namespace misreg {

// Which empirical statistic the cross bins carry: mean squared difference of
// residuals (variogram form) or mean product of centered values (covariance
// form).
enum class CrossFlavor { squared_difference, centered_product };

inline std::string to_string(CrossFlavor f) {
  return f == CrossFlavor::squared_difference ? "variogram" : "covariance";
}

struct VariogramEntry {
  LagSpec lag;
  double estimate = 0.0;
  std::size_t count = 0;
  double mean_distance = 0.0;  // count-weighted mean separation within the bin
};

// Per-lag nonparametric estimates. Self variograms use the full-variance
// convention, matching variogram(); halve for semivariance.
struct EmpiricalVariogram {
  std::vector<VariogramEntry> entries;
  bool cross = false;
  CrossFlavor flavor = CrossFlavor::squared_difference;
};

namespace detail {

inline EmpiricalVariogram summarize_bins(const std::vector<Location>& locs_a,
                                         const std::vector<Location>& locs_b,
                                         const std::vector<PairBin>& bins,
                                         const Eigen::VectorXd& res_a,
                                         const Eigen::VectorXd& res_b, bool squared_difference,
                                         std::size_t min_pairs) {
  EmpiricalVariogram ev;
  std::size_t dropped = 0;
  for (const auto& bin : bins) {
    if (bin.count < std::max<std::size_t>(min_pairs, 1)) {
      ++dropped;
      continue;
    }
    double sum = 0.0;
    double dist_sum = 0.0;
    for (const auto& [i, j] : bin.pairs) {
      const double a = res_a(i);
      const double b = res_b(j);
      sum += squared_difference ? (a - b) * (a - b) : a * b;
      dist_sum += distance(locs_a[static_cast<std::size_t>(i)], locs_b[static_cast<std::size_t>(j)]);
    }
    VariogramEntry entry;
    entry.lag = bin.lag;
    entry.count = bin.count;
    entry.estimate = sum / static_cast<double>(bin.count);
    entry.mean_distance = dist_sum / static_cast<double>(bin.count);
    ev.entries.push_back(entry);
  }
  if (dropped > 0)
    log_warning(std::to_string(dropped) + " lag bin(s) dropped (fewer than " +
                std::to_string(min_pairs) + " pairs)");
  if (ev.entries.empty()) throw numerical_error("no estimable lags");
  return ev;
}

}  // namespace detail

// Empirical variogram of one field in the full-variance convention:
// per lag, the mean of (res_i - res_j)^2 over the bin, where res = value -
// supplied mean estimate. Residualization uses the supplied means only;
// nothing is re-estimated here.
inline EmpiricalVariogram empirical_variogram(const FieldSample& sample,
                                              const Eigen::VectorXd& mean_values,
                                              const std::vector<LagSpec>& lags,
                                              std::size_t min_pairs = 1) {
  validate(sample);
  if (sample.values.size() < 2) throw invalid_input("empirical_variogram: need >= 2 observations");
  if (mean_values.size() != sample.values.size())
    throw invalid_input("empirical_variogram: mean estimate length mismatch");
  const Eigen::VectorXd res = sample.values - mean_values;
  const auto bins = bin_pairs(sample.locations, lags);
  EmpiricalVariogram ev =
      detail::summarize_bins(sample.locations, sample.locations, bins, res, res, true, min_pairs);
  ev.cross = false;
  return ev;
}

inline EmpiricalVariogram empirical_variogram(const FieldSample& sample, double mean_value,
                                              const std::vector<LagSpec>& lags,
                                              std::size_t min_pairs = 1) {
  return empirical_variogram(
      sample, Eigen::VectorXd::Constant(sample.values.size(), mean_value), lags, min_pairs);
}

// Empirical cross statistic between the regressor field (pair index i) and
// the outcome field (pair index j). Pairs run from r locations to y
// locations. Both fields are residualized by their supplied mean estimates.
inline EmpiricalVariogram empirical_cross_covariogram(
    const FieldSample& r_sample, const FieldSample& y_sample, const Eigen::VectorXd& r_mean,
    const Eigen::VectorXd& y_mean, const std::vector<LagSpec>& lags,
    CrossFlavor flavor = CrossFlavor::centered_product, std::size_t min_pairs = 1) {
  validate(r_sample);
  validate(y_sample);
  if (r_mean.size() != r_sample.values.size() || y_mean.size() != y_sample.values.size())
    throw invalid_input("empirical_cross_covariogram: mean estimate length mismatch");
  const Eigen::VectorXd res_r = r_sample.values - r_mean;
  const Eigen::VectorXd res_y = y_sample.values - y_mean;
  const auto bins = bin_pairs(r_sample.locations, y_sample.locations, lags);
  EmpiricalVariogram ev = detail::summarize_bins(r_sample.locations, y_sample.locations, bins,
                                                 res_r, res_y,
                                                 flavor == CrossFlavor::squared_difference,
                                                 min_pairs);
  ev.cross = true;
  ev.flavor = flavor;
  return ev;
}

}  // namespace misreg
