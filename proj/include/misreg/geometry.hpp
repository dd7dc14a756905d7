#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "misreg/common.hpp"

namespace misreg {

// Planar location in kilometers. The toolkit never projects lon/lat;
// projecting to planar kilometers is a preprocessing concern.
struct Location {
  double x = 0.0;  // km east
  double y = 0.0;  // km north
};

inline bool same_location(const Location& a, const Location& b) {
  return a.x == b.x && a.y == b.y;
}

inline double distance(const Location& a, const Location& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

enum class LagMode { isotropic, directional };

// A distance (and optionally direction) bin for pairing observations.
struct LagSpec {
  LagMode mode = LagMode::isotropic;
  double r = 0.0;          // target separation, km
  double angle = 0.0;      // bin center direction in [0, pi), directional only
  double r_tol = 0.0;      // half-width of the distance bin, km
  double angle_tol = 0.0;  // half-width of the angle bin, radians
};

inline void validate(const LagSpec& lag) {
  if (!(lag.r >= 0.0) || !std::isfinite(lag.r)) throw invalid_input("lag distance must be >= 0");
  if (!(lag.r_tol > 0.0)) throw invalid_input("lag distance tolerance must be > 0");
  if (lag.mode == LagMode::directional) {
    if (!(lag.angle >= 0.0) || !(lag.angle < M_PI))
      throw invalid_input("directional lag angle must lie in [0, pi)");
    if (!(lag.angle_tol > 0.0)) throw invalid_input("lag angle tolerance must be > 0");
  }
}

inline LagSpec isotropic_lag(double r, double r_tol) {
  LagSpec lag;
  lag.mode = LagMode::isotropic;
  lag.r = r;
  lag.r_tol = r_tol;
  validate(lag);
  return lag;
}

inline LagSpec directional_lag(double r, double r_tol, double angle, double angle_tol) {
  LagSpec lag;
  lag.mode = LagMode::directional;
  lag.r = r;
  lag.r_tol = r_tol;
  lag.angle = angle;
  lag.angle_tol = angle_tol;
  validate(lag);
  return lag;
}

// All pairs whose separation falls in one lag bin. For self-binning the pairs
// are unordered and stored once with i < j; for cross-binning i indexes the
// first location set and j the second.
struct PairBin {
  LagSpec lag;
  std::vector<std::pair<int, int>> pairs;
  std::size_t count = 0;
};

namespace detail {

// Direction of a separation vector folded modulo pi into [0, pi).
inline double fold_angle(double dx, double dy) {
  double a = std::atan2(dy, dx);
  if (a < 0.0) a += M_PI;
  if (a >= M_PI) a -= M_PI;
  return a;
}

inline bool angle_within(double a, double center, double tol) {
  double diff = std::fabs(a - center);
  diff = std::min(diff, M_PI - diff);
  return diff <= tol;
}

inline bool pair_matches(const LagSpec& lag, const Location& a, const Location& b) {
  const double d = distance(a, b);
  if (std::fabs(d - lag.r) > lag.r_tol) return false;
  if (lag.mode == LagMode::directional) {
    if (d == 0.0) return lag.r <= lag.r_tol;  // no direction at zero separation
    return angle_within(fold_angle(b.x - a.x, b.y - a.y), lag.angle, lag.angle_tol);
  }
  return true;
}

}  // namespace detail

// Bins pairs of locations by the given lags. When locs_a and locs_b are the
// same object, self-binning applies: each unordered pair enters once (i < j)
// and i == j pairs are excluded. Bins with no qualifying pair are retained
// with empty pair lists.
inline std::vector<PairBin> bin_pairs(const std::vector<Location>& locs_a,
                                      const std::vector<Location>& locs_b,
                                      const std::vector<LagSpec>& lags) {
  if (locs_a.empty() || locs_b.empty()) throw invalid_input("bin_pairs: no locations");
  for (const auto& lag : lags) validate(lag);
  const bool aliased = &locs_a == &locs_b;
  std::vector<PairBin> bins(lags.size());
  for (std::size_t k = 0; k < lags.size(); ++k) bins[k].lag = lags[k];
  const int na = static_cast<int>(locs_a.size());
  const int nb = static_cast<int>(locs_b.size());
  for (int i = 0; i < na; ++i) {
    const int j0 = aliased ? i + 1 : 0;
    for (int j = j0; j < nb; ++j) {
      for (std::size_t k = 0; k < lags.size(); ++k) {
        if (detail::pair_matches(lags[k], locs_a[i], locs_b[j])) bins[k].pairs.emplace_back(i, j);
      }
    }
  }
  for (auto& bin : bins) bin.count = bin.pairs.size();
  return bins;
}

inline std::vector<PairBin> bin_pairs(const std::vector<Location>& locs,
                                      const std::vector<LagSpec>& lags) {
  return bin_pairs(locs, locs, lags);
}

// side x side square grid with the given spacing, origin at (0, 0).
inline std::vector<Location> make_lattice(int side, double spacing) {
  if (side < 1) throw invalid_input("make_lattice: side must be >= 1");
  if (!(spacing > 0.0)) throw invalid_input("make_lattice: spacing must be > 0");
  std::vector<Location> locs;
  locs.reserve(static_cast<std::size_t>(side) * side);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j)
      locs.push_back(Location{spacing * static_cast<double>(i), spacing * static_cast<double>(j)});
  return locs;
}

// Default lag grid: n_bins equally spaced distances between the lo and hi
// percentiles of the pairwise distances, with r_tol equal to half the step.
inline std::vector<LagSpec> default_lags(const std::vector<Location>& locs, int n_bins = 8,
                                         double lo_percentile = 0.05,
                                         double hi_percentile = 0.60) {
  if (locs.size() < 2) throw invalid_input("default_lags: need at least two locations");
  if (n_bins < 1) throw invalid_input("default_lags: n_bins must be >= 1");
  std::vector<double> dists;
  dists.reserve(locs.size() * (locs.size() - 1) / 2);
  for (std::size_t i = 0; i < locs.size(); ++i)
    for (std::size_t j = i + 1; j < locs.size(); ++j) dists.push_back(distance(locs[i], locs[j]));
  const double lo = quantile(dists, lo_percentile);
  const double hi = quantile(dists, hi_percentile);
  std::vector<LagSpec> lags;
  if (n_bins == 1 || hi <= lo) {
    lags.push_back(isotropic_lag(std::max(lo, 1e-12), std::max((hi - lo) / 2.0, lo / 2.0 + 1e-12)));
    return lags;
  }
  const double step = (hi - lo) / static_cast<double>(n_bins - 1);
  for (int k = 0; k < n_bins; ++k) lags.push_back(isotropic_lag(lo + step * k, step / 2.0));
  return lags;
}

}  // namespace misreg
