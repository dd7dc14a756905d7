#include <catch2/catch_amalgamated.hpp>

#include "misreg/empvario.hpp"
#include "misreg/fieldsim.hpp"

using namespace misreg;

namespace {
std::ostream* quiet_logs() {
  misreg::log_stream() = nullptr;
  return nullptr;
}
const auto quiet = quiet_logs();
}  // namespace

TEST_CASE("constant field has zero variogram", "[empvario]") {
  auto locs = make_lattice(4, 1.0);
  FieldSample s{locs, Eigen::VectorXd::Constant(16, 3.0)};
  auto ev = empirical_variogram(s, 3.0, {isotropic_lag(1.0, 0.1), isotropic_lag(2.0, 0.1)});
  for (const auto& e : ev.entries) CHECK(e.estimate == 0.0);
}

TEST_CASE("single pair arithmetic", "[empvario]") {
  FieldSample s{{{0, 0}, {1, 0}}, Eigen::VectorXd(2)};
  s.values << 1.0, 3.0;
  auto ev = empirical_variogram(s, 2.0, {isotropic_lag(1.0, 0.1)});
  REQUIRE(ev.entries.size() == 1);
  CHECK(ev.entries[0].estimate == Catch::Approx(4.0));
  CHECK(ev.entries[0].count == 1);
}

TEST_CASE("variogram estimates track the model on simulated data", "[empvario][slow]") {
  const CovParams theta{CovKind::exponential, 1.0, 2.0, 0.5, 0.0};
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> u(0.0, 35.0);
  std::vector<Location> locs;
  for (int i = 0; i < 2000; ++i) locs.push_back({u(rng), u(rng)});
  const int reps = 5;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(2), dist = Eigen::VectorXd::Zero(2);
  for (int r = 0; r < reps; ++r) {
    SimConfig cfg;
    cfg.seed = derive_seed(905, static_cast<std::uint64_t>(r));
    cfg.theta = theta;
    auto sample = simulate_field(cfg, locs);
    auto ev = empirical_variogram(sample, sample.values.mean(),
                                  {isotropic_lag(0.4, 0.1), isotropic_lag(0.8, 0.1)});
    REQUIRE(ev.entries.size() == 2);
    for (int k = 0; k < 2; ++k) {
      acc(k) += ev.entries[static_cast<std::size_t>(k)].estimate;
      dist(k) = ev.entries[static_cast<std::size_t>(k)].mean_distance;
    }
  }
  for (int k = 0; k < 2; ++k) {
    const double model = 2.0 * (theta.sill - cov(theta, dist(k)));
    CHECK(std::fabs(acc(k) / reps - model) / model < 0.10);
  }
}

TEST_CASE("errors and dropped bins", "[empvario]") {
  FieldSample s{{{0, 0}, {1, 0}}, Eigen::VectorXd::Zero(2)};
  CHECK_THROWS_AS(empirical_variogram(s, 0.0, {isotropic_lag(5.0, 0.1)}), numerical_error);
  FieldSample one{{{0, 0}}, Eigen::VectorXd::Zero(1)};
  CHECK_THROWS_AS(empirical_variogram(one, 0.0, {isotropic_lag(1.0, 0.1)}), invalid_input);
  // min_pairs drops the sparse bin but keeps the rich one
  auto locs = make_lattice(4, 1.0);
  FieldSample grid{locs, Eigen::VectorXd::Ones(16)};
  auto ev = empirical_variogram(grid, 1.0,
                                {isotropic_lag(1.0, 0.05), isotropic_lag(3.0 * std::sqrt(2.0) - 0.01, 0.02)},
                                5);
  CHECK(ev.entries.size() == 1);
}

TEST_CASE("cross statistics: zero outcome and aligned identity", "[empvario]") {
  auto locs = make_lattice(4, 1.0);
  SimConfig cfg;
  cfg.seed = 12;
  cfg.theta = CovParams{CovKind::exponential, 1.0, 1.0, 0.5, 0.0};
  auto r = simulate_field(cfg, locs);

  FieldSample y{locs, Eigen::VectorXd::Zero(16)};
  auto prod = empirical_cross_covariogram(r, y, Eigen::VectorXd::Constant(16, r.values.mean()),
                                          Eigen::VectorXd::Zero(16), {isotropic_lag(1.0, 0.1)},
                                          CrossFlavor::centered_product);
  for (const auto& e : prod.entries) CHECK(e.estimate == 0.0);

  // Aligned noiseless y = r: the squared-difference cross statistic matches
  // the self variogram at the same lag (same pair set up to orientation).
  auto self = empirical_variogram(r, r.values.mean(), {isotropic_lag(1.0, 0.1)});
  const FieldSample y_copy = r;  // distinct object: station-to-outcome pairs
  auto cross = empirical_cross_covariogram(
      r, y_copy, Eigen::VectorXd::Constant(16, r.values.mean()),
      Eigen::VectorXd::Constant(16, r.values.mean()), {isotropic_lag(1.0, 0.1)},
      CrossFlavor::squared_difference);
  CHECK(cross.entries[0].estimate == Catch::Approx(self.entries[0].estimate).margin(1e-12));
  CHECK(cross.entries[0].count == 2 * self.entries[0].count);
}

TEST_CASE("centered product is near zero when beta is zero", "[empvario]") {
  std::vector<Location> stations, outcomes;
  auto lattice = make_lattice(12, 1.0);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      (((i + j) % 2) == 0 ? stations : outcomes).push_back(lattice[static_cast<std::size_t>(i * 12 + j)]);
  const int reps = 200;
  double sum = 0.0, sumsq = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    SimConfig cfg;
    cfg.seed = derive_seed(99, static_cast<std::uint64_t>(rep));
    cfg.theta = CovParams{CovKind::exponential, 1.0, 1.2, 0.5, 0.0};
    cfg.reg.beta = Eigen::VectorXd::Zero(1);
    cfg.reg.gamma = Eigen::VectorXd::Constant(1, 0.7);
    cfg.errors = ErrorModel::iid(0.09);
    auto sm = simulate_misaligned(cfg, outcomes, stations);
    FieldSample r = sm.data.stations();
    FieldSample y{sm.data.outcome_locs, sm.data.y};
    auto ev = empirical_cross_covariogram(
        r, y, Eigen::VectorXd::Constant(r.values.size(), r.values.mean()),
        Eigen::VectorXd::Constant(y.values.size(), y.values.mean()), {isotropic_lag(1.0, 0.05)},
        CrossFlavor::centered_product);
    sum += ev.entries[0].estimate;
    sumsq += ev.entries[0].estimate * ev.entries[0].estimate;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq - reps * mean * mean) / (reps - 1)) / std::sqrt(double(reps));
  CHECK(std::fabs(mean) < 3.0 * se + 1e-6);
}

TEST_CASE("estimator invariant to a common constant shift", "[empvario]") {
  auto locs = make_lattice(5, 1.0);
  SimConfig cfg;
  cfg.seed = 21;
  cfg.theta = CovParams{CovKind::exponential, 1.0, 1.0, 0.5, 0.0};
  auto s = simulate_field(cfg, locs);
  auto base = empirical_variogram(s, 0.7, {isotropic_lag(1.0, 0.1)});
  FieldSample shifted = s;
  shifted.values.array() += 100.0;
  auto moved = empirical_variogram(shifted, 100.7, {isotropic_lag(1.0, 0.1)});
  CHECK(moved.entries[0].estimate == Catch::Approx(base.entries[0].estimate).margin(1e-9));
}

TEST_CASE("merging bins gives the count-weighted average", "[empvario]") {
  SimConfig cfg;
  cfg.seed = 33;
  cfg.theta = CovParams{CovKind::exponential, 1.0, 1.5, 0.5, 0.0};
  Rng rng = make_rng(4);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  std::vector<Location> locs;
  for (int i = 0; i < 120; ++i) locs.push_back({u(rng), u(rng)});
  auto s = simulate_field(cfg, locs);
  // Two touching half-open style bins versus one wide bin over their union.
  auto narrow = empirical_variogram(s, s.values.mean(),
                                    {isotropic_lag(0.75, 0.2499999), isotropic_lag(1.25, 0.25)});
  auto wide = empirical_variogram(s, s.values.mean(), {isotropic_lag(1.0, 0.5)});
  const auto& a = narrow.entries[0];
  const auto& b = narrow.entries[1];
  const double merged =
      (a.estimate * a.count + b.estimate * b.count) / static_cast<double>(a.count + b.count);
  CHECK(a.count + b.count == wide.entries[0].count);
  CHECK(merged == Catch::Approx(wide.entries[0].estimate).epsilon(1e-10));
}

TEST_CASE("lattice bin estimator is unbiased across replications", "[empvario]") {
  // On exact lattice bins the squared-difference estimator has no binning
  // bias; the mean over replications stays within Monte Carlo noise.
  auto locs = make_lattice(8, 1.0);
  const CovParams theta{CovKind::exponential, 1.0, 1.5, 0.5, 0.0};
  const double target = variogram(theta, 1.0);
  const int reps = 500;
  double sum = 0.0, sumsq = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    SimConfig cfg;
    cfg.seed = derive_seed(1234, static_cast<std::uint64_t>(rep));
    cfg.theta = theta;
    auto s = simulate_field(cfg, locs);
    auto ev = empirical_variogram(s, 0.0, {isotropic_lag(1.0, 1e-9)});
    sum += ev.entries[0].estimate;
    sumsq += ev.entries[0].estimate * ev.entries[0].estimate;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq - reps * mean * mean) / (reps - 1)) / std::sqrt(double(reps));
  CHECK(std::fabs(mean - target) < 3.0 * se);
}
