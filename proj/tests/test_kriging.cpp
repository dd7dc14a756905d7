#include <catch2/catch_amalgamated.hpp>

#include "misreg/fieldsim.hpp"
#include "misreg/kriging.hpp"

using namespace misreg;

namespace {
std::ostream* quiet_logs() {
  misreg::log_stream() = nullptr;
  return nullptr;
}
const auto quiet = quiet_logs();

FieldSample random_stations(int m, double side, std::uint64_t seed, const CovParams& theta) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, side);
  std::vector<Location> locs;
  for (int i = 0; i < m; ++i) locs.push_back({u(rng), u(rng)});
  SimConfig cfg;
  cfg.seed = derive_seed(seed, 1);
  cfg.theta = theta;
  return simulate_field(cfg, locs);
}
}  // namespace

TEST_CASE("blp interpolates exactly and reverts to the mean far away", "[kriging]") {
  const CovParams theta{CovKind::exponential, 1.3, 1.1, 0.5, 0.0};
  auto stations = random_stations(40, 8.0, 3, theta);
  const MeanModel mean = MeanModel::constant(0.7);

  auto at_stations = blp(theta, mean, stations, stations.locations);
  for (Eigen::Index i = 0; i < stations.values.size(); ++i) {
    CHECK(std::fabs(at_stations.values(i) - stations.values(i)) < 1e-8);
    CHECK(at_stations.variances(i) < 1e-8);
  }

  auto far = blp(theta, mean, stations, {Location{1e6 * theta.range, 0.0}});
  CHECK(std::fabs(far.values(0) - 0.7) < 1e-8);
  CHECK(far.variances(0) == Catch::Approx(theta.sill));
}

TEST_CASE("single-station prediction matches the scalar formula", "[kriging]") {
  const CovParams theta{CovKind::exponential, 2.0, 1.5, 0.5, 0.0};
  FieldSample one{{{0, 0}}, Eigen::VectorXd::Constant(1, 3.4)};
  const double m = 1.0;
  Location target{2.0, 0.0};
  auto pred = blp(theta, MeanModel::constant(m), one, {target});
  const double k = cov(theta, 2.0);
  const double kstar = cov(theta, 0.0);
  CHECK(pred.values(0) == Catch::Approx(m + (k / kstar) * (3.4 - m)).epsilon(1e-12));
}

TEST_CASE("blup under white noise predicts the sample mean far away", "[kriging]") {
  // Near-zero range: correlations vanish and GLS under the identity is OLS,
  // so the far prediction is the station average.
  const CovParams white{CovKind::exponential, 1.0, 1e-9, 0.5, 0.0};
  FieldSample s{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}, Eigen::VectorXd(4)};
  s.values << 1.0, 2.0, 3.0, 6.0;
  auto pred = blup(white, MeanBasis::constant(), s, {Location{50.0, 50.0}});
  CHECK(pred.values(0) == Catch::Approx(3.0).epsilon(1e-9));

  auto at_station = blup(white, MeanBasis::constant(), s, {Location{1.0, 1.0}});
  CHECK(at_station.values(0) == Catch::Approx(6.0).margin(1e-7));
}

TEST_CASE("blup prediction error is centered at held-out sites", "[kriging][slow]") {
  const CovParams theta{CovKind::exponential, 1.0, 2.0, 0.5, 0.0};
  Rng rng = make_rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<Location> locs;
  for (int i = 0; i < 41; ++i) locs.push_back({u(rng), u(rng)});
  const Location held_out = locs.back();
  std::vector<Location> obs_locs(locs.begin(), locs.end() - 1);
  const int reps = 500;
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    SimConfig cfg;
    cfg.seed = derive_seed(9000, static_cast<std::uint64_t>(r));
    cfg.theta = theta;
    cfg.mean = MeanModel::constant(1.5);
    auto field = simulate_field(cfg, locs);
    FieldSample obs{obs_locs, field.values.head(40)};
    auto pred = blup(theta, MeanBasis::constant(), obs, {held_out});
    const double err = pred.values(0) - field.values(40);
    sum += err;
    sumsq += err * err;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq - reps * mean * mean) / (reps - 1) / reps);
  CHECK(std::fabs(mean) < 3.0 * se);
}

TEST_CASE("eblup equals blup when the fit carries the true parameters", "[kriging]") {
  const CovParams theta{CovKind::exponential, 1.0, 1.4, 0.5, 0.0};
  auto stations = random_stations(30, 6.0, 21, theta);
  std::vector<Location> targets{{1.2, 3.3}, {4.0, 0.5}};
  FitResult injected;
  injected.theta = theta;
  injected.converged = true;
  injected.mean.basis = MeanBasis::constant();
  injected.mean.rho = gls_mean(theta, stations, MeanBasis::constant());
  auto a = eblup(injected, stations, targets);
  auto b = blup(theta, MeanBasis::constant(), stations, targets);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("degenerate sill with a fixed nugget collapses to the mean", "[kriging]") {
  CovParams theta{CovKind::exponential, 1e-12, 1.0, 0.5, 1e-6};
  FieldSample s{{{0, 0}, {2, 0}, {0, 2}}, Eigen::VectorXd(3)};
  s.values << 4.0, 5.0, 6.0;
  MeanModel mean = MeanModel::constant(5.0);
  auto pred = blp(theta, mean, s, {Location{1.0, 1.0}, Location{5.0, 5.0}});
  CHECK(pred.values(0) == Catch::Approx(5.0).margin(1e-5));
  CHECK(pred.values(1) == Catch::Approx(5.0).margin(1e-5));
}

TEST_CASE("linearity in the data", "[kriging]") {
  const CovParams theta{CovKind::exponential, 1.0, 1.0, 0.5, 0.0};
  auto stations = random_stations(25, 5.0, 13, theta);
  std::vector<Location> targets{{2.5, 2.5}, {0.3, 4.1}};
  auto base = blup(theta, MeanBasis::constant(), stations, targets);
  FieldSample scaled = stations;
  scaled.values = 2.5 * stations.values + Eigen::VectorXd::Constant(25, -1.0);
  auto moved = blup(theta, MeanBasis::constant(), scaled, targets);
  for (Eigen::Index i = 0; i < 2; ++i)
    CHECK(moved.values(i) == Catch::Approx(2.5 * base.values(i) - 1.0).epsilon(1e-10));
}

TEST_CASE("kriging variance grows along a ray from the stations", "[kriging]") {
  const CovParams theta{CovKind::exponential, 1.0, 1.5, 0.5, 0.0};
  auto stations = random_stations(20, 4.0, 31, theta);
  std::vector<Location> ray;
  for (int k = 0; k < 8; ++k) ray.push_back({4.0 + 1.5 * k, 4.0 + 1.5 * k});
  auto pred = blp(theta, MeanModel::constant(0.0), stations, ray);
  for (int k = 1; k < 8; ++k) CHECK(pred.variances(k) >= pred.variances(k - 1) - 1e-12);
}

TEST_CASE("duplicate stations are averaged before solving", "[kriging]") {
  const CovParams theta{CovKind::exponential, 1.0, 1.0, 0.5, 0.0};
  FieldSample dup{{{0, 0}, {0, 0}, {1, 0}}, Eigen::VectorXd(3)};
  dup.values << 1.0, 3.0, 0.5;
  auto averaged = average_duplicate_stations(dup);
  REQUIRE(averaged.values.size() == 2);
  CHECK(averaged.values(0) == Catch::Approx(2.0));
  auto pred = blp(theta, MeanModel::constant(0.0), dup, {Location{0.0, 0.0}});
  CHECK(pred.values(0) == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("leave-one-out residuals are finite and centered-ish", "[kriging]") {
  const CovParams theta{CovKind::exponential, 1.0, 2.0, 0.5, 0.0};
  auto stations = random_stations(35, 7.0, 55, theta);
  Eigen::VectorXd res = loo_residuals(theta, MeanBasis::constant(), stations);
  REQUIRE(res.size() == 35);
  CHECK(res.allFinite());
  CHECK(std::fabs(res.mean()) < 1.0);
}
