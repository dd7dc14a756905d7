#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "misreg/geometry.hpp"

using namespace misreg;

TEST_CASE("distance basics", "[geometry]") {
  CHECK(distance({0, 0}, {0, 0}) == 0.0);
  CHECK(distance({0, 0}, {3, 4}) == Catch::Approx(5.0));
  CHECK(distance({1, 1}, {4, 5}) == Catch::Approx(5.0));
}

TEST_CASE("distance is a metric on random triples", "[geometry]") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int rep = 0; rep < 500; ++rep) {
    Location a{u(rng), u(rng)}, b{u(rng), u(rng)}, c{u(rng), u(rng)};
    CHECK(distance(a, b) == Catch::Approx(distance(b, a)));
    CHECK(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12);
    CHECK(distance(a, b) >= 0.0);
  }
}

TEST_CASE("bin_pairs simple cases", "[geometry]") {
  std::vector<Location> two{{0, 0}, {1, 0}};
  auto one_pair = bin_pairs(two, {isotropic_lag(1.0, 0.1)});
  REQUIRE(one_pair.size() == 1);
  CHECK(one_pair[0].count == 1);

  auto empty_bin = bin_pairs(two, {isotropic_lag(3.0, 0.1)});
  CHECK(empty_bin[0].count == 0);
  CHECK(empty_bin[0].pairs.empty());

  std::vector<Location> none;
  CHECK_THROWS_AS(bin_pairs(none, {isotropic_lag(1.0, 0.1)}), invalid_input);
}

TEST_CASE("3x3 unit lattice has 12 unordered unit-distance pairs", "[geometry]") {
  auto locs = make_lattice(3, 1.0);
  auto bins = bin_pairs(locs, {isotropic_lag(1.0, 0.01)});
  CHECK(bins[0].count == 12);
}

TEST_CASE("bin_pairs counts match brute force on random sets", "[geometry]") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<Location> locs;
  for (int i = 0; i < 150; ++i) locs.push_back({u(rng), u(rng)});
  std::vector<LagSpec> lags{isotropic_lag(1.0, 0.5), isotropic_lag(3.0, 0.5),
                            directional_lag(2.0, 0.8, 0.4, 0.3)};
  auto bins = bin_pairs(locs, lags);
  for (std::size_t k = 0; k < lags.size(); ++k) {
    std::size_t brute = 0;
    for (std::size_t i = 0; i < locs.size(); ++i) {
      for (std::size_t j = i + 1; j < locs.size(); ++j) {
        const double d = distance(locs[i], locs[j]);
        if (std::fabs(d - lags[k].r) > lags[k].r_tol) continue;
        if (lags[k].mode == LagMode::directional) {
          double ang = std::atan2(locs[j].y - locs[i].y, locs[j].x - locs[i].x);
          if (ang < 0) ang += M_PI;
          if (ang >= M_PI) ang -= M_PI;
          double diff = std::fabs(ang - lags[k].angle);
          diff = std::min(diff, M_PI - diff);
          if (diff > lags[k].angle_tol) continue;
        }
        ++brute;
      }
    }
    CHECK(bins[k].count == brute);
    // no pair violates its own bin tolerance
    for (auto [i, j] : bins[k].pairs) {
      const double d = distance(locs[static_cast<std::size_t>(i)], locs[static_cast<std::size_t>(j)]);
      CHECK(std::fabs(d - lags[k].r) <= lags[k].r_tol);
    }
  }
}

TEST_CASE("cross binning keeps ordered pairs and self binning excludes i==j", "[geometry]") {
  std::vector<Location> a{{0, 0}, {2, 0}};
  std::vector<Location> b{{1, 0}, {0, 0}};
  auto cross = bin_pairs(a, b, {isotropic_lag(1.0, 0.05)});
  // (a0,b0), (a1,b0) qualify; (a0,b1) at distance 0 and (a1,b1) at 2 do not.
  CHECK(cross[0].count == 2);
  auto self = bin_pairs(a, a, {isotropic_lag(0.0, 0.05)});
  CHECK(self[0].count == 0);
}

TEST_CASE("make_lattice", "[geometry]") {
  CHECK(make_lattice(1, 1.0).size() == 1);
  auto four = make_lattice(2, 1.0);
  REQUIRE(four.size() == 4);
  double maxd = 0;
  for (auto& p : four)
    for (auto& q : four) maxd = std::max(maxd, distance(p, q));
  CHECK(maxd == Catch::Approx(std::sqrt(2.0)));

  auto big = make_lattice(15, 1.0);
  CHECK(big.size() == 225);
  maxd = 0;
  for (auto& p : big)
    for (auto& q : big) maxd = std::max(maxd, distance(p, q));
  CHECK(maxd == Catch::Approx(14.0 * std::sqrt(2.0)));

  CHECK_THROWS_AS(make_lattice(0, 1.0), invalid_input);
  CHECK_THROWS_AS(make_lattice(3, 0.0), invalid_input);
}

TEST_CASE("default lag grid spans the 5th to 60th percentile", "[geometry]") {
  auto locs = make_lattice(10, 1.0);
  auto lags = default_lags(locs);
  REQUIRE(lags.size() == 8);
  std::vector<double> d;
  for (std::size_t i = 0; i < locs.size(); ++i)
    for (std::size_t j = i + 1; j < locs.size(); ++j) d.push_back(distance(locs[i], locs[j]));
  const double lo = quantile(d, 0.05), hi = quantile(d, 0.60);
  CHECK(lags.front().r == Catch::Approx(lo));
  CHECK(lags.back().r == Catch::Approx(hi));
  const double step = (hi - lo) / 7.0;
  for (auto& lag : lags) CHECK(lag.r_tol == Catch::Approx(step / 2.0));
}

TEST_CASE("lag validation", "[geometry]") {
  CHECK_THROWS_AS(isotropic_lag(-1.0, 0.1), invalid_input);
  CHECK_THROWS_AS(isotropic_lag(1.0, 0.0), invalid_input);
  CHECK_THROWS_AS(directional_lag(1.0, 0.1, 3.5, 0.1), invalid_input);
  CHECK_THROWS_AS(directional_lag(1.0, 0.1, 0.4, 0.0), invalid_input);
}
