#include <catch2/catch_amalgamated.hpp>

#include <atomic>

#include "misreg/covfit.hpp"
#include "misreg/fieldsim.hpp"

using namespace misreg;

namespace {
std::ostream* quiet_logs() {
  misreg::log_stream() = nullptr;
  return nullptr;
}
const auto quiet = quiet_logs();

std::vector<Location> uniform_locations(int n, double side, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, side);
  std::vector<Location> locs;
  locs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) locs.push_back({u(rng), u(rng)});
  return locs;
}
}  // namespace

TEST_CASE("ml recovers theta within 25% in at least 90% of replications", "[covfit][slow]") {
  const CovParams truth{CovKind::exponential, 1.0, 1.0, 0.5, 0.0};
  const auto locs = uniform_locations(500, 25.0, 42);
  const int reps = 200;
  std::atomic<int> within{0};
  parallel_for(reps, [&](std::size_t r) {
    SimConfig cfg;
    cfg.seed = derive_seed(1000, r);
    cfg.theta = truth;
    auto sample = simulate_field(cfg, locs);
    FitResult fit = fit_ml(sample, CovParams{CovKind::exponential, 1, 1, 0.5, 0.0});
    if (std::fabs(fit.theta.sill - 1.0) < 0.25 && std::fabs(fit.theta.range - 1.0) < 0.25)
      ++within;
  });
  CHECK(within.load() >= 180);
}

TEST_CASE("fitted optimum beats the truth gridpoint and iid data yields a small range",
          "[covfit]") {
  // iid data: every value independent, so the fitted range should be small
  // and the profile likelihood at the optimum at least as high as at any
  // grid alternative (optimality on the search grid).
  auto locs = uniform_locations(120, 10.0, 7);
  Rng rng = make_rng(99);
  FieldSample s{locs, draw_standard_normal(rng, 120)};
  FitResult fit = fit_ml(s, CovParams{CovKind::exponential, 1, 1, 0.5, 0.0});
  CHECK(fit.theta.range < 0.5);

  const Eigen::MatrixXd dists = detail::distance_matrix(locs);
  const Eigen::MatrixXd design = MeanBasis::constant().design(locs);
  const double at_hat = detail::neg_loglik(fit.theta, dists, design, s.values, FitMethod::ml);
  for (double sill : {0.5, 1.0, 2.0})
    for (double range : {0.05, 0.5, 2.0}) {
      CovParams p{CovKind::exponential, sill, range, 0.5, 0.0};
      CHECK(at_hat <= detail::neg_loglik(p, dists, design, s.values, FitMethod::ml) + 1e-9);
    }
}

TEST_CASE("two-station likelihood matches the closed form", "[covfit]") {
  const Eigen::MatrixXd dists = (Eigen::MatrixXd(2, 2) << 0.0, 1.0, 1.0, 0.0).finished();
  std::vector<Location> locs{{0, 0}, {1, 0}};
  const Eigen::MatrixXd design = Eigen::MatrixXd::Ones(2, 1);
  Eigen::VectorXd r(2);
  r << 0.4, -1.1;
  for (double sill : {0.5, 1.0, 2.0})
    for (double range : {0.3, 1.0, 3.0}) {
      CovParams p{CovKind::exponential, sill, range, 0.5, 0.0};
      // Direct 2x2 evaluation: K = sill [[1, c], [c, 1]], GLS mean, quadratic.
      const double c = std::exp(-1.0 / range);
      Eigen::Matrix2d k;
      k << sill, sill * c, sill * c, sill;
      const Eigen::Matrix2d kinv = k.inverse();
      const double mhat = (kinv.sum() > 0 ? (kinv * r).sum() / kinv.sum() : 0.0);
      Eigen::Vector2d e = r - Eigen::Vector2d::Constant(mhat);
      const double direct =
          0.5 * (std::log(k.determinant()) + e.dot(kinv * e) + 2.0 * std::log(2.0 * M_PI));
      CHECK(detail::neg_loglik(p, dists, design, r, FitMethod::ml) ==
            Catch::Approx(direct).epsilon(1e-10));
    }
}

TEST_CASE("gls mean under white noise equals ols and the scalar formula", "[covfit]") {
  auto locs = uniform_locations(60, 10.0, 5);
  Rng rng = make_rng(6);
  FieldSample s{locs, draw_standard_normal(rng, 60)};
  // Near-zero range: K is (numerically) a multiple of the identity.
  CovParams white{CovKind::exponential, 2.0, 1e-9, 0.5, 0.0};
  const MeanBasis planar = MeanBasis::planar();
  Eigen::VectorXd gls = gls_mean(white, s, planar);
  Eigen::MatrixXd design = planar.design(locs);
  Eigen::VectorXd ols = (design.transpose() * design).ldlt().solve(design.transpose() * s.values);
  CHECK((gls - ols).cwiseAbs().maxCoeff() < 1e-8);

  // Constant basis: rho = (1' K^-1 r) / (1' K^-1 1).
  CovParams smooth{CovKind::exponential, 1.0, 2.0, 0.5, 0.0};
  Eigen::MatrixXd k = cov_matrix(smooth, locs);
  Eigen::MatrixXd kinv = k.inverse();
  const double direct = (kinv * s.values).sum() / kinv.sum();
  CHECK(gls_mean(smooth, s, MeanBasis::constant())(0) == Catch::Approx(direct).epsilon(1e-8));
}

TEST_CASE("reml and ml agree qualitatively; reml sill bias is smaller", "[covfit][slow]") {
  // Strong correlation relative to the domain makes the mean-estimation
  // bias of the ML sill visible; REML removes most of it.
  const CovParams truth{CovKind::exponential, 1.0, 3.0, 0.5, 0.0};
  const auto locs = uniform_locations(90, 8.0, 11);
  const int reps = 300;
  std::vector<double> ml_sill(reps), reml_sill(reps);
  parallel_for(reps, [&](std::size_t rep) {
    SimConfig cfg;
    cfg.seed = derive_seed(31337, rep);
    cfg.theta = truth;
    cfg.mean = MeanModel::constant(2.0);
    auto sample = simulate_field(cfg, locs);
    const CovParams proto{CovKind::exponential, 1, 1, 0.5, 0.0};
    ml_sill[rep] = fit_ml(sample, proto, MeanBasis::planar()).theta.sill;
    reml_sill[rep] = fit_reml(sample, proto, MeanBasis::planar()).theta.sill;
  });
  const double ml_mean = std::accumulate(ml_sill.begin(), ml_sill.end(), 0.0) / reps;
  const double reml_mean = std::accumulate(reml_sill.begin(), reml_sill.end(), 0.0) / reps;
  // Directional check only: ML shrinks the sill more than REML does.
  CHECK(ml_mean < reml_mean);
  CHECK(std::fabs(reml_mean - 1.0) < std::fabs(ml_mean - 1.0));
}

TEST_CASE("reml objective is invariant to mean-basis shifts", "[covfit]") {
  auto locs = uniform_locations(50, 6.0, 3);
  SimConfig cfg;
  cfg.seed = 8;
  cfg.theta = CovParams{CovKind::exponential, 1.0, 1.5, 0.5, 0.0};
  auto s = simulate_field(cfg, locs);
  const MeanBasis planar = MeanBasis::planar();
  const Eigen::MatrixXd design = planar.design(locs);
  const Eigen::MatrixXd dists = detail::distance_matrix(locs);
  Eigen::VectorXd a(3);
  a << 4.0, -1.0, 2.5;
  FieldSample shifted{locs, s.values + design * a};
  for (double sill : {0.5, 1.5})
    for (double range : {0.8, 2.0}) {
      CovParams p{CovKind::exponential, sill, range, 0.5, 0.0};
      const double base = detail::neg_loglik(p, dists, design, s.values, FitMethod::reml);
      const double moved = detail::neg_loglik(p, dists, design, shifted.values, FitMethod::reml);
      CHECK(base == Catch::Approx(moved).margin(1e-8));
    }
}

TEST_CASE("scale equivariance of the ml fit", "[covfit]") {
  auto locs = uniform_locations(80, 12.0, 17);
  SimConfig cfg;
  cfg.seed = 29;
  cfg.theta = CovParams{CovKind::exponential, 1.0, 1.5, 0.5, 0.0};
  auto s = simulate_field(cfg, locs);
  const CovParams proto{CovKind::exponential, 1, 1, 0.5, 0.0};
  FitResult base = fit_ml(s, proto);
  FieldSample scaled{locs, 3.0 * s.values};
  FitResult big = fit_ml(scaled, proto);
  CHECK(big.theta.sill == Catch::Approx(9.0 * base.theta.sill).epsilon(1e-5));
  CHECK(big.theta.range == Catch::Approx(base.theta.range).epsilon(1e-5));
}

TEST_CASE("gradient criterion holds at the reported optimum", "[covfit]") {
  auto locs = uniform_locations(100, 15.0, 23);
  SimConfig cfg;
  cfg.seed = 77;
  cfg.theta = CovParams{CovKind::exponential, 2.0, 2.0, 0.5, 0.0};
  auto s = simulate_field(cfg, locs);
  FitResult fit = fit_ml(s, CovParams{CovKind::exponential, 1, 1, 0.5, 0.0});
  REQUIRE(fit.converged);
  CHECK(fit.gradient_norm < 1e-4 * std::fabs(fit.loglik));
  CHECK(fit.vcov_theta.rows() == 2);
  CHECK(fit.vcov_theta(0, 0) >= 0.0);
  CHECK(fit.vcov_theta(0, 1) == Catch::Approx(fit.vcov_theta(1, 0)));
}

TEST_CASE("fit preconditions and failure paths", "[covfit]") {
  FieldSample tiny{{{0, 0}, {1, 0}, {2, 0}}, Eigen::VectorXd::Zero(3)};
  CHECK_THROWS_AS(fit_ml(tiny, CovParams{}), invalid_input);

  auto locs = uniform_locations(30, 5.0, 2);
  SimConfig cfg;
  cfg.seed = 4;
  cfg.theta = CovParams{};
  auto s = simulate_field(cfg, locs);
  // Collinear basis: duplicate the constant column.
  MeanBasis bad;
  bad.dim = 2;
  bad.eval = [](const Location&) { return Eigen::VectorXd::Ones(2); };
  CHECK_THROWS_AS(fit_reml(s, CovParams{}, bad), invalid_input);

  FitOptions opts;
  opts.max_iter = 1;
  FitResult fit = fit_ml(s, CovParams{}, MeanBasis::constant(), opts);
  CHECK_FALSE(fit.converged);
}
