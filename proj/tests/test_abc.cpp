#include <catch2/catch_amalgamated.hpp>

#include "misreg/abc.hpp"
#include "misreg/fieldsim.hpp"

using namespace misreg;

namespace {
std::ostream* quiet_logs() {
  misreg::log_stream() = nullptr;
  return nullptr;
}
const auto quiet = quiet_logs();

std::vector<MomentSpec> specs_for_abc() {
  std::vector<MomentSpec> specs;
  for (double r : {0.8, 1.4}) {
    MomentSpec s;
    s.lag = isotropic_lag(r, 0.2);
    s.kind = MomentKind::cross;
    s.flavor = CrossFlavor::centered_product;
    specs.push_back(s);
  }
  for (double r : {0.7, 1.2, 2.0}) {
    MomentSpec s;
    s.lag = isotropic_lag(r, 0.2);
    s.kind = MomentKind::self_variogram;
    specs.push_back(s);
  }
  return specs;
}

// A moment problem with a slightly perturbed empirical vector so the optimum
// has a strictly positive objective.
MomentBuilder noisy_builder(const Phi& phi0, std::uint64_t seed) {
  auto specs = specs_for_abc();
  MomentBuilder clean =
      MomentBuilder::from_specs(specs, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(specs.size())));
  Eigen::VectorXd emp = clean.model(phi0);
  Rng rng = make_rng(seed);
  emp += 0.02 * draw_standard_normal(rng, emp.size());
  return MomentBuilder::from_specs(specs, emp);
}

GaussianProposal proposal_around(const Phi& phi, double spread) {
  Eigen::VectorXd mean = GaussianProposal::transform(phi);
  Eigen::MatrixXd cov = spread * spread * Eigen::MatrixXd::Identity(3, 3);
  return GaussianProposal::from_moments(mean, cov);
}
}  // namespace

TEST_CASE("xi zero with a point proposal keeps the chain at phi-hat", "[abc]") {
  Phi phi0{0.8, CovParams{CovKind::exponential, 1.1, 1.3, 0.5, 0.0}};
  MomentBuilder b = noisy_builder(phi0, 2);
  WeightMatrix w = WeightMatrix::identity(b.size());
  MdResult md = estimate(b, w, phi0);
  AbcConfig cfg;
  cfg.xi = 0.0;
  cfg.chain_length = 200;
  cfg.seed = 4;
  cfg.proposal = proposal_around(md.phi, 0.0);  // degenerate: point mass at phi-hat
  AbcChain chain = run_abc(b, w, md.phi, cfg);
  CHECK(chain.acceptance_rate == 1.0);
  for (int s = 0; s < 200; ++s) {
    CHECK(chain.draws(s, 0) == md.phi.beta);
    CHECK(chain.draws(s, 1) == md.phi.theta.sill);
  }
}

TEST_CASE("retained draws satisfy the band and rejections repeat the state", "[abc]") {
  Phi phi0{0.8, CovParams{CovKind::exponential, 1.1, 1.3, 0.5, 0.0}};
  MomentBuilder b = noisy_builder(phi0, 3);
  WeightMatrix w = WeightMatrix::identity(b.size());
  MdResult md = estimate(b, w, phi0);
  AbcConfig cfg;
  cfg.xi = 0.5;
  cfg.chain_length = 400;
  cfg.seed = 11;
  cfg.proposal = proposal_around(md.phi, 0.25);
  AbcChain chain = run_abc(b, w, md.phi, cfg);
  const double band = (1.0 + cfg.xi) * chain.l_hat;
  for (int s = 0; s < 400; ++s) {
    Phi phi;
    phi.beta = chain.draws(s, 0);
    phi.theta = phi0.theta;
    phi.theta.sill = chain.draws(s, 1);
    phi.theta.range = chain.draws(s, 2);
    CHECK(b.objective(phi, w.m) <= band * (1.0 + 1e-12));
    if (s > 0 && !chain.accepted[static_cast<std::size_t>(s)]) {
      CHECK(chain.draws(s, 0) == chain.draws(s - 1, 0));
      CHECK(chain.draws(s, 1) == chain.draws(s - 1, 1));
      CHECK(chain.draws(s, 2) == chain.draws(s - 1, 2));
    }
  }
  CHECK(chain.acceptance_rate > 0.0);
  CHECK(chain.acceptance_rate ==
        Catch::Approx(std::accumulate(chain.accepted.begin(), chain.accepted.end(), 0.0) / 400.0));
}

TEST_CASE("chains are deterministic in the seed", "[abc]") {
  Phi phi0{0.5, CovParams{CovKind::exponential, 1.0, 1.0, 0.5, 0.0}};
  MomentBuilder b = noisy_builder(phi0, 5);
  WeightMatrix w = WeightMatrix::identity(b.size());
  MdResult md = estimate(b, w, phi0);
  AbcConfig cfg;
  cfg.xi = 0.3;
  cfg.chain_length = 300;
  cfg.seed = 21;
  cfg.proposal = proposal_around(md.phi, 0.2);
  AbcChain c1 = run_abc(b, w, md.phi, cfg);
  AbcChain c2 = run_abc(b, w, md.phi, cfg);
  CHECK((c1.draws - c2.draws).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c1.acceptance_rate == c2.acceptance_rate);
}

TEST_CASE("acceptance rate weakly increases with xi on the same stream", "[abc]") {
  Phi phi0{0.5, CovParams{CovKind::exponential, 1.0, 1.0, 0.5, 0.0}};
  MomentBuilder b = noisy_builder(phi0, 8);
  WeightMatrix w = WeightMatrix::identity(b.size());
  MdResult md = estimate(b, w, phi0);
  double prev_rate = -1.0;
  for (double xi : {0.05, 0.2, 0.8, 2.0}) {
    AbcConfig cfg;
    cfg.xi = xi;
    cfg.chain_length = 600;
    cfg.seed = 33;
    cfg.proposal = proposal_around(md.phi, 0.2);
    AbcChain chain = run_abc(b, w, md.phi, cfg);
    CHECK(chain.acceptance_rate >= prev_rate - 0.02);
    prev_rate = chain.acceptance_rate;
  }
}

TEST_CASE("huge xi reduces the sampler to the proposal", "[abc]") {
  Phi phi0{0.4, CovParams{CovKind::exponential, 1.0, 1.2, 0.5, 0.0}};
  MomentBuilder b = noisy_builder(phi0, 13);
  WeightMatrix w = WeightMatrix::identity(b.size());
  MdResult md = estimate(b, w, phi0);
  AbcConfig cfg;
  cfg.xi = 1e12;
  cfg.chain_length = 10000;
  cfg.seed = 3;
  cfg.proposal = proposal_around(md.phi, 0.15);
  AbcChain chain = run_abc(b, w, md.phi, cfg);
  // With the band inactive, retained draws should match the proposal's
  // moments in the transformed space.
  Eigen::VectorXd z_mean = Eigen::VectorXd::Zero(3);
  for (int s = 0; s < cfg.chain_length; ++s) {
    z_mean(0) += chain.draws(s, 0);
    z_mean(1) += std::log(chain.draws(s, 1));
    z_mean(2) += std::log(chain.draws(s, 2));
  }
  z_mean /= cfg.chain_length;
  Eigen::VectorXd target = GaussianProposal::transform(md.phi);
  // Correlated draws (rejections repeat states), so allow a generous margin
  // of a few proposal standard deviations over the root chain length.
  const double margin = 6.0 * 0.15 / std::sqrt(static_cast<double>(cfg.chain_length));
  for (int c = 0; c < 3; ++c) CHECK(std::fabs(z_mean(c) - target(c)) < margin * 10);
}

TEST_CASE("a mislocated tight proposal raises the no-acceptance error", "[abc]") {
  Phi phi0{0.5, CovParams{CovKind::exponential, 1.0, 1.0, 0.5, 0.0}};
  MomentBuilder b = noisy_builder(phi0, 17);
  WeightMatrix w = WeightMatrix::identity(b.size());
  MdResult md = estimate(b, w, phi0);
  Phi far{10.0, CovParams{CovKind::exponential, 40.0, 30.0, 0.5, 0.0}};
  AbcConfig cfg;
  cfg.xi = 0.0;
  cfg.chain_length = 50;
  cfg.seed = 2;
  cfg.proposal = proposal_around(far, 1e-4);
  CHECK_THROWS_AS(run_abc(b, w, md.phi, cfg), numerical_error);
}

TEST_CASE("proposal density ratios can exceed one and still accept", "[abc]") {
  // The acceptance rule multiplies the band indicator by q(prev)/q(prop),
  // uncapped: moves toward the proposal's low-density tail can always be
  // accepted when the band holds. Checked implicitly by a chain whose
  // acceptance rate exceeds what a capped-at-one ratio could produce on a
  // strongly skewed proposal; here simply confirm log densities behave.
  Phi a{0.0, CovParams{CovKind::exponential, 1.0, 1.0, 0.5, 0.0}};
  Phi bb{0.0, CovParams{CovKind::exponential, 2.0, 1.0, 0.5, 0.0}};
  GaussianProposal q = proposal_around(a, 0.3);
  CHECK(q.log_density(a) > q.log_density(bb));
  CHECK(std::isfinite(q.log_density(bb)));
}

TEST_CASE("bootstrap-fitted proposals transform draws correctly", "[abc]") {
  BootstrapDraws draws;
  draws.draws = 500;
  Rng rng = make_rng(7);
  draws.betas.resize(500, 1);
  draws.thetas.resize(500, 2);
  for (int j = 0; j < 500; ++j) {
    draws.betas(j, 0) = 0.9 + 0.1 * draw_standard_normal(rng, 1)(0);
    draws.thetas(j, 0) = std::exp(0.2 + 0.05 * draw_standard_normal(rng, 1)(0));
    draws.thetas(j, 1) = std::exp(-0.1 + 0.08 * draw_standard_normal(rng, 1)(0));
  }
  GaussianProposal q = GaussianProposal::from_bootstrap(draws);
  CHECK(q.mean(0) == Catch::Approx(0.9).margin(0.02));
  CHECK(q.mean(1) == Catch::Approx(0.2).margin(0.02));
  CHECK(q.mean(2) == Catch::Approx(-0.1).margin(0.02));
  Rng rng2 = make_rng(8);
  Phi draw = q.draw(rng2, CovParams{});
  CHECK(draw.theta.sill > 0.0);
  CHECK(draw.theta.range > 0.0);
}
