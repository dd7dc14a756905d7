#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/mindist.hpp"
#include "misreg/rng.hpp"
#include "misreg/twostep.hpp"

namespace misreg {

// Gaussian proposal over (beta, log sill, log range), fitted to the two-step
// bootstrap draws. Densities carry the Jacobian of the log transform so the
// acceptance ratio is evaluated in phi space. Degenerate directions (zero
// variance) are treated as point masses.
struct GaussianProposal {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(3, 3);
  Eigen::MatrixXd root = Eigen::MatrixXd::Zero(3, 3);      // cov^(1/2)
  Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(3, 3);  // pseudo-inverse

  static Eigen::Vector3d transform(const Phi& phi) {
    if (!(phi.theta.sill > 0.0) || !(phi.theta.range > 0.0))
      throw invalid_input("proposal transform: theta outside the domain");
    return Eigen::Vector3d(phi.beta, std::log(phi.theta.sill), std::log(phi.theta.range));
  }

  static GaussianProposal from_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    if (mean.size() != 3 || cov.rows() != 3 || cov.cols() != 3)
      throw invalid_input("proposal: expected 3-dimensional moments");
    GaussianProposal q;
    q.mean = mean;
    q.cov = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q.cov);
    Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);
    q.root = eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    Eigen::VectorXd inv = vals;
    const double cutoff = 1e-12 * std::max(vals.maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < 3; ++i) inv(i) = vals(i) > cutoff ? 1.0 / vals(i) : 0.0;
    q.precision = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
    return q;
  }

  // Fit to bootstrap output: betas paired with (sill, range) draws mapped to
  // the transformed space.
  static GaussianProposal from_bootstrap(const BootstrapDraws& draws) {
    if (draws.draws < 2) throw invalid_input("proposal: need at least two bootstrap draws");
    if (draws.betas.cols() != 1)
      throw invalid_input("proposal: interacted-beta bootstrap draws are not supported here");
    Eigen::MatrixXd z(draws.draws, 3);
    for (int j = 0; j < draws.draws; ++j) {
      if (!(draws.thetas(j, 0) > 0.0) || !(draws.thetas(j, 1) > 0.0))
        throw invalid_input("proposal: bootstrap theta draw outside the domain");
      z(j, 0) = draws.betas(j, 0);
      z(j, 1) = std::log(draws.thetas(j, 0));
      z(j, 2) = std::log(draws.thetas(j, 1));
    }
    Eigen::RowVectorXd mu = z.colwise().mean();
    Eigen::MatrixXd centered = z.rowwise() - mu;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(draws.draws - 1);
    return from_moments(mu.transpose(), cov);
  }

  Phi draw(Rng& rng, const CovParams& prototype) const {
    Eigen::VectorXd z = mean + root * draw_standard_normal(rng, 3);
    Phi phi;
    phi.beta = z(0);
    phi.theta = prototype;
    phi.theta.sill = std::exp(std::clamp(z(1), -700.0, 700.0));
    phi.theta.range = std::exp(std::clamp(z(2), -700.0, 700.0));
    return phi;
  }

  // log q(phi) up to the common normalizing constant, including the
  // log-transform Jacobian 1/(sill * range).
  double log_density(const Phi& phi) const {
    Eigen::Vector3d z = transform(phi);
    Eigen::VectorXd d = z - mean;
    return -0.5 * d.dot(precision * d) - z(1) - z(2);
  }
};

struct AbcConfig {
  double xi = 0.1;        // objective tolerance band
  int chain_length = 1000;
  std::uint64_t seed = 0;
  GaussianProposal proposal;
};

// Retained accept/reject chain. A rejected step repeats the previous draw;
// the sample starts at the first accepted proposal.
struct AbcChain {
  Eigen::MatrixXd draws;           // chain_length x 3 (beta, sill, range)
  std::vector<char> accepted;      // per retained step
  double acceptance_rate = 0.0;
  double l_hat = 0.0;
  long proposals_used = 0;
};

// Likelihood-free sampler for the minimum-distance objective l(phi) =
// g(phi)^T B g(phi): a proposal is retained when a uniform draw falls below
// the fit-band indicator 1{l(phi*) <= (1+xi) l(phi_hat)} times the proposal
// density ratio q(previous)/q(proposed). Ratios above one always accept when
// the indicator holds; this is deliberate and differs from
// Metropolis-Hastings.
inline AbcChain run_abc(const MomentBuilder& moments, const WeightMatrix& weight,
                        const Phi& phi_hat, const AbcConfig& cfg) {
  if (cfg.xi < 0.0) throw invalid_input("abc: xi must be >= 0");
  if (cfg.chain_length < 1) throw invalid_input("abc: chain length must be >= 1");
  validate(phi_hat.theta);

  AbcChain chain;
  chain.l_hat = moments.objective(phi_hat, weight.m);
  const double band = (1.0 + cfg.xi) * chain.l_hat;
  chain.draws.resize(cfg.chain_length, 3);
  chain.accepted.assign(static_cast<std::size_t>(cfg.chain_length), 0);

  Rng rng = make_rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const long max_proposals =
      10L * static_cast<long>(cfg.chain_length) + 100L;

  Phi state = cfg.proposal.draw(rng, phi_hat.theta);
  double state_logq = cfg.proposal.log_density(state);
  bool started = false;
  int retained = 0;
  long accepted_count = 0;
  while (retained < cfg.chain_length) {
    if (chain.proposals_used >= max_proposals && !started)
      throw numerical_error("abc: no acceptance after " + std::to_string(chain.proposals_used) +
                            " proposals; tolerance too tight or proposal mislocated");
    ++chain.proposals_used;
    Phi proposal = cfg.proposal.draw(rng, phi_hat.theta);
    const double u = unif(rng);
    bool accept = false;
    if (proposal.theta.sill > 0.0 && proposal.theta.range > 0.0) {
      const double l = moments.objective(proposal, weight.m);
      if (l <= band) {
        const double logq_prop = cfg.proposal.log_density(proposal);
        // q(previous) / q(proposed), uncapped.
        accept = u <= std::exp(state_logq - logq_prop);
      }
    }
    if (accept) {
      state = proposal;
      state_logq = cfg.proposal.log_density(proposal);
      started = true;
      ++accepted_count;
    }
    if (!started) continue;  // the sample starts at the first accepted draw
    chain.draws(retained, 0) = state.beta;
    chain.draws(retained, 1) = state.theta.sill;
    chain.draws(retained, 2) = state.theta.range;
    chain.accepted[static_cast<std::size_t>(retained)] = accept ? 1 : 0;
    ++retained;
  }
  long flagged = 0;
  for (char f : chain.accepted) flagged += f;
  chain.acceptance_rate =
      static_cast<double>(flagged) / static_cast<double>(cfg.chain_length);
  return chain;
}

// Percentile interval over the retained beta draws.
inline std::pair<double, double> abc_interval(const AbcChain& chain, double alpha) {
  std::vector<double> betas(chain.draws.col(0).data(),
                            chain.draws.col(0).data() + chain.draws.rows());
  return {quantile(betas, alpha / 2.0), quantile(betas, 1.0 - alpha / 2.0)};
}

// Default chain weighting: the synthetic empirical variance of the moments
// at the Krig-and-regress estimates, or the identity for a quick naive run.
inline WeightMatrix default_weight_for_abc(const MomentBuilder& moments,
                                           const MisalignedDataset& data,
                                           const MeanModel& r_mean, const Phi& phi_kr,
                                           const DomainInfo& info, const WeightConfig& cfg,
                                           bool identity = false) {
  if (identity) return WeightMatrix::identity(moments.size());
  WeightConfig synth = cfg;
  synth.mode = WeightMode::synthetic;
  return efficient_weight(moments, data, r_mean, phi_kr, info, synth);
}

}  // namespace misreg
