#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/abc.hpp"
#include "misreg/covfit.hpp"
#include "misreg/fieldsim.hpp"
#include "misreg/mindist.hpp"
#include "misreg/twostep.hpp"

namespace misreg {

// How the default lag grids are placed: windows scaled by the fitted range
// (where the moment signal lives), or fixed percentiles of the pairwise
// distances.
enum class LagStrategy { range_scaled, percentile };

// Shared estimator settings of the Monte Carlo experiments.
struct EstimatorConfig {
  int bootstrap_draws = 200;
  double alpha = 0.05;
  CrossFlavor flavor = CrossFlavor::centered_product;
  // Pure keeps the coincident-pair variance term, which dominates at desk
  // scale; the mixed limit drops it and understates the moment noise.
  Regime regime = Regime::pure;
  LagStrategy lag_strategy = LagStrategy::range_scaled;
  int n_self_lags = 8;
  int n_cross_lags = 6;
  double self_window = 2.5;   // self lags span [d_min, d_min + self_window * range]
  double cross_window = 2.0;  // cross lags span [d_min, d_min + cross_window * range]
  double self_lag_lo = 0.05, self_lag_hi = 0.60;    // percentile window, self lags
  double cross_lag_lo = 0.02, cross_lag_hi = 0.35;  // percentile window, cross lags
  std::size_t min_pairs = 30;
  // Directional bins per distance (Appendix-style isotropy trick); 1 keeps
  // plain isotropic bins. More bins add quasi-independent moments and
  // noticeably sharpen the joint fit.
  int iso_angles = 1;
  WeightMode weight_mode = WeightMode::plugin;
  int n_synth = 200;
  int abc_chain = 2000;
  // Band tolerance of the ABC chain. The accepted set is close to an
  // ellipsoid of squared radius xi * l(phi_hat) in the curvature metric, and
  // l(phi_hat) grows with the number of over-identifying moments, so the
  // tolerance is calibrated to the harness moment count (K around 14); the
  // package default 0.1 corresponds to much longer moment vectors.
  double xi = 0.5;
  bool uniform_density = true;  // density plug-in of the domain summary
};

// How lattice sites are divided into stations and outcomes: a fixed even/odd
// checkerboard, or a fresh uniformly random half-split per run (the
// cross-validation-style misalignment).
enum class LatticeSplit { random_half, checkerboard };

// Generative configuration of the lattice experiment.
struct LatticeConfig {
  int side = 15;
  double spacing = 1.0;
  CovParams theta{CovKind::exponential, 1.0, 1.5, 0.5, 0.0};
  double field_mean = 0.0;
  double beta = 1.0;
  double gamma0 = 0.5;
  double sigma_eps = 0.25;
  LatticeSplit split = LatticeSplit::random_half;
  EstimatorConfig est;
};

struct MethodSummary {
  std::string method;
  int attempted = 0;
  int failed = 0;
  double mean_beta = 0.0;
  double sd_beta = 0.0;
  double rmse_beta = 0.0;
  double mean_se = 0.0;
  double rmse_se = 0.0;
  double coverage = 0.0;
  double coverage_se = 0.0;  // binomial Monte Carlo standard error
};

struct ExperimentReport {
  double truth = 0.0;
  int runs = 0;
  std::vector<MethodSummary> rows;
};

namespace detail {

struct MethodOutcome {
  double beta = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool ok = false;
};

inline std::vector<LagSpec> lag_grid(double lo, double hi, int n_bins) {
  std::vector<LagSpec> lags;
  if (n_bins <= 1 || hi <= lo) {
    lags.push_back(isotropic_lag(std::max(lo, 1e-9), std::max(lo / 2.0, 1e-9)));
    return lags;
  }
  const double step = (hi - lo) / (n_bins - 1);
  for (int k = 0; k < n_bins; ++k) lags.push_back(isotropic_lag(lo + step * k, step / 2.0));
  return lags;
}

inline std::vector<LagSpec> percentile_lags(const std::vector<double>& dists, int n_bins,
                                            double lo_pct, double hi_pct) {
  std::vector<double> copy = dists;
  return lag_grid(quantile(copy, lo_pct), quantile(copy, hi_pct), n_bins);
}

// Lag bins anchored at the smallest observed separation with a window scaled
// by the fitted range (clamped to the design's resolution), where the moments
// carry information about (beta, theta). Bin edges are placed at equal-count
// quantiles of the in-window separations, so no bin is ever empty.
inline std::vector<LagSpec> range_scaled_lags(const std::vector<double>& dists, int n_bins,
                                              double window, double range) {
  double d_min = std::numeric_limits<double>::infinity();
  double d_max = 0.0;
  for (double d : dists) {
    if (d > 0.0) d_min = std::min(d_min, d);
    d_max = std::max(d_max, d);
  }
  if (!std::isfinite(d_min)) throw invalid_input("lag grid: no positive separations");
  const double range_used = std::clamp(range, d_min, (d_max - d_min) / 3.0);
  const double hi = std::min(d_min + window * range_used, 0.95 * d_max);

  std::vector<double> in_window;
  for (double d : dists)
    if (d > 0.0 && d <= hi) in_window.push_back(d);
  if (in_window.size() < static_cast<std::size_t>(2 * n_bins)) return lag_grid(d_min, hi, n_bins);
  std::sort(in_window.begin(), in_window.end());

  std::vector<double> edges{in_window.front()};
  for (int k = 1; k < n_bins; ++k) {
    const double q =
        in_window[static_cast<std::size_t>(static_cast<double>(in_window.size() - 1) * k / n_bins)];
    if (q > edges.back() + 1e-12) edges.push_back(q);
  }
  if (in_window.back() > edges.back() + 1e-12) edges.push_back(in_window.back());
  std::vector<LagSpec> lags;
  const double pad = 1e-9 * std::max(1.0, hi);
  for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
    // Half-open bins (edge_e, edge_{e+1}]: the shared edge belongs to the
    // lower bin only, so no pair is double counted.
    const double lo_edge = e == 0 ? edges[e] - pad : edges[e] + pad;
    const double hi_edge = edges[e + 1];
    lags.push_back(isotropic_lag((lo_edge + hi_edge) / 2.0, (hi_edge - lo_edge) / 2.0));
  }
  return lags;
}

inline std::vector<double> self_distances(const MisalignedDataset& data) {
  std::vector<double> d;
  const auto& locs = data.station_locs;
  d.reserve(locs.size() * (locs.size() - 1) / 2);
  for (std::size_t i = 0; i < locs.size(); ++i)
    for (std::size_t j = i + 1; j < locs.size(); ++j) d.push_back(distance(locs[i], locs[j]));
  return d;
}

inline std::vector<double> cross_distances(const MisalignedDataset& data) {
  std::vector<double> d;
  d.reserve(data.station_locs.size() * data.outcome_locs.size());
  for (const auto& s : data.station_locs)
    for (const auto& o : data.outcome_locs) d.push_back(distance(s, o));
  return d;
}

// Runs the requested estimators on one misaligned dataset. The bootstrap is
// shared between the kr-bootstrap row and the ABC proposal.
inline std::map<std::string, MethodOutcome> run_methods(const MisalignedDataset& data,
                                                        const std::vector<std::string>& methods,
                                                        const CovParams& prototype,
                                                        const EstimatorConfig& cfg,
                                                        std::uint64_t seed) {
  std::map<std::string, MethodOutcome> out;
  auto want = [&](const std::string& m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  };

  FitResult fit;
  RegressionEstimate kr;
  bool base_ok = true;
  try {
    fit = fit_ml(data.stations(), prototype, MeanBasis::constant());
    kr = krig_and_regress(data, fit, cfg.alpha);
  } catch (const std::exception&) {
    base_ok = false;
  }

  if (want("kr-naive")) {
    MethodOutcome& o = out["kr-naive"];
    if (base_ok) {
      o.beta = kr.beta(0);
      o.se = kr.se(0);
      o.lo = kr.ci[0].first;
      o.hi = kr.ci[0].second;
      o.ok = true;
    }
  }

  const bool need_bootstrap = want("kr-bootstrap") || want("mindist-abc");
  BootstrapDraws draws;
  bool bootstrap_ok = false;
  if (need_bootstrap && base_ok) {
    try {
      auto [est, d] = two_step_bootstrap(data, fit, cfg.bootstrap_draws, cfg.alpha,
                                         BootstrapMeanMode::constant_mean, CiKind::percentile,
                                         derive_seed(seed, 1));
      draws = d;
      bootstrap_ok = true;
      if (want("kr-bootstrap")) {
        MethodOutcome& o = out["kr-bootstrap"];
        o.beta = est.beta(0);
        o.se = est.se(0);
        o.lo = est.ci[0].first;
        o.hi = est.ci[0].second;
        o.ok = true;
      }
    } catch (const std::exception&) {
      if (want("kr-bootstrap")) out["kr-bootstrap"];
    }
  } else if (need_bootstrap && want("kr-bootstrap")) {
    out["kr-bootstrap"];
  }

  const bool need_md = want("mindist") || want("mindist-abc");
  if (need_md) {
    if (want("mindist")) out["mindist"];
    if (want("mindist-abc")) out["mindist-abc"];
    if (base_ok) {
      try {
        std::vector<LagSpec> lags_self, lags_cross;
        if (cfg.lag_strategy == LagStrategy::range_scaled) {
          lags_self = range_scaled_lags(self_distances(data), cfg.n_self_lags, cfg.self_window,
                                        fit.theta.range);
          lags_cross = range_scaled_lags(cross_distances(data), cfg.n_cross_lags,
                                         cfg.cross_window, fit.theta.range);
        } else {
          lags_self = percentile_lags(self_distances(data), cfg.n_self_lags, cfg.self_lag_lo,
                                      cfg.self_lag_hi);
          lags_cross = percentile_lags(cross_distances(data), cfg.n_cross_lags, cfg.cross_lag_lo,
                                       cfg.cross_lag_hi);
        }
        if (cfg.iso_angles > 1) {
          // Split every distance bin into directional bins at shared model
          // values (the isotropy trick): quasi-independent extra moments.
          auto directional = [&](const std::vector<LagSpec>& base) {
            std::vector<LagSpec> out;
            const double tol = M_PI / (2.0 * cfg.iso_angles);
            for (const auto& lag : base)
              for (int q = 0; q < cfg.iso_angles; ++q)
                out.push_back(directional_lag(lag.r, lag.r_tol, (2.0 * q + 1.0) * tol, tol));
            return out;
          };
          lags_self = directional(lags_self);
          lags_cross = directional(lags_cross);
        }
        MomentBuilder moments = MomentBuilder::from_dataset(data, fit.mean, lags_self, lags_cross,
                                                            cfg.flavor, cfg.min_pairs);
        std::vector<Location> all = data.outcome_locs;
        all.insert(all.end(), data.station_locs.begin(), data.station_locs.end());
        DomainInfo info = DomainInfo::from_locations(all, 10, cfg.uniform_density);

        double d_min = std::numeric_limits<double>::infinity(), d_max = 0.0;
        for (double d : cross_distances(data)) {
          if (d > 0.0) d_min = std::min(d_min, d);
          d_max = std::max(d_max, d);
        }
        Phi start;
        start.beta = kr.beta(0);
        start.theta = fit.theta;
        start.theta.range = std::clamp(start.theta.range, d_min / 2.0, d_max / 2.0);
        const double sigma_eps2 = kr.diagnostics.at("sigma2_resid");

        WeightConfig wcfg;
        wcfg.mode = cfg.weight_mode;
        wcfg.regime = cfg.regime;
        wcfg.sigma_eps2 = sigma_eps2;
        wcfg.n_synth = cfg.n_synth;
        wcfg.seed = derive_seed(seed, 2);
        wcfg.gamma = kr.gamma;

        MdOptions mopt;
        mopt.regime = cfg.regime;
        mopt.range_lo = d_min / 10.0;
        mopt.range_hi = d_max;
        const double var0 = kr.diagnostics.at("sigma2_resid") + start.theta.sill;
        mopt.sill_lo = 1e-4 * var0;
        mopt.sill_hi = 1e4 * var0;
        mopt.beta_abs_max = 1e3;

        if (want("mindist")) {
          MethodOutcome& o = out["mindist"];
          try {
            WeightMatrix weight = efficient_weight(moments, data, fit.mean, start, info, wcfg);
            MdResult md = estimate(moments, weight, start, mopt);
            add_inference(md, moments, weight, info, sigma_eps2);
            const double z = normal_quantile(1.0 - cfg.alpha / 2.0);
            o.beta = md.phi.beta;
            o.se = md.se(0);
            o.lo = md.phi.beta - z * md.se(0);
            o.hi = md.phi.beta + z * md.se(0);
            o.ok = true;
          } catch (const std::exception&) {
          }
        }

        if (want("mindist-abc") && bootstrap_ok) {
          MethodOutcome& o = out["mindist-abc"];
          try {
            WeightConfig scfg = wcfg;
            scfg.mode = WeightMode::synthetic;
            WeightMatrix weight = efficient_weight(moments, data, fit.mean, start, info, scfg);
            MdResult md = estimate(moments, weight, start, mopt);
            AbcConfig acfg;
            acfg.xi = cfg.xi;
            acfg.chain_length = cfg.abc_chain;
            acfg.seed = derive_seed(seed, 3);
            acfg.proposal = GaussianProposal::from_bootstrap(draws);
            AbcChain chain = run_abc(moments, weight, md.phi, acfg);
            auto [lo, hi] = abc_interval(chain, cfg.alpha);
            const Eigen::VectorXd betas = chain.draws.col(0);
            o.beta = betas.mean();
            o.se = std::sqrt((betas.array() - betas.mean()).square().sum() /
                             std::max<double>(1.0, betas.size() - 1));
            o.lo = lo;
            o.hi = hi;
            o.ok = true;
          } catch (const std::exception&) {
          }
        }
      } catch (const std::exception&) {
        // builder construction failed: mindist rows stay failed
      }
    }
  }

  for (const auto& m : methods) {
    if (m.rfind("nn-", 0) == 0) {
      MethodOutcome& o = out[m];
      try {
        const int k = std::stoi(m.substr(3));
        RegressionEstimate nn = nn_regress(data, k, cfg.alpha);
        o.beta = nn.beta(0);
        o.se = nn.se(0);
        o.lo = nn.ci[0].first;
        o.hi = nn.ci[0].second;
        o.ok = true;
      } catch (const std::exception&) {
      }
    }
  }
  return out;
}

inline ExperimentReport aggregate(const std::vector<std::map<std::string, MethodOutcome>>& all,
                                  const std::vector<std::string>& methods, double truth) {
  ExperimentReport report;
  report.truth = truth;
  report.runs = static_cast<int>(all.size());
  for (const auto& m : methods) {
    MethodSummary row;
    row.method = m;
    std::vector<double> betas, ses;
    int covered = 0;
    for (const auto& run : all) {
      auto it = run.find(m);
      if (it == run.end()) continue;
      ++row.attempted;
      if (!it->second.ok) {
        ++row.failed;
        continue;
      }
      betas.push_back(it->second.beta);
      ses.push_back(it->second.se);
      if (it->second.lo <= truth && truth <= it->second.hi) ++covered;
    }
    const int ok = static_cast<int>(betas.size());
    if (ok > 0) {
      const double mean = std::accumulate(betas.begin(), betas.end(), 0.0) / ok;
      double var = 0.0, mse = 0.0;
      for (double b : betas) {
        var += (b - mean) * (b - mean);
        mse += (b - truth) * (b - truth);
      }
      row.mean_beta = mean;
      row.sd_beta = ok > 1 ? std::sqrt(var / (ok - 1)) : 0.0;
      row.rmse_beta = std::sqrt(mse / ok);
      row.mean_se = std::accumulate(ses.begin(), ses.end(), 0.0) / ok;
      double se_mse = 0.0;
      for (double s : ses) se_mse += (s - row.sd_beta) * (s - row.sd_beta);
      row.rmse_se = std::sqrt(se_mse / ok);
      row.coverage = static_cast<double>(covered) / ok;
      row.coverage_se = std::sqrt(row.coverage * (1.0 - row.coverage) / ok);
    }
    if (row.attempted > 0 && row.failed * 10 > row.attempted)
      throw numerical_error("experiment: method '" + m + "' failed on more than 10% of runs (" +
                            std::to_string(row.failed) + "/" + std::to_string(row.attempted) + ")");
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace detail

// Misaligned regression on a lattice: per run, one joint field draw over the
// side x side grid, stations on even checkerboard cells, outcomes on odd
// cells; every requested estimator runs on the same dataset. Runs use
// seeds derived from the master seed by run index and execute concurrently.
inline ExperimentReport lattice_experiment(const LatticeConfig& cfg, int n_runs,
                                           const std::vector<std::string>& methods,
                                           std::uint64_t seed, unsigned threads = 0) {
  if (n_runs < 1) throw invalid_input("lattice_experiment: n_runs must be >= 1");
  if (methods.empty()) throw invalid_input("lattice_experiment: no methods requested");
  validate(cfg.theta);
  std::vector<Location> lattice = make_lattice(cfg.side, cfg.spacing);

  std::vector<std::map<std::string, detail::MethodOutcome>> all(static_cast<std::size_t>(n_runs));
  parallel_for(
      static_cast<std::size_t>(n_runs),
      [&](std::size_t r) {
        const std::uint64_t run_seed = derive_seed(seed, r);
        std::vector<Location> stations, outcomes;
        if (cfg.split == LatticeSplit::checkerboard) {
          for (int i = 0; i < cfg.side; ++i)
            for (int j = 0; j < cfg.side; ++j) {
              const auto& loc = lattice[static_cast<std::size_t>(i * cfg.side + j)];
              ((i + j) % 2 == 0 ? stations : outcomes).push_back(loc);
            }
        } else {
          Rng rng = make_rng(derive_seed(run_seed, 4));
          std::vector<std::size_t> idx(lattice.size());
          std::iota(idx.begin(), idx.end(), 0);
          std::shuffle(idx.begin(), idx.end(), rng);
          const std::size_t half = lattice.size() / 2;
          for (std::size_t i = 0; i < lattice.size(); ++i)
            (i < half ? stations : outcomes).push_back(lattice[idx[i]]);
        }
        SimConfig sim;
        sim.seed = derive_seed(run_seed, 0);
        sim.mean = MeanModel::constant(cfg.field_mean);
        sim.theta = cfg.theta;
        sim.reg.beta = Eigen::VectorXd::Constant(1, cfg.beta);
        sim.reg.gamma = Eigen::VectorXd::Constant(1, cfg.gamma0);
        sim.errors = ErrorModel::iid(cfg.sigma_eps * cfg.sigma_eps);
        SimulatedMisaligned sm = simulate_misaligned(sim, outcomes, stations);
        all[r] = detail::run_methods(sm.data, methods, cfg.theta, cfg.est, run_seed);
      },
      threads);
  return detail::aggregate(all, methods, cfg.beta);
}

// Fully aligned data (regressor and outcome at every location), the input of
// the cross-validation exercise.
struct AlignedData {
  std::vector<Location> locs;
  Eigen::VectorXd r;
  Eigen::VectorXd y;
  Eigen::MatrixXd controls;  // includes intercept
};

// Semi-synthetic aligned dataset: locations uniform on [0, L]^2, regressor
// from an exponential-family field, outcomes from the linear model.
inline AlignedData semi_synthetic_aligned(int n, double region, const CovParams& theta,
                                          double field_mean, double beta, double gamma0,
                                          double sigma_eps, std::uint64_t seed) {
  if (n < 4) throw invalid_input("semi_synthetic_aligned: need n >= 4");
  validate(theta);
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, region);
  AlignedData out;
  out.locs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.locs.push_back(Location{unif(rng), unif(rng)});
  SimConfig sim;
  sim.seed = derive_seed(seed, 1);
  sim.mean = MeanModel::constant(field_mean);
  sim.theta = theta;
  FieldSample field = simulate_field(sim, out.locs);
  out.r = field.values;
  Rng rng_eps = make_rng(derive_seed(seed, 2));
  out.y = beta * out.r + Eigen::VectorXd::Constant(n, gamma0);
  if (sigma_eps > 0.0) out.y += sigma_eps * draw_standard_normal(rng_eps, n);
  out.controls = Eigen::MatrixXd::Ones(n, 1);
  return out;
}

// Reference coefficient of the cross-validation exercise: GLS on the full
// aligned data, weighting with an exponential covariance fitted to the OLS
// residuals.
inline double full_data_gls_beta(const AlignedData& aligned) {
  const Eigen::Index n = aligned.y.size();
  Eigen::MatrixXd x(n, 1 + aligned.controls.cols());
  x.col(0) = aligned.r;
  x.rightCols(aligned.controls.cols()) = aligned.controls;
  Eigen::VectorXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * aligned.y);
  Eigen::VectorXd resid = aligned.y - x * ols;
  CovParams proto;
  proto.kind = CovKind::exponential;
  FitResult rfit = fit_ml(FieldSample{aligned.locs, resid}, proto, MeanBasis::constant());
  Eigen::MatrixXd sigma = cov_matrix(rfit.theta, aligned.locs);
  Eigen::LLT<Eigen::MatrixXd> llt = factor_covariance(std::move(sigma), rfit.theta.sill);
  Eigen::MatrixXd si_x = llt.solve(x);
  Eigen::VectorXd beta = (x.transpose() * si_x).ldlt().solve(si_x.transpose() * aligned.y);
  return beta(0);
}

// Hide-half cross-validation: per run, a random half of the locations keep
// only their outcomes and the other half keep only their regressor values,
// every estimator runs on the induced misaligned dataset, and estimates are
// judged against the full-data GLS reference.
inline ExperimentReport crossval_experiment(const AlignedData& aligned, int n_runs,
                                            const std::vector<std::string>& methods,
                                            std::uint64_t seed, const EstimatorConfig& est,
                                            const CovParams& prototype, unsigned threads = 0) {
  if (n_runs < 1) throw invalid_input("crossval_experiment: n_runs must be >= 1");
  if (methods.empty()) throw invalid_input("crossval_experiment: no methods requested");
  const Eigen::Index n = aligned.y.size();
  if (n < 8) throw invalid_input("crossval_experiment: dataset too small");
  const double truth = full_data_gls_beta(aligned);

  std::vector<std::map<std::string, detail::MethodOutcome>> all(static_cast<std::size_t>(n_runs));
  parallel_for(
      static_cast<std::size_t>(n_runs),
      [&](std::size_t r) {
        const std::uint64_t run_seed = derive_seed(seed, r);
        Rng rng = make_rng(derive_seed(run_seed, 0));
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        const Eigen::Index half = n / 2;
        MisalignedDataset data;
        data.controls.resize(half, aligned.controls.cols());
        data.y.resize(half);
        for (Eigen::Index i = 0; i < half; ++i) {
          data.outcome_locs.push_back(aligned.locs[static_cast<std::size_t>(idx[i])]);
          data.y(i) = aligned.y(idx[i]);
          data.controls.row(i) = aligned.controls.row(idx[i]);
        }
        data.r_star.resize(n - half);
        for (Eigen::Index i = half; i < n; ++i) {
          data.station_locs.push_back(aligned.locs[static_cast<std::size_t>(idx[i])]);
          data.r_star(i - half) = aligned.r(idx[i]);
        }
        all[r] = detail::run_methods(data, methods, prototype, est, run_seed);
      },
      threads);
  return detail::aggregate(all, methods, truth);
}

inline std::string experiment_csv(const ExperimentReport& rep, const std::string& cfg_echo) {
  std::ostringstream os;
  os << cfg_echo;
  os << "method,runs,failures,mean_beta,rmse_beta,sd_beta,mean_se,rmse_se,coverage,coverage_mc_se,"
        "truth\n";
  for (const auto& row : rep.rows) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  row.method.c_str(), row.attempted, row.failed, row.mean_beta, row.rmse_beta,
                  row.sd_beta, row.mean_se, row.rmse_se, row.coverage, row.coverage_se, rep.truth);
    os << buf;
  }
  return os.str();
}

inline std::string experiment_text(const ExperimentReport& rep) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%-14s %6s %5s %9s %9s %9s %9s %9s %9s\n", "method", "runs",
                "fail", "E[beta]", "RMSE", "sd", "mean SE", "RMSE(SE)", "coverage");
  os << buf;
  for (const auto& row : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%-14s %6d %5d %9.4f %9.4f %9.4f %9.4f %9.4f %9.3f\n",
                  row.method.c_str(), row.attempted, row.failed, row.mean_beta, row.rmse_beta,
                  row.sd_beta, row.mean_se, row.rmse_se, row.coverage);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "truth = %.6g over %d runs\n", rep.truth, rep.runs);
  os << buf;
  return os.str();
}

}  // namespace misreg
