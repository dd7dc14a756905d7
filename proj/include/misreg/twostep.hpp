#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "misreg/covfit.hpp"
#include "misreg/dataset.hpp"
#include "misreg/kriging.hpp"
#include "misreg/rng.hpp"

namespace misreg {

// Uniform estimator output: coefficients, standard errors and confidence
// intervals stacked as [beta...; gamma...].
struct RegressionEstimate {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  Eigen::VectorXd se;
  std::vector<std::pair<double, double>> ci;
  std::vector<std::string> beta_labels;
  std::string method;
  double alpha = 0.05;
  std::map<std::string, double> diagnostics;
};

struct BootstrapDraws {
  Eigen::MatrixXd betas;   // J x dim(beta)
  Eigen::MatrixXd thetas;  // J x 2 (sill, range)
  int draws = 0;
};

enum class CiKind { percentile, normal };
enum class BootstrapMeanMode { constant_mean, linear_mean };

// Scale on which the covariance parameters are drawn from their asymptotic
// law. The log scale maps the law through the positivity constraint
// (delta-method covariance), which keeps every draw in the domain; the raw
// scale redraws domain violations by rejection. At desk-scale station counts
// the raw-scale normal puts visible mass on near-zero ranges whose
// imputations are collinear with the controls, so log is the default.
enum class ThetaDrawScale { log_scale, raw };

namespace detail {

struct Design {
  Eigen::MatrixXd x;  // [interacted r_hat | controls]
  std::vector<std::string> beta_labels;
  int n_beta = 1;
};

inline Design build_design(const Eigen::VectorXd& r_hat, const MisalignedDataset& data) {
  Design d;
  const Eigen::Index n = data.n_outcomes();
  if (data.group.empty()) {
    d.n_beta = 1;
    d.beta_labels = {"beta"};
    d.x.resize(n, 1 + data.controls.cols());
    d.x.col(0) = r_hat;
    d.x.rightCols(data.controls.cols()) = data.controls;
    return d;
  }
  std::set<std::string> labels(data.group.begin(), data.group.end());
  d.n_beta = static_cast<int>(labels.size());
  d.x = Eigen::MatrixXd::Zero(n, d.n_beta + data.controls.cols());
  int c = 0;
  for (const auto& label : labels) {
    d.beta_labels.push_back("beta_" + label);
    for (Eigen::Index i = 0; i < n; ++i)
      if (data.group[static_cast<std::size_t>(i)] == label) d.x(i, c) = r_hat(i);
    ++c;
  }
  d.x.rightCols(data.controls.cols()) = data.controls;
  return d;
}

struct OlsFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  double sigma2 = 0.0;
};

inline OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool with_se) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw numerical_error("design singular");
  OlsFit fit;
  fit.coef = qr.solve(y);
  if (with_se) {
    const Eigen::VectorXd resid = y - x * fit.coef;
    const double dof = static_cast<double>(y.size() - x.cols());
    if (dof <= 0) throw invalid_input("ols: no degrees of freedom for standard errors");
    fit.sigma2 = resid.squaredNorm() / dof;
    Eigen::MatrixXd xtx_inv;
    invert_spd(x.transpose() * x, xtx_inv);
    fit.se = (fit.sigma2 * xtx_inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
  }
  return fit;
}

inline std::vector<std::pair<double, double>> normal_cis(const Eigen::VectorXd& coef,
                                                         const Eigen::VectorXd& se, double alpha) {
  const double z = normal_quantile(1.0 - alpha / 2.0);
  std::vector<std::pair<double, double>> ci;
  ci.reserve(static_cast<std::size_t>(coef.size()));
  for (Eigen::Index i = 0; i < coef.size(); ++i)
    ci.emplace_back(coef(i) - z * se(i), coef(i) + z * se(i));
  return ci;
}

// Kriging weights recomputed for a given theta on cached distance matrices.
struct KrigCache {
  Eigen::MatrixXd d_ss;  // station x station distances
  Eigen::MatrixXd d_so;  // station x outcome distances

  static KrigCache build(const FieldSample& stations, const std::vector<Location>& outcomes) {
    KrigCache c;
    c.d_ss = distance_matrix(stations.locations);
    const Eigen::Index m = static_cast<Eigen::Index>(stations.locations.size());
    const Eigen::Index n = static_cast<Eigen::Index>(outcomes.size());
    c.d_so.resize(m, n);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        c.d_so(i, j) = distance(stations.locations[static_cast<std::size_t>(i)],
                                outcomes[static_cast<std::size_t>(j)]);
    return c;
  }

  Eigen::VectorXd predict(const CovParams& theta, const Eigen::VectorXd& r_star,
                          const Eigen::VectorXd& mean_sta, const Eigen::VectorXd& mean_out) const {
    Eigen::LLT<Eigen::MatrixXd> llt =
        factor_covariance(kernel_matrix(theta, d_ss), theta.sill);
    Eigen::VectorXd alpha = llt.solve(r_star - mean_sta);
    return mean_out + kernel_matrix(theta, d_so).transpose() * alpha;
  }
};

}  // namespace detail

// Krig-and-regress: impute the regressor at the outcome locations by the
// EBLUP, then OLS of y on (r_hat, F). Standard errors are the usual OLS
// ones and ignore first-stage uncertainty (naive).
inline RegressionEstimate krig_and_regress(const MisalignedDataset& data, const FitResult& fit,
                                           double alpha = 0.05) {
  validate(data);
  const KrigingPrediction pred = eblup(fit, data.stations(), data.outcome_locs);
  detail::Design design = detail::build_design(pred.values, data);
  detail::OlsFit ols_fit = detail::ols(design.x, data.y, true);
  RegressionEstimate est;
  est.method = "kr-naive";
  est.alpha = alpha;
  est.beta = ols_fit.coef.head(design.n_beta);
  est.gamma = ols_fit.coef.tail(data.controls.cols());
  est.se = ols_fit.se;
  est.ci = detail::normal_cis(ols_fit.coef, ols_fit.se, alpha);
  est.beta_labels = design.beta_labels;
  est.diagnostics["sigma2_resid"] = ols_fit.sigma2;
  est.diagnostics["fit_loglik"] = fit.loglik;
  est.diagnostics["fit_converged"] = fit.converged ? 1.0 : 0.0;
  return est;
}

// Two-step bootstrap: per draw, covariance (and in linear-mean mode, mean)
// parameters are redrawn from their asymptotic law, the regressor is
// re-imputed, and outcome rows are resampled with replacement before the
// regression is re-run. Point estimate is the mean of draws, the standard
// error their standard deviation, the interval a percentile (or normal)
// interval.
inline std::pair<RegressionEstimate, BootstrapDraws> two_step_bootstrap(
    const MisalignedDataset& data, const FitResult& fit, int draws, double alpha = 0.05,
    BootstrapMeanMode mode = BootstrapMeanMode::constant_mean,
    CiKind ci_kind = CiKind::percentile, std::uint64_t seed = 0,
    ThetaDrawScale scale = ThetaDrawScale::log_scale) {
  validate(data);
  if (draws < 1) throw invalid_input("two_step_bootstrap: need at least one draw");
  if (draws < 100) log_warning("two_step_bootstrap: fewer than 100 draws is not recommended");

  const FieldSample stations = average_duplicate_stations(data.stations());
  const detail::KrigCache cache = detail::KrigCache::build(stations, data.outcome_locs);
  const Eigen::Index n = data.n_outcomes();

  // Reference regression at the fitted parameters (for gamma and diagnostics).
  RegressionEstimate reference = krig_and_regress(data, fit, alpha);
  const int n_beta = static_cast<int>(reference.beta.size());

  Eigen::VectorXd theta_hat(2);
  theta_hat << fit.theta.sill, fit.theta.range;
  Eigen::MatrixXd vcov_theta = fit.vcov_theta;
  if (vcov_theta.size() == 0) vcov_theta = Eigen::MatrixXd::Zero(2, 2);
  if (scale == ThetaDrawScale::log_scale) {
    // Delta method: Cov(log theta) = D V D with D = diag(1 / theta).
    const Eigen::Vector2d d(1.0 / fit.theta.sill, 1.0 / fit.theta.range);
    vcov_theta = d.asDiagonal() * vcov_theta * d.asDiagonal();
    theta_hat = theta_hat.array().log();
  }

  BootstrapDraws out;
  out.draws = draws;
  out.betas.resize(draws, n_beta);
  out.thetas.resize(draws, 2);

  // Controls projection for the degenerate-imputation check below.
  const Eigen::LDLT<Eigen::MatrixXd> ftf((data.controls.transpose() * data.controls).eval());
  const double r_star_sd = std::sqrt(
      (data.r_star.array() - data.r_star.mean()).square().sum() /
      std::max<double>(1.0, static_cast<double>(data.r_star.size() - 1)));

  Rng rng = make_rng(seed);
  long redraws = 0;
  long resample_retries = 0;
  for (int j = 0; j < draws; ++j) {
    // Draw theta (and the mean in linear mode) from the asymptotic law. A
    // proposal is redrawn when it leaves the positive domain, and also when
    // its imputed regressor is numerically collinear with the controls
    // (ranges near zero collapse every prediction to the mean): such a draw
    // cannot identify beta, the per-draw analogue of the "design singular"
    // error.
    CovParams theta_j = fit.theta;
    Eigen::VectorXd r_hat_j;
    int attempts = 0;
    for (;; ++attempts) {
      if (attempts > 200) {
        log_warning("two_step_bootstrap: theta redraw limit hit; using the point estimate");
        theta_j = fit.theta;
        r_hat_j = cache.predict(theta_j, stations.values, fit.mean.values(stations.locations),
                                fit.mean.values(data.outcome_locs));
        break;
      }
      Eigen::VectorXd t = draw_mvn(rng, theta_hat, vcov_theta);
      if (scale == ThetaDrawScale::log_scale) t = t.array().exp();
      if (!(t(0) > 0.0 && t(1) > 0.0)) {
        ++redraws;
        continue;
      }
      theta_j.sill = t(0);
      theta_j.range = t(1);
      MeanModel mean_j = fit.mean;
      if (mode == BootstrapMeanMode::linear_mean && fit.vcov_mean.size() > 0)
        mean_j.rho = draw_mvn(rng, fit.mean.rho, fit.vcov_mean);
      r_hat_j = cache.predict(theta_j, stations.values, mean_j.values(stations.locations),
                              mean_j.values(data.outcome_locs));
      const Eigen::VectorXd resid =
          r_hat_j - data.controls * ftf.solve(data.controls.transpose() * r_hat_j);
      const double spread = std::sqrt(resid.squaredNorm() / static_cast<double>(n));
      if (!r_hat_j.allFinite() || spread < 5e-3 * r_star_sd) {
        ++redraws;
        continue;
      }
      break;
    }

    out.thetas(j, 0) = theta_j.sill;
    out.thetas(j, 1) = theta_j.range;

    // Row resampling; a singular resampled design is redrawn.
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100) throw numerical_error("two_step_bootstrap: resampled design singular");
      MisalignedDataset boot;
      boot.station_locs = data.station_locs;
      boot.r_star = data.r_star;
      boot.outcome_locs.resize(static_cast<std::size_t>(n));
      boot.y.resize(n);
      boot.controls.resize(n, data.controls.cols());
      if (!data.group.empty()) boot.group.resize(static_cast<std::size_t>(n));
      Eigen::VectorXd r_hat_boot(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index pick_i = pick(rng);
        boot.y(i) = data.y(pick_i);
        boot.controls.row(i) = data.controls.row(pick_i);
        r_hat_boot(i) = r_hat_j(pick_i);
        if (!data.group.empty())
          boot.group[static_cast<std::size_t>(i)] = data.group[static_cast<std::size_t>(pick_i)];
      }
      try {
        detail::Design design = detail::build_design(r_hat_boot, boot);
        detail::OlsFit ols_fit = detail::ols(design.x, boot.y, false);
        out.betas.row(j) = ols_fit.coef.head(design.n_beta).transpose();
        break;
      } catch (const numerical_error&) {
        ++resample_retries;
      }
    }
  }

  const double redraw_rate =
      static_cast<double>(redraws) / static_cast<double>(redraws + draws);
  if (redraw_rate > 0.5)
    log_warning("two_step_bootstrap: more than half of the theta proposals were redrawn; "
                "the asymptotic law concentrates near the domain boundary");

  RegressionEstimate est;
  est.method = "kr-bootstrap";
  est.alpha = alpha;
  est.beta_labels = reference.beta_labels;
  est.beta = out.betas.colwise().mean().transpose();
  est.gamma = reference.gamma;
  Eigen::VectorXd beta_se(n_beta);
  for (int c = 0; c < n_beta; ++c) {
    const Eigen::VectorXd col = out.betas.col(c);
    beta_se(c) = std::sqrt((col.array() - col.mean()).square().sum() /
                           std::max(1.0, static_cast<double>(draws - 1)));
  }
  est.se.resize(n_beta + est.gamma.size());
  est.se.head(n_beta) = beta_se;
  est.se.tail(est.gamma.size()) = reference.se.tail(est.gamma.size());
  if (ci_kind == CiKind::percentile) {
    for (int c = 0; c < n_beta; ++c) {
      std::vector<double> col(out.betas.col(c).data(), out.betas.col(c).data() + draws);
      est.ci.emplace_back(quantile(col, alpha / 2.0), quantile(col, 1.0 - alpha / 2.0));
    }
  } else {
    const double z = normal_quantile(1.0 - alpha / 2.0);
    for (int c = 0; c < n_beta; ++c)
      est.ci.emplace_back(est.beta(c) - z * beta_se(c), est.beta(c) + z * beta_se(c));
  }
  for (Eigen::Index i = n_beta; i < est.se.size(); ++i)
    est.ci.push_back(reference.ci[static_cast<std::size_t>(i)]);
  est.diagnostics["bootstrap_draws"] = draws;
  est.diagnostics["theta_redraw_rate"] = redraw_rate;
  est.diagnostics["resample_retries"] = static_cast<double>(resample_retries);
  for (int c = 0; c < n_beta; ++c)
    est.diagnostics["kr_point_" + reference.beta_labels[static_cast<std::size_t>(c)]] =
        reference.beta(c);
  return {est, out};
}

// Baseline: impute each outcome's regressor as the mean of its k nearest
// stations, then OLS with naive standard errors.
inline RegressionEstimate nn_regress(const MisalignedDataset& data, int k, double alpha = 0.05) {
  validate(data);
  const FieldSample stations = average_duplicate_stations(data.stations());
  const Eigen::Index m = stations.values.size();
  if (k < 1 || k > m) throw invalid_input("nn_regress: k must lie in [1, #stations]");
  const Eigen::Index n = data.n_outcomes();
  Eigen::VectorXd r_hat(n);
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index s = 0; s < m; ++s)
      dist[static_cast<std::size_t>(s)] = {
          distance(data.outcome_locs[static_cast<std::size_t>(i)],
                   stations.locations[static_cast<std::size_t>(s)]),
          s};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double sum = 0.0;
    for (int t = 0; t < k; ++t) sum += stations.values(dist[static_cast<std::size_t>(t)].second);
    r_hat(i) = sum / static_cast<double>(k);
  }
  detail::Design design = detail::build_design(r_hat, data);
  detail::OlsFit ols_fit = detail::ols(design.x, data.y, true);
  RegressionEstimate est;
  est.method = "nn-" + std::to_string(k);
  est.alpha = alpha;
  est.beta = ols_fit.coef.head(design.n_beta);
  est.gamma = ols_fit.coef.tail(data.controls.cols());
  est.se = ols_fit.se;
  est.ci = detail::normal_cis(ols_fit.coef, ols_fit.se, alpha);
  est.beta_labels = design.beta_labels;
  est.diagnostics["sigma2_resid"] = ols_fit.sigma2;
  return est;
}

}  // namespace misreg
