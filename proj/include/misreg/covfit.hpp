#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/covmodel.hpp"
#include "misreg/dataset.hpp"
#include "misreg/optim.hpp"

namespace misreg {

enum class FitMethod { ml, reml };

inline std::string to_string(FitMethod m) { return m == FitMethod::ml ? "ml" : "reml"; }

struct FitOptions {
  double tol = 1e-8;      // objective tolerance of the simplex search
  int max_iter = 500;     // simplex iterations per start
  double fd_step = 1e-4;  // relative step of the finite-difference information
};

// Fitted mean and covariance parameters of the regressor field, with the
// asymptotic covariances the two-step bootstrap draws from.
struct FitResult {
  CovParams theta;
  MeanModel mean;
  Eigen::MatrixXd vcov_theta;  // over (sill, range)
  Eigen::MatrixXd vcov_mean;   // over rho
  double loglik = 0.0;
  FitMethod method = FitMethod::ml;
  bool converged = false;
  int iterations = 0;
  bool vcov_degenerate = false;
  double gradient_norm = 0.0;
};

namespace detail {

inline Eigen::MatrixXd distance_matrix(const std::vector<Location>& locs) {
  const Eigen::Index n = static_cast<Eigen::Index>(locs.size());
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = distance(locs[i], locs[j]);
      d(j, i) = d(i, j);
    }
  }
  return d;
}

inline Eigen::MatrixXd kernel_matrix(const CovParams& p, const Eigen::MatrixXd& dists) {
  Eigen::MatrixXd k(dists.rows(), dists.cols());
  for (Eigen::Index i = 0; i < dists.rows(); ++i)
    for (Eigen::Index j = 0; j < dists.cols(); ++j) k(i, j) = cov(p, dists(i, j));
  return k;
}

struct LikelihoodTerms {
  double logdet_k = 0.0;
  double logdet_sks = 0.0;  // log det S^T K^-1 S
  double quad = 0.0;        // residual quadratic form
  Eigen::VectorXd rho;
  Eigen::MatrixXd sks_inv;  // (S^T K^-1 S)^-1
};

inline LikelihoodTerms likelihood_terms(const CovParams& p, const Eigen::MatrixXd& dists,
                                        const Eigen::MatrixXd& s, const Eigen::VectorXd& r) {
  LikelihoodTerms t;
  Eigen::LLT<Eigen::MatrixXd> llt = factor_covariance(kernel_matrix(p, dists), p.sill);
  t.logdet_k = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  Eigen::MatrixXd kinv_s = llt.solve(s);
  Eigen::VectorXd kinv_r = llt.solve(r);
  Eigen::MatrixXd sks = s.transpose() * kinv_s;
  Eigen::LLT<Eigen::MatrixXd> sks_llt(sks);
  if (sks_llt.info() != Eigen::Success) throw invalid_input("mean basis collinear");
  t.logdet_sks = 2.0 * sks_llt.matrixLLT().diagonal().array().log().sum();
  t.rho = sks_llt.solve(s.transpose() * kinv_r);
  t.sks_inv = sks_llt.solve(Eigen::MatrixXd::Identity(s.cols(), s.cols()));
  Eigen::VectorXd e = r - s * t.rho;
  t.quad = e.dot(kinv_r - kinv_s * t.rho);
  return t;
}

// Negative profile log-likelihood (mean profiled out by GLS) or negative
// restricted log-likelihood, as a function of theta.
inline double neg_loglik(const CovParams& p, const Eigen::MatrixXd& dists,
                         const Eigen::MatrixXd& s, const Eigen::VectorXd& r, FitMethod method) {
  const double n = static_cast<double>(r.size());
  const double k = static_cast<double>(s.cols());
  LikelihoodTerms t = likelihood_terms(p, dists, s, r);
  if (method == FitMethod::ml) return 0.5 * (t.logdet_k + t.quad + n * std::log(2.0 * M_PI));
  return 0.5 * (t.logdet_k + t.logdet_sks + t.quad + (n - k) * std::log(2.0 * M_PI));
}

inline CovParams decode_theta(const CovParams& prototype, const Eigen::VectorXd& u) {
  CovParams p = prototype;
  p.sill = std::exp(std::clamp(u(0), -27.6, 27.6));
  p.range = std::exp(std::clamp(u(1), -27.6, 27.6));
  return p;
}

}  // namespace detail

// GLS estimate of the mean coefficients at a given theta:
// rho = (S^T K^-1 S)^-1 S^T K^-1 r.
inline Eigen::VectorXd gls_mean(const CovParams& theta, const FieldSample& stations,
                                const MeanBasis& basis) {
  const Eigen::MatrixXd dists = detail::distance_matrix(stations.locations);
  const Eigen::MatrixXd s = basis.design(stations.locations);
  return detail::likelihood_terms(theta, dists, s, stations.values).rho;
}

namespace detail {

inline FitResult fit_impl(const FieldSample& stations, const CovParams& prototype,
                          const MeanBasis& basis, FitMethod method, const FitOptions& opt) {
  validate(stations);
  const Eigen::Index m = stations.values.size();
  const int p = basis.dim;
  if (m < p + 3) throw invalid_input("fit: need at least dim(rho) + dim(theta) + 1 stations");
  const Eigen::MatrixXd s = basis.design(stations.locations);
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(s);
    if (qr.rank() < s.cols()) throw invalid_input("mean basis collinear");
  }
  const Eigen::MatrixXd dists = distance_matrix(stations.locations);
  const Eigen::VectorXd& r = stations.values;

  auto objective = [&](const Eigen::VectorXd& u) {
    return neg_loglik(decode_theta(prototype, u), dists, s, r, method);
  };

  // Variogram-style heuristics: sill from the residual variance, range from
  // fractions of the median pairwise distance.
  Eigen::VectorXd ols = (s.transpose() * s).ldlt().solve(s.transpose() * r);
  const Eigen::VectorXd res = r - s * ols;
  double var0 = res.squaredNorm() / std::max<double>(1.0, static_cast<double>(m - p));
  if (!(var0 > 0.0)) var0 = 1.0;
  std::vector<double> offdiag;
  offdiag.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) offdiag.push_back(dists(i, j));
  const double med_dist = std::max(quantile(offdiag, 0.5), 1e-8);

  SimplexOptions nm;
  nm.tol = opt.tol;
  nm.max_iter = opt.max_iter;
  SimplexResult best;
  best.fmin = std::numeric_limits<double>::infinity();
  int total_iter = 0;
  for (double frac : {0.25, 0.5, 1.0}) {
    Eigen::VectorXd u0(2);
    u0 << std::log(var0), std::log(frac * med_dist);
    SimplexResult run = nelder_mead(objective, u0, nm);
    total_iter += run.iterations;
    if (run.fmin < best.fmin) best = run;
  }
  // Polish with a tight small simplex around the winner.
  SimplexOptions polish;
  polish.tol = 1e-13;
  polish.max_iter = std::min(300, opt.max_iter);
  polish.initial_step = 0.02;
  SimplexResult fin = nelder_mead(objective, best.x, polish);
  total_iter += fin.iterations;
  const bool search_converged = best.converged || fin.converged;
  if (fin.fmin > best.fmin) fin = best;

  FitResult out;
  out.method = method;
  out.theta = decode_theta(prototype, fin.x);
  out.loglik = -fin.fmin;
  out.iterations = total_iter;
  LikelihoodTerms terms = likelihood_terms(out.theta, dists, s, r);
  out.mean.basis = basis;
  out.mean.rho = terms.rho;

  // Observed information by finite differences in the raw parameterization.
  const int nt = 2;
  bool spd_ok = true;
  if (method == FitMethod::ml) {
    // Joint information over (rho, theta); blocks keep the cross terms.
    Eigen::VectorXd v0(p + nt);
    v0.head(p) = terms.rho;
    v0(p) = out.theta.sill;
    v0(p + 1) = out.theta.range;
    auto joint = [&](const Eigen::VectorXd& v) {
      CovParams th = out.theta;
      th.sill = v(p);
      th.range = v(p + 1);
      if (!(th.sill > 0.0) || !(th.range > 0.0)) return 1e12;
      Eigen::LLT<Eigen::MatrixXd> llt = factor_covariance(kernel_matrix(th, dists), th.sill);
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      Eigen::VectorXd e = r - s * v.head(p);
      return 0.5 * (logdet + e.dot(llt.solve(e)) +
                    static_cast<double>(m) * std::log(2.0 * M_PI));
    };
    Eigen::MatrixXd hess = fd_hessian(joint, v0, opt.fd_step);
    Eigen::MatrixXd vcov;
    spd_ok = invert_spd(hess, vcov);
    out.vcov_mean = vcov.topLeftCorner(p, p);
    out.vcov_theta = vcov.bottomRightCorner(nt, nt);
  } else {
    // Restricted information for theta; rho variance from its GLS form, with
    // the rho-theta cross block zero (drawn independently downstream).
    Eigen::VectorXd v0(nt);
    v0 << out.theta.sill, out.theta.range;
    auto restricted = [&](const Eigen::VectorXd& v) {
      CovParams th = out.theta;
      th.sill = v(0);
      th.range = v(1);
      if (!(th.sill > 0.0) || !(th.range > 0.0)) return 1e12;
      return neg_loglik(th, dists, s, r, FitMethod::reml);
    };
    Eigen::MatrixXd hess = fd_hessian(restricted, v0, opt.fd_step);
    spd_ok = invert_spd(hess, out.vcov_theta);
    out.vcov_mean = terms.sks_inv;
  }
  out.vcov_degenerate = !spd_ok;
  if (!spd_ok) log_warning("fit: observed information singular; vcov flagged degenerate");

  Eigen::VectorXd grad = fd_gradient(
      [&](const Eigen::VectorXd& v) {
        CovParams th = out.theta;
        th.sill = v(0);
        th.range = v(1);
        if (!(th.sill > 0.0) || !(th.range > 0.0)) return 1e12;
        return neg_loglik(th, dists, s, r, method);
      },
      Eigen::VectorXd{{out.theta.sill, out.theta.range}});
  out.gradient_norm = grad.norm();
  out.converged = search_converged && out.gradient_norm < 1e-4 * (std::fabs(out.loglik) + 1.0);
  if (!out.converged) log_warning("fit: optimizer did not meet the convergence criteria");
  return out;
}

}  // namespace detail

// Gaussian maximum likelihood over (mean, theta). The prototype fixes the
// family, smoothness and nugget; sill and range are estimated.
inline FitResult fit_ml(const FieldSample& stations, const CovParams& prototype,
                        const MeanBasis& basis = MeanBasis::constant(),
                        const FitOptions& opt = {}) {
  return detail::fit_impl(stations, prototype, basis, FitMethod::ml, opt);
}

// Restricted maximum likelihood (likelihood of error contrasts) for theta,
// with rho by GLS at the optimum.
inline FitResult fit_reml(const FieldSample& stations, const CovParams& prototype,
                          const MeanBasis& basis = MeanBasis::constant(),
                          const FitOptions& opt = {}) {
  return detail::fit_impl(stations, prototype, basis, FitMethod::reml, opt);
}

}  // namespace misreg
