#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misreg/common.hpp"
#include "misreg/geometry.hpp"

namespace misreg {

enum class CovKind { exponential, gaussian, matern };

inline std::string to_string(CovKind kind) {
  switch (kind) {
    case CovKind::exponential: return "exponential";
    case CovKind::gaussian: return "gaussian";
    case CovKind::matern: return "matern";
  }
  return "?";
}

inline CovKind cov_kind_from_string(const std::string& s) {
  if (s == "exponential" || s == "exp") return CovKind::exponential;
  if (s == "gaussian") return CovKind::gaussian;
  if (s == "matern") return CovKind::matern;
  throw invalid_input("unknown covariance kind: " + s);
}

// Isotropic covariance family and its parameters. The smoothness is used by
// the Matern family only and is fixed by configuration, never estimated.
struct CovParams {
  CovKind kind = CovKind::exponential;
  double sill = 1.0;        // theta1, variance units
  double range = 1.0;       // theta2, km
  double smoothness = 0.5;  // nu, Matern only
  double nugget = 0.0;      // tau^2, variance units
};

inline void validate(const CovParams& p) {
  if (!(p.sill > 0.0) || !std::isfinite(p.sill)) throw invalid_input("sill must be > 0");
  if (!(p.range > 0.0) || !std::isfinite(p.range)) throw invalid_input("range must be > 0");
  if (p.kind == CovKind::matern && !(p.smoothness > 0.0))
    throw invalid_input("matern smoothness must be > 0");
  if (!(p.nugget >= 0.0)) throw invalid_input("nugget must be >= 0");
}

// Joint coefficient phi = (beta, theta) of the minimum-distance problem.
struct Phi {
  double beta = 0.0;
  CovParams theta;
};

// Regression coefficients of the outcome equation. beta has one entry per
// interacted group (a single entry when no groups are used).
struct RegressionParams {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(0);
};

// K(d). At d == 0 the nugget enters: K(0) = sill + nugget.
inline double cov(const CovParams& p, double d) {
  if (d < 0.0 || !std::isfinite(d)) throw invalid_input("cov: distance must be >= 0");
  if (d == 0.0) return p.sill + p.nugget;
  switch (p.kind) {
    case CovKind::exponential:
      return p.sill * std::exp(-d / p.range);
    case CovKind::gaussian:
      return p.sill * std::exp(-(d * d) / (p.range * p.range));
    case CovKind::matern: {
      const double u = d / p.range;
      if (u < 1e-8) return p.sill;
      if (u > 700.0) return 0.0;  // Bessel underflow region
      const double nu = p.smoothness;
      return p.sill * std::pow(u, nu) * std::cyl_bessel_k(nu, u) /
             (std::pow(2.0, nu - 1.0) * std::tgamma(nu));
    }
  }
  return 0.0;
}

// Variogram in the full-variance convention: gamma(d) = V(R(x) - R(x+h)) =
// 2 (K(0) - K(d)). At d == 0 the right-limit convention applies, so a nugget
// contributes 2 tau^2. Halve for the conventional semivariance.
inline double variogram(const CovParams& p, double d) {
  if (d < 0.0 || !std::isfinite(d)) throw invalid_input("variogram: distance must be >= 0");
  if (d == 0.0) return 2.0 * p.nugget;
  return 2.0 * (p.sill + p.nugget - cov(p, d));
}

// Cross covariogram V(R(x) - Y(x+h)) implied by the outcome equation with
// the regression-error contribution excluded:
// (1 + beta^2) K(0) - 2 beta K(d).
inline double cross_covariogram(const Phi& phi, double d) {
  if (d < 0.0 || !std::isfinite(d)) throw invalid_input("cross_covariogram: distance must be >= 0");
  const double k0 = cov(phi.theta, 0.0);
  return (1.0 + phi.beta * phi.beta) * k0 - 2.0 * phi.beta * cov(phi.theta, d);
}

// Covariance matrix K(A_i, B_j). Symmetric when A and B are the same object.
inline Eigen::MatrixXd cov_matrix(const CovParams& p, const std::vector<Location>& locs_a,
                                  const std::vector<Location>& locs_b) {
  if (locs_a.empty() || locs_b.empty()) throw invalid_input("cov_matrix: empty location list");
  validate(p);
  const Eigen::Index na = static_cast<Eigen::Index>(locs_a.size());
  const Eigen::Index nb = static_cast<Eigen::Index>(locs_b.size());
  Eigen::MatrixXd k(na, nb);
  if (&locs_a == &locs_b) {
    for (Eigen::Index i = 0; i < na; ++i) {
      k(i, i) = cov(p, 0.0);
      for (Eigen::Index j = i + 1; j < nb; ++j) {
        const double v = cov(p, distance(locs_a[i], locs_b[j]));
        k(i, j) = v;
        k(j, i) = v;
      }
    }
    return k;
  }
  for (Eigen::Index i = 0; i < na; ++i)
    for (Eigen::Index j = 0; j < nb; ++j) k(i, j) = cov(p, distance(locs_a[i], locs_b[j]));
  return k;
}

inline Eigen::MatrixXd cov_matrix(const CovParams& p, const std::vector<Location>& locs) {
  return cov_matrix(p, locs, locs);
}

// Cholesky with a one-shot diagonal jitter retry (1e-8 * sill), for
// coincident or near-coincident locations.
inline Eigen::LLT<Eigen::MatrixXd> factor_covariance(Eigen::MatrixXd k, double sill) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  k.diagonal().array() += 1e-8 * sill;
  llt.compute(k);
  if (llt.info() != Eigen::Success) throw numerical_error("covariance not positive definite");
  return llt;
}

}  // namespace misreg
