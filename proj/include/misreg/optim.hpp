#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "misreg/common.hpp"

namespace misreg {

struct SimplexResult {
  Eigen::VectorXd x;
  double fmin = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SimplexOptions {
  double tol = 1e-8;          // convergence tolerance on the objective spread
  int max_iter = 500;         // Nelder-Mead iterations
  double initial_step = 0.5;  // simplex edge length per coordinate
};

// Derivative-free Nelder-Mead simplex minimization. The objective must be
// finite wherever it is evaluated (callers transform constrained parameters
// to an unconstrained scale).
inline SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x0, const SimplexOptions& opt = {}) {
  const int n = static_cast<int>(x0.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 0; i < n; ++i) xs[i + 1](i) += opt.initial_step;
  for (int i = 0; i <= n; ++i) fs[i] = f(xs[i]);

  std::vector<int> order(n + 1);
  SimplexResult result;
  int iter = 0;
  for (; iter < opt.max_iter; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];

    if (std::fabs(fs[worst] - fs[best]) <= opt.tol * (std::fabs(fs[best]) + opt.tol)) {
      result.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= static_cast<double>(n);

    Eigen::VectorXd xr = centroid + alpha * (centroid - xs[worst]);
    const double fr = f(xr);
    if (fr < fs[best]) {
      Eigen::VectorXd xe = centroid + gamma * (centroid - xs[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      Eigen::VectorXd xc = centroid + rho * (xs[worst] - centroid);
      const double fc = f(xc);
      if (fc < fs[worst]) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[i] = xs[best] + sigma * (xs[i] - xs[best]);
          fs[i] = f(xs[i]);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  result.x = xs[best];
  result.fmin = fs[best];
  result.iterations = iter;
  return result;
}

// Central finite-difference gradient with per-coordinate relative steps.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double rel_step = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(std::fabs(x(i)), 1.0);
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Central finite-difference Hessian with per-coordinate relative steps.
inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& x, double rel_step = 1e-4) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h(i) = rel_step * std::max(std::fabs(x(i)), 1e-8);
  Eigen::MatrixXd hess(n, n);
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      if (i == j) {
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h(i);
        xm(i) -= h(i);
        hess(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h(i) * h(i));
      } else {
        Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
        xpp(i) += h(i); xpp(j) += h(j);
        xpm(i) += h(i); xpm(j) -= h(j);
        xmp(i) -= h(i); xmp(j) += h(j);
        xmm(i) -= h(i); xmm(j) -= h(j);
        hess(i, j) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h(i) * h(j));
        hess(j, i) = hess(i, j);
      }
    }
  }
  return hess;
}

// Inverse of a symmetric matrix with a pseudo-inverse fallback. Returns
// whether the matrix was (numerically) positive definite.
inline bool invert_spd(const Eigen::MatrixXd& m, Eigen::MatrixXd& out) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) {
    out = llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
    return true;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const double cutoff = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd inv_vals = eig.eigenvalues();
  for (Eigen::Index i = 0; i < inv_vals.size(); ++i)
    inv_vals(i) = inv_vals(i) > cutoff ? 1.0 / inv_vals(i) : 0.0;
  out = eig.eigenvectors() * inv_vals.asDiagonal() * eig.eigenvectors().transpose();
  return false;
}

}  // namespace misreg
