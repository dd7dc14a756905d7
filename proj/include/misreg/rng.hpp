#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "misreg/common.hpp"

namespace misreg {

using Rng = std::mt19937_64;

// splitmix64 step; used to derive well-separated seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for stream `stream` derived from `master`. Replications indexed by
// stream are reproducible independently of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master;
  std::uint64_t a = splitmix64(s);
  s = a ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return splitmix64(s);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Eigen::VectorXd draw_standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

// Draw from N(mean, cov) for symmetric positive semidefinite cov. Uses an
// eigendecomposition with negative eigenvalues clipped at zero, so degenerate
// covariances (including cov = 0) are handled exactly.
inline Eigen::VectorXd draw_mvn(Rng& rng, const Eigen::VectorXd& mean,
                                const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size())
    throw invalid_input("draw_mvn: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw numerical_error("draw_mvn: eigendecomposition failed");
  Eigen::VectorXd scale = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::VectorXd z = draw_standard_normal(rng, mean.size());
  return mean + eig.eigenvectors() * scale.cwiseProduct(z);
}

}  // namespace misreg
