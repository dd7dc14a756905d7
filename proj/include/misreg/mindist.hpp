#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "misreg/covmodel.hpp"
#include "misreg/dataset.hpp"
#include "misreg/empvario.hpp"
#include "misreg/fieldsim.hpp"
#include "misreg/optim.hpp"
#include "misreg/rng.hpp"

namespace misreg {

enum class MomentKind { self_variogram, cross };
enum class Regime { pure, mixed };

inline std::string to_string(Regime r) { return r == Regime::pure ? "pure" : "mixed"; }

// One entry of the moment vector: which statistic, at which lag, and the
// representative lag vector used by the asymptotic covariance.
struct MomentSpec {
  LagSpec lag;
  MomentKind kind = MomentKind::self_variogram;
  CrossFlavor flavor = CrossFlavor::centered_product;  // cross entries only
  Eigen::Vector2d lag_vec = Eigen::Vector2d::Zero();
  double eval_dist = 0.0;  // distance the model side is evaluated at
  std::size_t count = 0;
};

inline Eigen::Vector2d lag_vector(const LagSpec& lag) {
  if (lag.mode == LagMode::directional)
    return Eigen::Vector2d(lag.r * std::cos(lag.angle), lag.r * std::sin(lag.angle));
  return Eigen::Vector2d(lag.r, 0.0);
}

// Sampling-design summary entering the Theorem-style covariance: region area,
// the integral of the squared location density, and the number of locations.
struct DomainInfo {
  double area = 1.0;
  double f_sq_integral = 1.0;  // integral of f^2 over the region (1/area if uniform)
  std::size_t n = 0;

  // Histogram plug-in over the bounding box, padded by half the median
  // nearest-neighbour spacing so each point represents a cell.
  static DomainInfo from_locations(const std::vector<Location>& locs, int cells = 10,
                                   bool uniform = false) {
    if (locs.empty()) throw invalid_input("DomainInfo: no locations");
    double xmin = locs[0].x, xmax = locs[0].x, ymin = locs[0].y, ymax = locs[0].y;
    for (const auto& p : locs) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    std::vector<double> nn(locs.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < locs.size(); ++i)
      for (std::size_t j = 0; j < locs.size(); ++j)
        if (i != j) nn[i] = std::min(nn[i], distance(locs[i], locs[j]));
    double pad = locs.size() > 1 ? 0.5 * quantile(nn, 0.5) : 0.5;
    if (!std::isfinite(pad) || pad <= 0.0) pad = 0.5;
    xmin -= pad; xmax += pad; ymin -= pad; ymax += pad;
    DomainInfo info;
    info.n = locs.size();
    info.area = (xmax - xmin) * (ymax - ymin);
    if (uniform) {
      info.f_sq_integral = 1.0 / info.area;
      return info;
    }
    const int c = std::max(cells, 1);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(c, c);
    for (const auto& p : locs) {
      int ix = std::min(c - 1, static_cast<int>((p.x - xmin) / (xmax - xmin) * c));
      int iy = std::min(c - 1, static_cast<int>((p.y - ymin) / (ymax - ymin) * c));
      counts(ix, iy) += 1.0;
    }
    const double cell_area = info.area / static_cast<double>(c * c);
    const double ntot = static_cast<double>(locs.size());
    double acc = 0.0;
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        const double p = counts(i, j) / ntot;
        acc += p * p / cell_area;
      }
    info.f_sq_integral = acc;
    return info;
  }
};

// Positive-definite weighting matrix of the quadratic-form objective.
struct WeightMatrix {
  enum class Source { identity, diagonal, efficient_plugin, synthetic_empirical };
  Eigen::MatrixXd m;
  Source source = Source::identity;

  static WeightMatrix identity(Eigen::Index k) {
    WeightMatrix w;
    w.m = Eigen::MatrixXd::Identity(k, k);
    return w;
  }

  static WeightMatrix from_matrix(Eigen::MatrixXd mat, Source source) {
    if (mat.rows() != mat.cols()) throw invalid_input("weight matrix must be square");
    WeightMatrix w;
    w.m = 0.5 * (mat + mat.transpose());
    w.source = source;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.m);
    if (eig.eigenvalues().minCoeff() <= 0.0)
      throw numerical_error("weight matrix not positive definite");
    return w;
  }
};

// Empirical moments cached once; the model side is evaluated at any phi.
// g(phi) = empirical - model(phi), stacked cross entries first.
class MomentBuilder {
 public:
  static MomentBuilder from_dataset(const MisalignedDataset& data, const MeanModel& r_mean,
                                    const std::vector<LagSpec>& lags_self,
                                    const std::vector<LagSpec>& lags_cross, CrossFlavor flavor,
                                    std::size_t min_pairs = 30) {
    validate(data);
    MomentBuilder b;
    b.flavor_ = flavor;
    b.r_mean_sta_ = r_mean.values(data.station_locs);
    b.station_locs_ = data.station_locs;
    b.outcome_locs_ = data.outcome_locs;
    // Outcomes are residualized on the controls (which include the
    // intercept), so the cross statistics see y purged of F gamma.
    b.controls_ = data.controls;
    b.proj_solver_ = (data.controls.transpose() * data.controls).ldlt();

    const auto cross_bins = bin_pairs(b.station_locs_, b.outcome_locs_, lags_cross);
    const auto self_bins = bin_pairs(b.station_locs_, lags_self);
    const std::size_t floor = std::max<std::size_t>(min_pairs, 1);
    for (const auto& bin : cross_bins) {
      if (bin.count < floor) {
        log_warning("cross lag r=" + std::to_string(bin.lag.r) + " dropped (" +
                    std::to_string(bin.count) + " pairs)");
        continue;
      }
      MomentSpec spec;
      spec.lag = bin.lag;
      spec.kind = MomentKind::cross;
      spec.flavor = flavor;
      spec.lag_vec = lag_vector(bin.lag);
      spec.count = bin.count;
      b.specs_.push_back(spec);
      b.bins_.push_back(bin);
    }
    b.n_cross_ = b.specs_.size();
    for (const auto& bin : self_bins) {
      if (bin.count < floor) {
        log_warning("self lag r=" + std::to_string(bin.lag.r) + " dropped (" +
                    std::to_string(bin.count) + " pairs)");
        continue;
      }
      MomentSpec spec;
      spec.lag = bin.lag;
      spec.kind = MomentKind::self_variogram;
      spec.lag_vec = lag_vector(bin.lag);
      spec.count = bin.count;
      b.specs_.push_back(spec);
      b.bins_.push_back(bin);
    }
    const std::size_t n_self = b.specs_.size() - b.n_cross_;
    if (b.n_cross_ < 1 || n_self < 2 || b.specs_.size() < 3)
      throw invalid_input("under-identified: need >= 1 cross and >= dim(theta) self moments");

    b.empirical_ = b.evaluate_empirical(data.r_star, data.y);
    // The model is evaluated at the realized mean pair separation of each bin.
    for (std::size_t k = 0; k < b.specs_.size(); ++k) {
      double dist_sum = 0.0;
      const bool cross = b.specs_[k].kind == MomentKind::cross;
      for (const auto& [i, j] : b.bins_[k].pairs) {
        const auto& a = b.station_locs_[static_cast<std::size_t>(i)];
        const auto& c = cross ? b.outcome_locs_[static_cast<std::size_t>(j)]
                              : b.station_locs_[static_cast<std::size_t>(j)];
        dist_sum += distance(a, c);
      }
      b.specs_[k].eval_dist = dist_sum / static_cast<double>(b.specs_[k].count);
      b.specs_[k].lag_vec = lag_vector(b.specs_[k].lag).normalized() * b.specs_[k].eval_dist;
      if (b.specs_[k].eval_dist == 0.0) b.specs_[k].lag_vec.setZero();
    }
    return b;
  }

  // Builder with externally supplied empirical moments (exact-moment
  // constructions and tests).
  static MomentBuilder from_specs(std::vector<MomentSpec> specs, Eigen::VectorXd empirical) {
    if (specs.size() != static_cast<std::size_t>(empirical.size()))
      throw invalid_input("moment specs and values differ in length");
    MomentBuilder b;
    b.specs_ = std::move(specs);
    b.empirical_ = std::move(empirical);
    for (auto& spec : b.specs_) {
      if (spec.eval_dist == 0.0) spec.eval_dist = spec.lag.r;
      if (spec.lag_vec.isZero()) spec.lag_vec = lag_vector(spec.lag);
      if (spec.kind == MomentKind::cross) ++b.n_cross_;
    }
    return b;
  }

  // Recomputes the empirical moment vector for new field values on the same
  // locations and bins (used by the synthetic weighting matrix).
  Eigen::VectorXd evaluate_empirical(const Eigen::VectorXd& r_star,
                                     const Eigen::VectorXd& y) const {
    if (bins_.empty()) throw invalid_input("moment builder holds no data bins");
    Eigen::VectorXd res_r = r_star - r_mean_sta_;
    if (r_mean_constant_refit_) res_r.array() -= res_r.mean();
    Eigen::VectorXd res_y = y - controls_ * proj_solver_.solve(controls_.transpose() * y);
    Eigen::VectorXd out(static_cast<Eigen::Index>(specs_.size()));
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      const auto& bin = bins_[k];
      double sum = 0.0;
      if (specs_[k].kind == MomentKind::self_variogram) {
        for (const auto& [i, j] : bin.pairs) {
          const double d = res_r(i) - res_r(j);
          sum += d * d;
        }
      } else if (specs_[k].flavor == CrossFlavor::squared_difference) {
        for (const auto& [i, j] : bin.pairs) {
          const double d = res_r(i) - res_y(j);
          sum += d * d;
        }
      } else {
        for (const auto& [i, j] : bin.pairs) sum += res_r(i) * res_y(j);
      }
      out(static_cast<Eigen::Index>(k)) = sum / static_cast<double>(bin.count);
    }
    return out;
  }

  Eigen::VectorXd model(const Phi& phi) const {
    Eigen::VectorXd out(size());
    for (Eigen::Index k = 0; k < size(); ++k) {
      const auto& spec = specs_[static_cast<std::size_t>(k)];
      if (spec.kind == MomentKind::self_variogram) {
        out(k) = variogram(phi.theta, spec.eval_dist);
      } else if (spec.flavor == CrossFlavor::squared_difference) {
        out(k) = cross_covariogram(phi, spec.eval_dist);
      } else {
        out(k) = phi.beta * cov(phi.theta, spec.eval_dist);
      }
    }
    return out;
  }

  Eigen::VectorXd g(const Phi& phi) const { return empirical_ - model(phi); }

  double objective(const Phi& phi, const Eigen::MatrixXd& b) const {
    const Eigen::VectorXd gv = g(phi);
    return gv.dot(b * gv);
  }

  const std::vector<MomentSpec>& specs() const { return specs_; }
  const Eigen::VectorXd& empirical() const { return empirical_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(specs_.size()); }
  std::size_t n_cross() const { return n_cross_; }
  void set_refit_constant_mean(bool refit) { r_mean_constant_refit_ = refit; }

 private:
  std::vector<MomentSpec> specs_;
  std::vector<PairBin> bins_;
  Eigen::VectorXd empirical_;
  std::size_t n_cross_ = 0;
  CrossFlavor flavor_ = CrossFlavor::centered_product;
  std::vector<Location> station_locs_, outcome_locs_;
  Eigen::VectorXd r_mean_sta_;
  Eigen::MatrixXd controls_;
  Eigen::LDLT<Eigen::MatrixXd> proj_solver_;
  bool r_mean_constant_refit_ = false;
};

// Directional variograms at shared distances, all matched against the single
// isotropic model value. p_angles = 1 reduces to plain isotropic bins.
inline MomentBuilder isotropic_moments(const MisalignedDataset& data, const MeanModel& r_mean,
                                       const std::vector<double>& cross_distances,
                                       const std::vector<double>& self_distances, int p_angles,
                                       double r_tol, CrossFlavor flavor,
                                       std::size_t min_pairs = 30) {
  if (p_angles < 1) throw invalid_input("isotropic_moments: p_angles must be >= 1");
  auto make = [&](const std::vector<double>& rs) {
    std::vector<LagSpec> lags;
    for (double r : rs) {
      if (p_angles == 1) {
        lags.push_back(isotropic_lag(r, r_tol));
        continue;
      }
      const double tol = M_PI / (2.0 * p_angles);
      for (int q = 0; q < p_angles; ++q)
        lags.push_back(directional_lag(r, r_tol, (2.0 * q + 1.0) * tol, tol));
    }
    return lags;
  };
  return MomentBuilder::from_dataset(data, r_mean, make(self_distances), make(cross_distances),
                                     flavor, min_pairs);
}

struct MdOptions {
  double tol = 1e-12;
  int max_iter = 600;
  Regime regime = Regime::mixed;
  // Soft support bounds of Phi; callers narrow these to the scales the data
  // can resolve (a vanishing range makes beta unidentified, so unbounded
  // searches can wander onto that ridge).
  double sill_lo = 1e-8, sill_hi = 1e8;
  double range_lo = 1e-8, range_hi = 1e8;
  double beta_abs_max = 1e6;
};

// Joint minimum-distance estimate with its large-sample covariance pieces.
struct MdResult {
  Phi phi;
  double objective = 0.0;
  bool converged = false;
  bool identification_warning = false;
  int iterations = 0;
  Regime regime = Regime::mixed;
  double rate2 = 1.0;          // sigma_g = rate2 * Var(g_n)
  Eigen::MatrixXd sigma_g;     // normalized moment covariance estimate
  Eigen::MatrixXd vcov;        // covariance of (beta, sill, range)
  Eigen::VectorXd se;          // sqrt of the vcov diagonal
};

namespace detail {

inline Eigen::VectorXd encode_phi(const Phi& phi) {
  Eigen::VectorXd x(3);
  x << phi.beta, std::log(phi.theta.sill), std::log(phi.theta.range);
  return x;
}

inline Phi decode_phi(const CovParams& prototype, const Eigen::VectorXd& x) {
  Phi phi;
  phi.beta = x(0);
  phi.theta = prototype;
  phi.theta.sill = std::exp(std::clamp(x(1), -27.6, 27.6));
  phi.theta.range = std::exp(std::clamp(x(2), -27.6, 27.6));
  return phi;
}

}  // namespace detail

// argmin over phi of g(phi)^T B g(phi), multi-start simplex over
// (beta, log sill, log range). Multi-start disagreement at equal objective
// values raises the identification warning.
inline MdResult estimate(const MomentBuilder& moments, const WeightMatrix& weight,
                         const Phi& start, const MdOptions& opt = {}) {
  validate(start.theta);
  if (weight.m.rows() != moments.size())
    throw invalid_input("weight matrix size does not match the moment vector");
  const double obj_scale = 1.0 + moments.objective(start, weight.m);
  auto penalty = [&](const Eigen::VectorXd& x) {
    auto outside = [](double v, double lo, double hi) {
      if (v < lo) return lo - v;
      if (v > hi) return v - hi;
      return 0.0;
    };
    const double o = outside(std::fabs(x(0)), 0.0, opt.beta_abs_max) +
                     outside(x(1), std::log(opt.sill_lo), std::log(opt.sill_hi)) +
                     outside(x(2), std::log(opt.range_lo), std::log(opt.range_hi));
    return 100.0 * obj_scale * o * o;
  };
  auto objective = [&](const Eigen::VectorXd& x) {
    return moments.objective(detail::decode_phi(start.theta, x), weight.m) + penalty(x);
  };

  SimplexOptions nm;
  nm.tol = opt.tol;
  nm.max_iter = opt.max_iter;
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(detail::encode_phi(start));
  {
    Eigen::VectorXd s2 = starts[0], s3 = starts[0];
    s2(1) += std::log(2.0);
    s2(2) -= std::log(2.0);
    s3(1) -= std::log(2.0);
    s3(2) += std::log(2.0);
    starts.push_back(s2);
    starts.push_back(s3);
  }
  std::vector<SimplexResult> runs;
  int total_iter = 0;
  for (const auto& s : starts) {
    SimplexResult run = nelder_mead(objective, s, nm);
    total_iter += run.iterations;
    runs.push_back(run);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].fmin < runs[best].fmin) best = i;

  // Polish the winner with a tight simplex.
  SimplexOptions polish;
  polish.tol = 0.0;
  polish.max_iter = 400;
  polish.initial_step = 0.05;
  SimplexResult fin = nelder_mead(objective, runs[best].x, polish);
  total_iter += fin.iterations;
  if (fin.fmin > runs[best].fmin) fin = runs[best];

  MdResult out;
  out.phi = detail::decode_phi(start.theta, fin.x);
  out.objective = moments.objective(out.phi, weight.m);
  out.converged = runs[best].converged || fin.converged;
  out.iterations = total_iter;
  out.regime = opt.regime;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i == best) continue;
    const bool same_value =
        std::fabs(runs[i].fmin - fin.fmin) <= 1e-6 * (std::fabs(fin.fmin) + 1e-12);
    const bool same_point = (runs[i].x - fin.x).cwiseAbs().maxCoeff() < 1e-2;
    if (same_value && !same_point) out.identification_warning = true;
  }
  if (out.identification_warning)
    log_warning("mindist: possible non-identification (multi-start disagreement)");
  if (!out.converged) log_warning("mindist: optimizer did not converge");
  return out;
}

struct QuadratureOptions {
  int radial_nodes = 64;
  int angle_nodes = 32;
  double radius_factor = 20.0;  // truncation radius in units of the range
  double tail_rel_tol = 1e-6;
};

namespace detail {

// Gauss-Legendre nodes/weights on [-1, 1], by Newton iteration on the
// Legendre recurrence. Cached per order.
inline const std::pair<std::vector<double>, std::vector<double>>& legendre_rule(int n) {
  static std::map<int, std::pair<std::vector<double>, std::vector<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double step = p1 / dp;
      t -= step;
      if (std::fabs(step) < 1e-15) break;
    }
    x[i] = t;
    w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
  return cache.emplace(n, std::make_pair(std::move(x), std::move(w))).first->second;
}

// Closed-form autocovariances of the moment statistics for a Gaussian field,
// via Isserlis' pairing identities. The Y side carries beta epsilon + e with
// white-noise e of variance sigma_eps2; e terms enter only coincident
// diagonal evaluations.
struct SigmaContext {
  Phi phi;
  double sigma_eps2 = 0.0;

  double cv(const Eigen::Vector2d& u) const { return cov(phi.theta, u.norm()); }

  // Continuous part sigma_ab(x); the white-noise ridge is excluded here.
  double at(const MomentSpec& a, const MomentSpec& b, const Eigen::Vector2d& x) const {
    const Eigen::Vector2d& ha = a.lag_vec;
    const Eigen::Vector2d& hb = b.lag_vec;
    const double beta = phi.beta;
    const bool a_self = a.kind == MomentKind::self_variogram;
    const bool b_self = b.kind == MomentKind::self_variogram;
    if (a_self && b_self) {
      const double c = cv(x) - cv(x + hb) - cv(x - ha) + cv(x - ha + hb);
      return 2.0 * c * c;
    }
    if (!a_self && !b_self) {
      if (a.flavor == CrossFlavor::centered_product) {
        return beta * beta *
               (cv(x) * cv(x + hb - ha) + cv(x + hb) * cv(x - ha));
      }
      const double c = cv(x) - beta * cv(x + hb) - beta * cv(x - ha) +
                       beta * beta * cv(x + hb - ha);
      return 2.0 * c * c;
    }
    // Mixed self/cross; orient so that `a` is the self entry.
    const MomentSpec& sv = a_self ? a : b;
    const MomentSpec& cr = a_self ? b : a;
    const Eigen::Vector2d z = a_self ? x : Eigen::Vector2d(-x);
    const Eigen::Vector2d& hs = sv.lag_vec;
    const Eigen::Vector2d& hc = cr.lag_vec;
    if (cr.flavor == CrossFlavor::centered_product) {
      return 2.0 * beta * (cv(z) - cv(z - hs)) * (cv(z + hc) - cv(z + hc - hs));
    }
    const double c = cv(z) - beta * cv(z + hc) - cv(z - hs) + beta * cv(z + hc - hs);
    return 2.0 * c * c;
  }

  // sigma_ab(0) including the shared white-noise contribution when both
  // entries are the same cross moment.
  double at_zero(const MomentSpec& a, const MomentSpec& b, bool same_entry) const {
    const Eigen::Vector2d& ha = a.lag_vec;
    const Eigen::Vector2d& hb = b.lag_vec;
    const double beta = phi.beta;
    const bool a_self = a.kind == MomentKind::self_variogram;
    const bool b_self = b.kind == MomentKind::self_variogram;
    const Eigen::Vector2d zero = Eigen::Vector2d::Zero();
    if (a_self || b_self) return at(a, b, zero);
    if (a.flavor == CrossFlavor::centered_product) {
      double v = beta * beta * (cv(zero) * cv(hb - ha) + cv(hb) * cv(ha));
      if (same_entry) v += cv(zero) * sigma_eps2;
      return v;
    }
    double c = cv(zero) - beta * cv(hb) - beta * cv(ha) + beta * beta * cv(hb - ha);
    if (same_entry) c += sigma_eps2;
    return 2.0 * c * c;
  }
};

inline double integrate_sigma(const SigmaContext& ctx, const MomentSpec& a, const MomentSpec& b,
                              const QuadratureOptions& quad, double* tail_out) {
  const double max_lag = std::max(a.lag_vec.norm(), b.lag_vec.norm());
  const double rmax = quad.radius_factor * ctx.phi.theta.range + 2.0 * max_lag;
  const auto& [xs, ws] = legendre_rule(quad.radial_nodes);
  const double da = 2.0 * M_PI / quad.angle_nodes;
  double total = 0.0;
  for (int i = 0; i < quad.radial_nodes; ++i) {
    const double r = 0.5 * rmax * (xs[i] + 1.0);
    const double wr = 0.5 * rmax * ws[i];
    double ring = 0.0;
    for (int j = 0; j < quad.angle_nodes; ++j) {
      const double ang = da * j;
      ring += ctx.at(a, b, Eigen::Vector2d(r * std::cos(ang), r * std::sin(ang)));
    }
    total += wr * ring * da * r;
  }
  double tail = 0.0;
  for (int j = 0; j < quad.angle_nodes; ++j) {
    const double ang = da * j;
    tail = std::max(tail,
                    std::fabs(ctx.at(a, b, Eigen::Vector2d(rmax * std::cos(ang),
                                                           rmax * std::sin(ang)))));
  }
  // Decay-scale bound on the neglected mass outside the truncation radius.
  tail *= 2.0 * M_PI * rmax * std::max(ctx.phi.theta.range, 1e-12);
  if (tail_out != nullptr) *tail_out = tail;
  return total;
}

}  // namespace detail

inline double rate2(const DomainInfo& info, Regime regime) {
  return regime == Regime::pure ? static_cast<double>(info.n) : info.area;
}

// Feasible covariance of the empirical moment vector g_n: the coincident
// term weighted by pair counts plus the spatial integral scaled by the
// squared-density integral. Mixed-domain asymptotics drop the coincident
// term.
inline Eigen::MatrixXd moment_covariance(const Phi& phi, double sigma_eps2,
                                         const std::vector<MomentSpec>& specs,
                                         const DomainInfo& info, Regime regime,
                                         const QuadratureOptions& quad = {}) {
  validate(phi.theta);
  detail::SigmaContext ctx{phi, sigma_eps2};
  const Eigen::Index k = static_cast<Eigen::Index>(specs.size());
  Eigen::MatrixXd v(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      double tail = 0.0;
      const double integral = detail::integrate_sigma(ctx, specs[i], specs[j], quad, &tail);
      if (i == j && tail > quad.tail_rel_tol * (std::fabs(integral) + 1e-12))
        throw numerical_error("sigma_g quadrature did not converge (tail " +
                              std::to_string(tail) + " vs integral " + std::to_string(integral) +
                              "); increase the truncation radius");
      double entry = info.f_sq_integral * integral;
      if (regime == Regime::pure) {
        const double ni = specs[i].count > 0 ? static_cast<double>(specs[i].count)
                                             : static_cast<double>(info.n);
        const double nj = specs[j].count > 0 ? static_cast<double>(specs[j].count)
                                             : static_cast<double>(info.n);
        entry += ctx.at_zero(specs[i], specs[j], i == j) * std::min(ni, nj) / (ni * nj);
      }
      v(i, j) = entry;
      v(j, i) = entry;
    }
  }
  return v;
}

// Normalized moment covariance for a vector of self-variogram lags
// (sigma_g = rate^2 * Var(g_n) in the selected regime).
inline Eigen::MatrixXd sigma_g(const CovParams& theta, const std::vector<LagSpec>& lags,
                               const DomainInfo& info, Regime regime = Regime::pure,
                               const QuadratureOptions& quad = {}) {
  std::vector<MomentSpec> specs;
  for (const auto& lag : lags) {
    MomentSpec spec;
    spec.lag = lag;
    spec.kind = MomentKind::self_variogram;
    spec.lag_vec = lag_vector(lag);
    spec.eval_dist = lag.r;
    spec.count = info.n;
    specs.push_back(spec);
  }
  Phi phi;
  phi.beta = 0.0;
  phi.theta = theta;
  return rate2(info, regime) * moment_covariance(phi, 0.0, specs, info, regime, quad);
}

// K x 3 Jacobian of the model moments at phi over (beta, sill, range),
// central finite differences.
inline Eigen::MatrixXd moment_jacobian(const MomentBuilder& moments, const Phi& phi,
                                       double rel_step = 1e-5) {
  Eigen::VectorXd x(3);
  x << phi.beta, phi.theta.sill, phi.theta.range;
  Eigen::MatrixXd jac(moments.size(), 3);
  for (int c = 0; c < 3; ++c) {
    const double h = rel_step * std::max(std::fabs(x(c)), 1e-3);
    Eigen::VectorXd xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    Phi pp = phi, pm = phi;
    pp.beta = xp(0); pp.theta.sill = xp(1); pp.theta.range = xp(2);
    pm.beta = xm(0); pm.theta.sill = xm(1); pm.theta.range = xm(2);
    jac.col(c) = (moments.model(pp) - moments.model(pm)) / (2.0 * h);
  }
  return jac;
}

// Sandwich covariance A Gamma^T B V B Gamma A with A = (Gamma^T B Gamma)^-1,
// where V is the feasible covariance of g_n.
inline Eigen::MatrixXd vcov_sandwich(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& b,
                                     const Eigen::MatrixXd& var_g) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gamma);
  if (qr.rank() < gamma.cols())
    throw numerical_error("moments uninformative for some parameter (Jacobian rank deficient)");
  Eigen::MatrixXd gtb = gamma.transpose() * b;
  Eigen::MatrixXd a;
  invert_spd(gtb * gamma, a);
  return a * gtb * var_g * b * gamma * a;
}

// Fills the inference fields of an MdResult: Jacobian at the optimum,
// feasible moment covariance, sandwich vcov and standard errors.
inline void add_inference(MdResult& result, const MomentBuilder& moments,
                          const WeightMatrix& weight, const DomainInfo& info, double sigma_eps2,
                          const QuadratureOptions& quad = {}) {
  Eigen::MatrixXd jac = moment_jacobian(moments, result.phi);
  Eigen::MatrixXd var_g =
      moment_covariance(result.phi, sigma_eps2, moments.specs(), info, result.regime, quad);
  result.vcov = vcov_sandwich(jac, weight.m, var_g);
  result.rate2 = rate2(info, result.regime);
  result.sigma_g = result.rate2 * var_g;
  result.se = result.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

enum class WeightMode { plugin, synthetic };

struct WeightConfig {
  WeightMode mode = WeightMode::plugin;
  int n_synth = 200;
  std::uint64_t seed = 0;
  double sigma_eps2 = 0.0;     // iid stand-in for the regression error variance
  Eigen::VectorXd gamma;       // control coefficients of the synthetic outcomes
  Regime regime = Regime::mixed;
  QuadratureOptions quad;
};

namespace detail {

inline WeightMatrix invert_moment_covariance(Eigen::MatrixXd v, WeightMatrix::Source source) {
  const Eigen::Index k = v.rows();
  const double ridge = 1e-8 * v.trace() / static_cast<double>(k);
  v.diagonal().array() += ridge;
  // Neighbouring lag bins produce strongly correlated moments, and the
  // closed-form covariance is assembled entrywise from quadrature, so the
  // matrix can be badly conditioned or slightly indefinite. Flooring the
  // spectrum caps the weight put on near-null directions, which carry almost
  // no signal but would otherwise dominate the objective.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) {
    log_warning("moment covariance degenerate; using diagonal weights");
    Eigen::VectorXd d = v.diagonal().cwiseMax(1e-12);
    WeightMatrix w;
    w.m = d.cwiseInverse().asDiagonal();
    w.source = WeightMatrix::Source::diagonal;
    return w;
  }
  Eigen::VectorXd inv_vals = eig.eigenvalues().cwiseMax(1e-4 * lmax).cwiseInverse();
  WeightMatrix w;
  w.m = eig.eigenvectors() * inv_vals.asDiagonal() * eig.eigenvectors().transpose();
  w.source = source;
  return w;
}

}  // namespace detail

// Efficient weighting matrix B = Var(g_n)^-1 evaluated at preliminary
// estimates. Plugin mode inverts the closed-form covariance; synthetic mode
// inverts the empirical covariance of moment vectors over datasets simulated
// at the observed locations.
inline WeightMatrix efficient_weight(const MomentBuilder& moments, const MisalignedDataset& data,
                                     const MeanModel& r_mean, const Phi& at,
                                     const DomainInfo& info, const WeightConfig& cfg) {
  validate(at.theta);
  if (cfg.mode == WeightMode::plugin) {
    Eigen::MatrixXd v =
        moment_covariance(at, cfg.sigma_eps2, moments.specs(), info, cfg.regime, cfg.quad);
    return detail::invert_moment_covariance(std::move(v), WeightMatrix::Source::efficient_plugin);
  }
  if (cfg.n_synth < 8) throw invalid_input("efficient_weight: n_synth too small");
  // One factorization serves every synthetic draw.
  std::vector<Location> all = data.outcome_locs;
  all.insert(all.end(), data.station_locs.begin(), data.station_locs.end());
  const detail::UniqueIndex uniq = detail::UniqueIndex::build(all);
  Eigen::MatrixXd k = cov_matrix(at.theta, uniq.unique);
  Eigen::LLT<Eigen::MatrixXd> llt = factor_covariance(std::move(k), at.theta.sill);
  Eigen::VectorXd mean_unique = r_mean.values(uniq.unique);
  const Eigen::Index n = data.n_outcomes();
  const Eigen::Index m = data.n_stations();
  Eigen::VectorXd f_gamma = Eigen::VectorXd::Zero(n);
  if (cfg.gamma.size() > 0) {
    if (cfg.gamma.size() != data.controls.cols())
      throw invalid_input("efficient_weight: gamma length does not match controls");
    f_gamma = data.controls * cfg.gamma;
  }
  Rng rng = make_rng(cfg.seed);
  const double sd_eps = std::sqrt(std::max(cfg.sigma_eps2, 0.0));
  Eigen::MatrixXd samples(cfg.n_synth, moments.size());
  for (int s = 0; s < cfg.n_synth; ++s) {
    Eigen::VectorXd z = draw_standard_normal(rng, static_cast<Eigen::Index>(uniq.unique.size()));
    Eigen::VectorXd vals = mean_unique + llt.matrixL() * z;
    Eigen::VectorXd r_all(n + m);
    for (Eigen::Index i = 0; i < n + m; ++i) r_all(i) = vals(uniq.map[static_cast<std::size_t>(i)]);
    Eigen::VectorXd y = at.beta * r_all.head(n) + f_gamma;
    if (sd_eps > 0.0) y += sd_eps * draw_standard_normal(rng, n);
    samples.row(s) = moments.evaluate_empirical(r_all.tail(m), y).transpose();
  }
  Eigen::RowVectorXd mean = samples.colwise().mean();
  Eigen::MatrixXd centered = samples.rowwise() - mean;
  Eigen::MatrixXd v = centered.transpose() * centered / static_cast<double>(cfg.n_synth - 1);
  return detail::invert_moment_covariance(std::move(v), WeightMatrix::Source::synthetic_empirical);
}

}  // namespace misreg
