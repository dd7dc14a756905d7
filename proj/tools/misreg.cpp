// misreg: batch command-line front end for regression with spatially
// misaligned data. Subcommands: simulate, fit, krig, krig-regress, mindist,
// abc, experiment. Logs go to stderr, data to files under --out.
// Exit codes: 0 success, 1 user error, 2 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "misreg/misreg.hpp"

namespace fs = std::filesystem;
using namespace misreg;

namespace {

struct CommonOpts {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::string kind = "exponential";
  double smoothness = 0.5;
  double nugget = 0.0;
};

CovParams prototype(const CommonOpts& c) {
  CovParams p;
  p.kind = cov_kind_from_string(c.kind);
  p.smoothness = c.smoothness;
  p.nugget = c.nugget;
  return p;
}

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--out", c.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--kind", c.kind, "covariance family: exponential|gaussian|matern")
      ->capture_default_str();
  cmd->add_option("--nu", c.smoothness, "matern smoothness (fixed, not estimated)")
      ->capture_default_str();
  cmd->add_option("--nugget", c.nugget, "nugget variance")->capture_default_str();
}

void write_out(const CommonOpts& c, const std::string& name, const std::string& content) {
  fs::create_directories(c.out_dir);
  const std::string path = (fs::path(c.out_dir) / name).string();
  write_file(path, content);
  log_info("wrote " + path);
}

struct TargetsCsv {
  std::vector<std::string> ids;
  std::vector<Location> locations;
};

TargetsCsv read_targets_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw invalid_input(path + ": empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "x_km" || header[2] != "y_km")
    throw invalid_input(path + ":1: expected header starting 'id,x_km,y_km'");
  TargetsCsv out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tok = detail::split_csv_line(line);
    if (tok.size() < 3)
      throw invalid_input(path + ":" + std::to_string(lineno) + ": expected >= 3 fields");
    out.ids.push_back(tok[0]);
    out.locations.push_back(Location{detail::parse_number(tok[1], path, lineno, "x_km"),
                                     detail::parse_number(tok[2], path, lineno, "y_km")});
  }
  if (out.locations.empty()) throw invalid_input(path + ": no target rows");
  return out;
}

struct AlignedCsv {
  AlignedData data;
};

AlignedData read_aligned_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw invalid_input(path + ": empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() != 5 || header[0] != "id" || header[1] != "x_km" || header[2] != "y_km" ||
      header[3] != "r" || header[4] != "y")
    throw invalid_input(path + ":1: expected header 'id,x_km,y_km,r,y'");
  AlignedData out;
  std::vector<double> rs, ys;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tok = detail::split_csv_line(line);
    if (tok.size() != 5)
      throw invalid_input(path + ":" + std::to_string(lineno) + ": expected 5 fields");
    out.locs.push_back(Location{detail::parse_number(tok[1], path, lineno, "x_km"),
                                detail::parse_number(tok[2], path, lineno, "y_km")});
    rs.push_back(detail::parse_number(tok[3], path, lineno, "r"));
    ys.push_back(detail::parse_number(tok[4], path, lineno, "y"));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rs.size());
  if (n == 0) throw invalid_input(path + ": no rows");
  out.r = Eigen::Map<Eigen::VectorXd>(rs.data(), n);
  out.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  out.controls = Eigen::MatrixXd::Ones(n, 1);
  return out;
}

std::string fit_report(const FitResult& fit, const RunConfig& cfg) {
  std::ostringstream os;
  os << "method=" << to_string(fit.method) << "\n";
  os << "kind=" << to_string(fit.theta.kind) << "\n";
  os << "sill=" << fmt(fit.theta.sill) << "\n";
  os << "range=" << fmt(fit.theta.range) << "\n";
  if (fit.theta.kind == CovKind::matern) os << "nu=" << fmt(fit.theta.smoothness) << "\n";
  os << "nugget=" << fmt(fit.theta.nugget) << "\n";
  for (Eigen::Index i = 0; i < fit.mean.rho.size(); ++i)
    os << "rho_" << i << "=" << fmt(fit.mean.rho(i)) << "\n";
  os << "loglik=" << fmt(fit.loglik) << "\n";
  os << "converged=" << (fit.converged ? 1 : 0) << "\n";
  os << "iterations=" << fit.iterations << "\n";
  os << "gradient_norm=" << fmt(fit.gradient_norm) << "\n";
  os << "vcov_degenerate=" << (fit.vcov_degenerate ? 1 : 0) << "\n";
  for (Eigen::Index i = 0; i < fit.vcov_theta.rows(); ++i)
    for (Eigen::Index j = 0; j < fit.vcov_theta.cols(); ++j)
      os << "vcov_theta_" << i << j << "=" << fmt(fit.vcov_theta(i, j)) << "\n";
  for (Eigen::Index i = 0; i < fit.vcov_mean.rows(); ++i)
    for (Eigen::Index j = 0; j < fit.vcov_mean.cols(); ++j)
      os << "vcov_mean_" << i << j << "=" << fmt(fit.vcov_mean(i, j)) << "\n";
  os << cfg.echo("config.");
  return os.str();
}

MeanBasis basis_from_flag(const std::string& mean) {
  if (mean == "constant") return MeanBasis::constant();
  if (mean == "linear") return MeanBasis::planar();
  throw invalid_input("unknown --mean (use constant or linear): " + mean);
}

struct LagFileEntry {
  bool cross = false;
  double r = 0, r_tol = 0;
};

// Lag file format: lines "self,r,r_tol" or "cross,r,r_tol" (header allowed).
std::pair<std::vector<LagSpec>, std::vector<LagSpec>> read_lags_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open " + path);
  std::vector<LagSpec> self, cross;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "kind,r,r_tol") continue;
    auto tok = detail::split_csv_line(line);
    if (tok.size() != 3)
      throw invalid_input(path + ":" + std::to_string(lineno) + ": expected kind,r,r_tol");
    const double r = detail::parse_number(tok[1], path, lineno, "r");
    const double tol = detail::parse_number(tok[2], path, lineno, "r_tol");
    if (tok[0] == "self")
      self.push_back(isotropic_lag(r, tol));
    else if (tok[0] == "cross")
      cross.push_back(isotropic_lag(r, tol));
    else
      throw invalid_input(path + ":" + std::to_string(lineno) + ": kind must be self or cross");
  }
  if (self.empty() || cross.empty())
    throw invalid_input(path + ": need at least one self and one cross lag");
  return {self, cross};
}

RunConfig base_config(const std::string& sub, const CommonOpts& c) {
  RunConfig cfg;
  cfg.subcommand = sub;
  cfg.seed = c.seed;
  cfg.set("kind", c.kind);
  cfg.set("nu", c.smoothness);
  cfg.set("nugget", c.nugget);
  return cfg;
}

std::vector<LagSpec> default_self_lags(const MisalignedDataset& data,
                                       const EstimatorConfig& est) {
  return misreg::detail::percentile_lags(misreg::detail::self_distances(data), est.n_self_lags,
                                         est.self_lag_lo, est.self_lag_hi);
}

std::vector<LagSpec> default_cross_lags(const MisalignedDataset& data,
                                        const EstimatorConfig& est) {
  return misreg::detail::percentile_lags(misreg::detail::cross_distances(data), est.n_cross_lags,
                                         est.cross_lag_lo, est.cross_lag_hi);
}

// Shared mindist setup used by the mindist and abc subcommands.
struct MdPipeline {
  FitResult fit;
  RegressionEstimate kr;
  MomentBuilder moments;
  DomainInfo info;
  Phi start;
  double sigma_eps2 = 0.0;
};

MdPipeline build_md_pipeline(const MisalignedDataset& data, const CovParams& proto,
                             const std::string& lags, CrossFlavor flavor, int iso_angles,
                             std::size_t min_pairs, bool uniform_density) {
  MdPipeline p{FitResult{}, RegressionEstimate{}, MomentBuilder::from_specs({}, {}), DomainInfo{},
               Phi{}, 0.0};
  p.fit = fit_ml(data.stations(), proto, MeanBasis::constant());
  p.kr = krig_and_regress(data, p.fit);
  std::vector<LagSpec> lags_self, lags_cross;
  if (lags == "auto" || lags.empty()) {
    EstimatorConfig est;
    lags_self = default_self_lags(data, est);
    lags_cross = default_cross_lags(data, est);
  } else {
    std::tie(lags_self, lags_cross) = read_lags_file(lags);
  }
  if (iso_angles > 1) {
    std::vector<double> rs_self, rs_cross;
    for (const auto& l : lags_self) rs_self.push_back(l.r);
    for (const auto& l : lags_cross) rs_cross.push_back(l.r);
    const double tol_self = lags_self.front().r_tol;
    p.moments = isotropic_moments(data, p.fit.mean, rs_cross, rs_self, iso_angles, tol_self,
                                  flavor, min_pairs);
  } else {
    p.moments =
        MomentBuilder::from_dataset(data, p.fit.mean, lags_self, lags_cross, flavor, min_pairs);
  }
  std::vector<Location> all = data.outcome_locs;
  all.insert(all.end(), data.station_locs.begin(), data.station_locs.end());
  p.info = DomainInfo::from_locations(all, 10, uniform_density);
  p.start.beta = p.kr.beta(0);
  p.start.theta = p.fit.theta;
  p.sigma_eps2 = p.kr.diagnostics.at("sigma2_resid");
  return p;
}

std::string md_report(const MdResult& md, const RunConfig& cfg) {
  std::ostringstream os;
  os << "method=mindist\n";
  os << "beta=" << fmt(md.phi.beta) << "\n";
  os << "sill=" << fmt(md.phi.theta.sill) << "\n";
  os << "range=" << fmt(md.phi.theta.range) << "\n";
  os << "objective=" << fmt(md.objective) << "\n";
  os << "converged=" << (md.converged ? 1 : 0) << "\n";
  os << "identification_warning=" << (md.identification_warning ? 1 : 0) << "\n";
  os << "regime=" << to_string(md.regime) << "\n";
  os << "rate2=" << fmt(md.rate2) << "\n";
  const char* names[3] = {"beta", "sill", "range"};
  for (int i = 0; i < 3; ++i) os << "se_" << names[i] << "=" << fmt(md.se(i)) << "\n";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) os << "vcov_" << i << j << "=" << fmt(md.vcov(i, j)) << "\n";
  for (Eigen::Index i = 0; i < md.sigma_g.rows(); ++i)
    for (Eigen::Index j = 0; j < md.sigma_g.cols(); ++j)
      os << "sigma_g_" << i << "_" << j << "=" << fmt(md.sigma_g(i, j)) << "\n";
  os << cfg.echo("config.");
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regression analysis with spatially misaligned data"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; flags override");

  // ---- simulate ----
  auto* sim_cmd = app.add_subcommand("simulate", "simulate a misaligned dataset");
  CommonOpts sim_c;
  add_common(sim_cmd, sim_c);
  int sim_side = 15;
  double sim_spacing = 1.0;
  int sim_n_out = 0, sim_n_sta = 0;
  double sim_region = 25.0;
  double sim_sill = 1.0, sim_range = 1.2, sim_mean = 0.0;
  double sim_beta = 1.0, sim_gamma = 0.5, sim_sigma_eps = 0.25;
  double sim_err_sill = 0.0, sim_err_range = 1.0;
  sim_cmd->add_option("--lattice-side", sim_side, "checkerboard lattice side")->capture_default_str();
  sim_cmd->add_option("--spacing", sim_spacing, "lattice spacing, km")->capture_default_str();
  sim_cmd->add_option("--n-outcomes", sim_n_out, "irregular design: number of outcomes (0 = lattice)")
      ->capture_default_str();
  sim_cmd->add_option("--n-stations", sim_n_sta, "irregular design: number of stations")
      ->capture_default_str();
  sim_cmd->add_option("--region", sim_region, "irregular design: square side, km")
      ->capture_default_str();
  sim_cmd->add_option("--sill", sim_sill, "field sill")->capture_default_str();
  sim_cmd->add_option("--range", sim_range, "field range, km")->capture_default_str();
  sim_cmd->add_option("--field-mean", sim_mean, "field mean")->capture_default_str();
  sim_cmd->add_option("--beta", sim_beta, "regression coefficient")->capture_default_str();
  sim_cmd->add_option("--gamma", sim_gamma, "intercept")->capture_default_str();
  sim_cmd->add_option("--sigma-eps", sim_sigma_eps, "iid error standard deviation")
      ->capture_default_str();
  sim_cmd->add_option("--spatial-error-sill", sim_err_sill,
                      "spatially correlated errors: sill (0 = iid errors)")
      ->capture_default_str();
  sim_cmd->add_option("--spatial-error-range", sim_err_range, "spatially correlated errors: range")
      ->capture_default_str();

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "fit the field mean and covariance from stations");
  CommonOpts fit_c;
  add_common(fit_cmd, fit_c);
  std::string fit_stations, fit_method = "ml", fit_mean = "constant";
  fit_cmd->add_option("--stations", fit_stations, "stations csv")->required();
  fit_cmd->add_option("--method", fit_method, "ml|reml")->capture_default_str();
  fit_cmd->add_option("--mean", fit_mean, "constant|linear")->capture_default_str();

  // ---- krig ----
  auto* krig_cmd = app.add_subcommand("krig", "predict the field at target locations");
  CommonOpts krig_c;
  add_common(krig_cmd, krig_c);
  std::string krig_stations, krig_targets, krig_mean = "constant";
  double krig_sill = 0.0, krig_range = 0.0;
  bool krig_loo = false;
  krig_cmd->add_option("--stations", krig_stations, "stations csv")->required();
  krig_cmd->add_option("--targets", krig_targets, "targets csv (id,x_km,y_km)")->required();
  krig_cmd->add_option("--mean", krig_mean, "constant|linear")->capture_default_str();
  krig_cmd->add_option("--sill", krig_sill, "fix the sill (skip fitting)")->capture_default_str();
  krig_cmd->add_option("--range", krig_range, "fix the range (skip fitting)")->capture_default_str();
  krig_cmd->add_flag("--loo", krig_loo, "also write leave-one-out station residuals");

  // ---- krig-regress ----
  auto* kr_cmd = app.add_subcommand("krig-regress", "krig-and-regress with naive or bootstrap inference");
  CommonOpts kr_c;
  add_common(kr_cmd, kr_c);
  std::string kr_stations, kr_outcomes, kr_mean = "constant", kr_ci = "percentile";
  int kr_bootstrap = 0, kr_nn = 0;
  double kr_level = 0.05;
  kr_cmd->add_option("--stations", kr_stations, "stations csv")->required();
  kr_cmd->add_option("--outcomes", kr_outcomes, "outcomes csv")->required();
  kr_cmd->add_option("--bootstrap", kr_bootstrap, "two-step bootstrap draws (0 = naive only)")
      ->capture_default_str();
  kr_cmd->add_option("--level", kr_level, "alpha level of the confidence intervals")
      ->capture_default_str();
  kr_cmd->add_option("--mean", kr_mean, "constant|linear bootstrap mean mode")->capture_default_str();
  kr_cmd->add_option("--ci", kr_ci, "percentile|normal bootstrap interval")->capture_default_str();
  kr_cmd->add_option("--nn", kr_nn, "nearest-neighbour baseline with k neighbours (skips kriging)")
      ->capture_default_str();

  // ---- mindist ----
  auto* md_cmd = app.add_subcommand("mindist", "one-step minimum-distance estimation");
  CommonOpts md_c;
  add_common(md_cmd, md_c);
  std::string md_stations, md_outcomes, md_weights = "efficient", md_flavor = "covariance";
  std::string md_regime = "mixed", md_lags = "auto";
  int md_iso_angles = 1, md_nsynth = 200;
  std::size_t md_min_pairs = 30;
  md_cmd->add_option("--stations", md_stations, "stations csv")->required();
  md_cmd->add_option("--outcomes", md_outcomes, "outcomes csv")->required();
  md_cmd->add_option("--weights", md_weights, "identity|diag|efficient|synthetic")
      ->capture_default_str();
  md_cmd->add_option("--flavor", md_flavor, "variogram|covariance cross moments")
      ->capture_default_str();
  md_cmd->add_option("--iso-angles", md_iso_angles, "directional bins per distance (1 = isotropic)")
      ->capture_default_str();
  md_cmd->add_option("--regime", md_regime, "pure|mixed increasing-domain regime")
      ->capture_default_str();
  md_cmd->add_option("--lags", md_lags, "lag file (kind,r,r_tol) or 'auto'")->capture_default_str();
  md_cmd->add_option("--n-synth", md_nsynth, "synthetic weighting draws")->capture_default_str();
  md_cmd->add_option("--min-pairs", md_min_pairs, "minimum pairs per lag bin")->capture_default_str();

  // ---- abc ----
  auto* abc_cmd = app.add_subcommand("abc", "pivotal likelihood-free inference for mindist");
  CommonOpts abc_c;
  add_common(abc_cmd, abc_c);
  std::string abc_stations, abc_outcomes, abc_flavor = "covariance", abc_weights = "synthetic";
  double abc_xi = 0.1, abc_level = 0.05;
  int abc_chain = 2000, abc_chains = 1, abc_bootstrap = 200, abc_nsynth = 200;
  abc_cmd->add_option("--stations", abc_stations, "stations csv")->required();
  abc_cmd->add_option("--outcomes", abc_outcomes, "outcomes csv")->required();
  abc_cmd->add_option("--xi", abc_xi, "objective tolerance band")->capture_default_str();
  abc_cmd->add_option("--chain-length", abc_chain, "retained draws per chain")->capture_default_str();
  abc_cmd->add_option("--chains", abc_chains, "independent chains")->capture_default_str();
  abc_cmd->add_option("--bootstrap", abc_bootstrap, "bootstrap draws behind the proposal")
      ->capture_default_str();
  abc_cmd->add_option("--weights", abc_weights, "synthetic|identity chain weighting")
      ->capture_default_str();
  abc_cmd->add_option("--n-synth", abc_nsynth, "synthetic weighting draws")->capture_default_str();
  abc_cmd->add_option("--level", abc_level, "alpha level of the reported interval")
      ->capture_default_str();

  // ---- experiment ----
  auto* exp_cmd = app.add_subcommand("experiment", "Monte Carlo comparisons of the estimators");
  CommonOpts exp_c;
  add_common(exp_cmd, exp_c);
  std::string exp_design = "lattice", exp_methods = "kr-naive,kr-bootstrap,mindist,nn-1,nn-4";
  std::string exp_aligned;
  int exp_runs = 200, exp_side = 15, exp_bootstrap = 200, exp_n = 558;
  double exp_sill = 1.0, exp_range = 1.2, exp_beta = 1.0, exp_gamma = 0.5, exp_sigma = 0.25;
  double exp_region = 25.0, exp_spacing = 1.0;
  int exp_threads = 0;
  exp_cmd->add_option("--design", exp_design, "lattice|crossval")->capture_default_str();
  exp_cmd->add_option("--methods", exp_methods, "comma-separated method list")
      ->capture_default_str();
  exp_cmd->add_option("--runs", exp_runs, "Monte Carlo runs")->capture_default_str();
  exp_cmd->add_option("--side", exp_side, "lattice side")->capture_default_str();
  exp_cmd->add_option("--spacing", exp_spacing, "lattice spacing")->capture_default_str();
  exp_cmd->add_option("--bootstrap", exp_bootstrap, "bootstrap draws per run")->capture_default_str();
  exp_cmd->add_option("--sill", exp_sill, "field sill")->capture_default_str();
  exp_cmd->add_option("--range", exp_range, "field range")->capture_default_str();
  exp_cmd->add_option("--beta", exp_beta, "true coefficient")->capture_default_str();
  exp_cmd->add_option("--gamma", exp_gamma, "intercept")->capture_default_str();
  exp_cmd->add_option("--sigma-eps", exp_sigma, "iid error sd")->capture_default_str();
  exp_cmd->add_option("--aligned", exp_aligned, "crossval: aligned csv (id,x_km,y_km,r,y)")
      ->capture_default_str();
  exp_cmd->add_option("--n", exp_n, "crossval: semi-synthetic dataset size")->capture_default_str();
  exp_cmd->add_option("--region", exp_region, "crossval: semi-synthetic square side, km")
      ->capture_default_str();
  exp_cmd->add_option("--threads", exp_threads, "worker threads (0 = hardware)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*sim_cmd) {
      RunConfig cfg = base_config("simulate", sim_c);
      SimConfig sim;
      sim.seed = sim_c.seed;
      sim.theta = prototype(sim_c);
      sim.theta.sill = sim_sill;
      sim.theta.range = sim_range;
      sim.mean = MeanModel::constant(sim_mean);
      sim.reg.beta = Eigen::VectorXd::Constant(1, sim_beta);
      sim.reg.gamma = Eigen::VectorXd::Constant(1, sim_gamma);
      if (sim_err_sill > 0.0) {
        CovParams err = prototype(sim_c);
        err.sill = sim_err_sill;
        err.range = sim_err_range;
        sim.errors = ErrorModel::spatial(err);
        cfg.set("error_model", "spatial");
        cfg.set("spatial_error_sill", sim_err_sill);
        cfg.set("spatial_error_range", sim_err_range);
      } else {
        sim.errors = ErrorModel::iid(sim_sigma_eps * sim_sigma_eps);
        cfg.set("error_model", "iid");
        cfg.set("sigma_eps", sim_sigma_eps);
      }
      cfg.set("sill", sim_sill);
      cfg.set("range", sim_range);
      cfg.set("beta", sim_beta);
      cfg.set("gamma", sim_gamma);

      std::vector<Location> outcomes, stations;
      if (sim_n_out > 0 && sim_n_sta > 0) {
        Rng rng = make_rng(derive_seed(sim_c.seed, 9001));
        std::uniform_real_distribution<double> u(0.0, sim_region);
        for (int i = 0; i < sim_n_out; ++i) outcomes.push_back({u(rng), u(rng)});
        for (int i = 0; i < sim_n_sta; ++i) stations.push_back({u(rng), u(rng)});
        cfg.set("design", "irregular");
        cfg.set("n_outcomes", sim_n_out);
        cfg.set("n_stations", sim_n_sta);
        cfg.set("region", sim_region);
      } else {
        auto lattice = make_lattice(sim_side, sim_spacing);
        for (int i = 0; i < sim_side; ++i)
          for (int j = 0; j < sim_side; ++j)
            (((i + j) % 2 == 0) ? stations : outcomes)
                .push_back(lattice[static_cast<std::size_t>(i * sim_side + j)]);
        cfg.set("design", "lattice");
        cfg.set("lattice_side", sim_side);
        cfg.set("spacing", sim_spacing);
      }
      SimulatedMisaligned sm = simulate_misaligned(sim, outcomes, stations);

      std::ostringstream sta;
      sta << "id,x_km,y_km,value\n";
      for (Eigen::Index i = 0; i < sm.data.r_star.size(); ++i)
        sta << i << "," << fmt(sm.data.station_locs[static_cast<std::size_t>(i)].x) << ","
            << fmt(sm.data.station_locs[static_cast<std::size_t>(i)].y) << ","
            << fmt(sm.data.r_star(i)) << "\n";
      write_out(sim_c, "stations.csv", sta.str());

      std::ostringstream outc;
      outc << "id,x_km,y_km,y\n";
      for (Eigen::Index i = 0; i < sm.data.y.size(); ++i)
        outc << i << "," << fmt(sm.data.outcome_locs[static_cast<std::size_t>(i)].x) << ","
             << fmt(sm.data.outcome_locs[static_cast<std::size_t>(i)].y) << ","
             << fmt(sm.data.y(i)) << "\n";
      write_out(sim_c, "outcomes.csv", outc.str());

      std::ostringstream latent;
      latent << "id,x_km,y_km,r_latent\n";
      for (Eigen::Index i = 0; i < sm.latent_r.size(); ++i)
        latent << i << "," << fmt(sm.data.outcome_locs[static_cast<std::size_t>(i)].x) << ","
               << fmt(sm.data.outcome_locs[static_cast<std::size_t>(i)].y) << ","
               << fmt(sm.latent_r(i)) << "\n";
      write_out(sim_c, "latent_r.csv", latent.str());
      write_out(sim_c, "simulate_config.txt", cfg.echo(""));
      return 0;
    }

    if (*fit_cmd) {
      RunConfig cfg = base_config("fit", fit_c);
      cfg.set("stations", fit_stations);
      cfg.set("method", fit_method);
      cfg.set("mean", fit_mean);
      StationsCsv sta = read_stations_csv(fit_stations);
      FieldSample sample = average_duplicate_stations(sta.sample);
      const MeanBasis basis = basis_from_flag(fit_mean);
      FitResult fit = fit_method == "reml" ? fit_reml(sample, prototype(fit_c), basis)
                                           : fit_ml(sample, prototype(fit_c), basis);
      write_out(fit_c, "fit.txt", fit_report(fit, cfg));
      auto lags = default_lags(sample.locations);
      auto ev = empirical_variogram(sample, fit.mean.values(sample.locations), lags);
      write_out(fit_c, "variogram.csv", variogram_csv(ev));
      return 0;
    }

    if (*krig_cmd) {
      RunConfig cfg = base_config("krig", krig_c);
      cfg.set("stations", krig_stations);
      cfg.set("targets", krig_targets);
      cfg.set("mean", krig_mean);
      StationsCsv sta = read_stations_csv(krig_stations);
      TargetsCsv targets = read_targets_csv(krig_targets);
      FieldSample sample = average_duplicate_stations(sta.sample);
      const MeanBasis basis = basis_from_flag(krig_mean);
      KrigingPrediction pred;
      FitResult fit;
      if (krig_sill > 0.0 && krig_range > 0.0) {
        CovParams theta = prototype(krig_c);
        theta.sill = krig_sill;
        theta.range = krig_range;
        cfg.set("sill", krig_sill);
        cfg.set("range", krig_range);
        pred = blup(theta, basis, sample, targets.locations);
        fit.theta = theta;
        fit.mean.basis = basis;
        fit.mean.rho = gls_mean(theta, sample, basis);
      } else {
        fit = fit_ml(sample, prototype(krig_c), basis);
        pred = eblup(fit, sample, targets.locations);
      }
      write_out(krig_c, "predictions.csv", predictions_csv(targets.ids, pred));
      if (krig_loo) {
        Eigen::VectorXd res = loo_residuals(fit.theta, basis, sample);
        std::ostringstream os;
        os << "id,x_km,y_km,residual\n";
        for (Eigen::Index i = 0; i < res.size(); ++i)
          os << i << "," << fmt(sample.locations[static_cast<std::size_t>(i)].x) << ","
             << fmt(sample.locations[static_cast<std::size_t>(i)].y) << "," << fmt(res(i)) << "\n";
        write_out(krig_c, "loo_residuals.csv", os.str());
      }
      return 0;
    }

    if (*kr_cmd) {
      RunConfig cfg = base_config("krig-regress", kr_c);
      cfg.set("stations", kr_stations);
      cfg.set("outcomes", kr_outcomes);
      cfg.set("level", kr_level);
      MisalignedDataset data = ingest(kr_stations, kr_outcomes);
      if (kr_nn > 0) {
        cfg.set("nn", kr_nn);
        RegressionEstimate est = nn_regress(data, kr_nn, kr_level);
        write_out(kr_c, "estimate.csv", estimate_csv(est, cfg));
        write_out(kr_c, "estimate.txt", estimate_text(est, cfg));
        return 0;
      }
      cfg.set("mean", kr_mean);
      const MeanBasis basis = basis_from_flag(kr_mean);
      FitResult fit = kr_mean == "linear"
                          ? fit_reml(data.stations(), prototype(kr_c), basis)
                          : fit_ml(data.stations(), prototype(kr_c), basis);
      if (kr_bootstrap > 0) {
        cfg.set("bootstrap", kr_bootstrap);
        cfg.set("ci", kr_ci);
        auto [est, draws] = two_step_bootstrap(
            data, fit, kr_bootstrap, kr_level,
            kr_mean == "linear" ? BootstrapMeanMode::linear_mean
                                : BootstrapMeanMode::constant_mean,
            kr_ci == "normal" ? CiKind::normal : CiKind::percentile, kr_c.seed);
        write_out(kr_c, "estimate.csv", estimate_csv(est, cfg));
        write_out(kr_c, "estimate.txt", estimate_text(est, cfg));
        std::ostringstream os;
        os << "draw";
        for (const auto& label : est.beta_labels) os << "," << label;
        os << ",sill,range\n";
        for (int j = 0; j < draws.draws; ++j) {
          os << j;
          for (Eigen::Index c = 0; c < draws.betas.cols(); ++c) os << "," << fmt(draws.betas(j, c));
          os << "," << fmt(draws.thetas(j, 0)) << "," << fmt(draws.thetas(j, 1)) << "\n";
        }
        write_out(kr_c, "bootstrap_draws.csv", os.str());
      } else {
        RegressionEstimate est = krig_and_regress(data, fit, kr_level);
        write_out(kr_c, "estimate.csv", estimate_csv(est, cfg));
        write_out(kr_c, "estimate.txt", estimate_text(est, cfg));
      }
      return 0;
    }

    if (*md_cmd) {
      RunConfig cfg = base_config("mindist", md_c);
      cfg.set("stations", md_stations);
      cfg.set("outcomes", md_outcomes);
      cfg.set("weights", md_weights);
      cfg.set("flavor", md_flavor);
      cfg.set("regime", md_regime);
      cfg.set("lags", md_lags);
      cfg.set("iso_angles", md_iso_angles);
      MisalignedDataset data = ingest(md_stations, md_outcomes);
      const CrossFlavor flavor = md_flavor == "variogram" ? CrossFlavor::squared_difference
                                                          : CrossFlavor::centered_product;
      const Regime regime = md_regime == "pure" ? Regime::pure : Regime::mixed;
      MdPipeline p = build_md_pipeline(data, prototype(md_c), md_lags, flavor, md_iso_angles,
                                       md_min_pairs, false);
      WeightConfig wcfg;
      wcfg.regime = regime;
      wcfg.sigma_eps2 = p.sigma_eps2;
      wcfg.gamma = p.kr.gamma;
      wcfg.n_synth = md_nsynth;
      wcfg.seed = derive_seed(md_c.seed, 2);
      WeightMatrix weight = WeightMatrix::identity(p.moments.size());
      if (md_weights == "efficient") {
        wcfg.mode = WeightMode::plugin;
        weight = efficient_weight(p.moments, data, p.fit.mean, p.start, p.info, wcfg);
      } else if (md_weights == "synthetic") {
        wcfg.mode = WeightMode::synthetic;
        weight = efficient_weight(p.moments, data, p.fit.mean, p.start, p.info, wcfg);
      } else if (md_weights == "diag") {
        wcfg.mode = WeightMode::plugin;
        WeightMatrix full = efficient_weight(p.moments, data, p.fit.mean, p.start, p.info, wcfg);
        Eigen::MatrixXd v = full.m.inverse();
        Eigen::VectorXd d = v.diagonal().cwiseMax(1e-12);
        weight.m = d.cwiseInverse().asDiagonal();
        weight.source = WeightMatrix::Source::diagonal;
      } else if (md_weights != "identity") {
        throw invalid_input("unknown --weights: " + md_weights);
      }
      MdOptions opt;
      opt.regime = regime;
      MdResult md = estimate(p.moments, weight, p.start, opt);
      add_inference(md, p.moments, weight, p.info, p.sigma_eps2);
      write_out(md_c, "mindist.txt", md_report(md, cfg));
      return 0;
    }

    if (*abc_cmd) {
      RunConfig cfg = base_config("abc", abc_c);
      cfg.set("stations", abc_stations);
      cfg.set("outcomes", abc_outcomes);
      cfg.set("xi", abc_xi);
      cfg.set("chain_length", abc_chain);
      cfg.set("chains", abc_chains);
      cfg.set("weights", abc_weights);
      MisalignedDataset data = ingest(abc_stations, abc_outcomes);
      const CrossFlavor flavor = abc_flavor == "variogram" ? CrossFlavor::squared_difference
                                                           : CrossFlavor::centered_product;
      MdPipeline p = build_md_pipeline(data, prototype(abc_c), "auto", flavor, 1, 30, false);
      auto [bs_est, bs_draws] =
          two_step_bootstrap(data, p.fit, abc_bootstrap, abc_level,
                             BootstrapMeanMode::constant_mean, CiKind::percentile,
                             derive_seed(abc_c.seed, 1));
      WeightConfig wcfg;
      wcfg.sigma_eps2 = p.sigma_eps2;
      wcfg.gamma = p.kr.gamma;
      wcfg.n_synth = abc_nsynth;
      wcfg.seed = derive_seed(abc_c.seed, 2);
      WeightMatrix weight = default_weight_for_abc(p.moments, data, p.fit.mean, p.start, p.info,
                                                   wcfg, abc_weights == "identity");
      MdResult md = estimate(p.moments, weight, p.start, MdOptions{});
      std::ostringstream tr;
      tr << "chain,step,beta,sill,range,accepted\n";
      std::vector<double> pooled;
      std::vector<double> rates;
      double l_hat = 0.0;
      for (int c = 0; c < abc_chains; ++c) {
        AbcConfig acfg;
        acfg.xi = abc_xi;
        acfg.chain_length = abc_chain;
        acfg.seed = derive_seed(abc_c.seed, 100 + static_cast<std::uint64_t>(c));
        acfg.proposal = GaussianProposal::from_bootstrap(bs_draws);
        AbcChain chain = run_abc(p.moments, weight, md.phi, acfg);
        l_hat = chain.l_hat;
        rates.push_back(chain.acceptance_rate);
        for (int s = 0; s < abc_chain; ++s) {
          tr << c << "," << s << "," << fmt(chain.draws(s, 0)) << "," << fmt(chain.draws(s, 1))
             << "," << fmt(chain.draws(s, 2)) << ","
             << int(chain.accepted[static_cast<std::size_t>(s)]) << "\n";
          pooled.push_back(chain.draws(s, 0));
        }
      }
      write_out(abc_c, "abc_draws.csv", tr.str());
      std::ostringstream os;
      os << "method=mindist-abc\n";
      os << "beta_point=" << fmt(md.phi.beta) << "\n";
      os << "beta_chain_mean=" << fmt(std::accumulate(pooled.begin(), pooled.end(), 0.0) /
                                      static_cast<double>(pooled.size()))
         << "\n";
      os << "ci_lo=" << fmt(quantile(pooled, abc_level / 2)) << "\n";
      os << "ci_hi=" << fmt(quantile(pooled, 1 - abc_level / 2)) << "\n";
      os << "l_hat=" << fmt(l_hat) << "\n";
      for (int c = 0; c < abc_chains; ++c)
        os << "chain_" << c << "_acceptance_rate=" << fmt(rates[static_cast<std::size_t>(c)])
           << "\n";
      os << cfg.echo("config.");
      write_out(abc_c, "abc_summary.txt", os.str());
      return 0;
    }

    if (*exp_cmd) {
      RunConfig cfg = base_config("experiment", exp_c);
      cfg.set("design", exp_design);
      cfg.set("methods", exp_methods);
      cfg.set("runs", exp_runs);
      std::vector<std::string> methods;
      {
        std::stringstream ss(exp_methods);
        std::string tok;
        while (std::getline(ss, tok, ','))
          if (!tok.empty()) methods.push_back(tok);
      }
      if (methods.empty()) throw invalid_input("experiment: empty method list");
      ExperimentReport report;
      if (exp_design == "lattice") {
        LatticeConfig lat;
        lat.side = exp_side;
        lat.spacing = exp_spacing;
        lat.theta = prototype(exp_c);
        lat.theta.sill = exp_sill;
        lat.theta.range = exp_range;
        lat.beta = exp_beta;
        lat.gamma0 = exp_gamma;
        lat.sigma_eps = exp_sigma;
        lat.est.bootstrap_draws = exp_bootstrap;
        cfg.set("side", exp_side);
        cfg.set("sill", exp_sill);
        cfg.set("range", exp_range);
        cfg.set("beta", exp_beta);
        cfg.set("sigma_eps", exp_sigma);
        report = lattice_experiment(lat, exp_runs, methods, exp_c.seed,
                                    static_cast<unsigned>(exp_threads));
      } else if (exp_design == "crossval") {
        AlignedData aligned;
        if (!exp_aligned.empty()) {
          aligned = read_aligned_csv(exp_aligned);
          cfg.set("aligned", exp_aligned);
        } else {
          CovParams theta = prototype(exp_c);
          theta.sill = exp_sill;
          theta.range = exp_range;
          aligned = semi_synthetic_aligned(exp_n, exp_region, theta, 0.0, exp_beta, exp_gamma,
                                           exp_sigma, derive_seed(exp_c.seed, 77));
          cfg.set("semi_synthetic_n", exp_n);
          cfg.set("region", exp_region);
          cfg.set("beta", exp_beta);
        }
        EstimatorConfig est;
        est.bootstrap_draws = exp_bootstrap;
        est.uniform_density = false;
        report = crossval_experiment(aligned, exp_runs, methods, exp_c.seed, est,
                                     prototype(exp_c), static_cast<unsigned>(exp_threads));
      } else {
        throw invalid_input("unknown --design: " + exp_design);
      }
      write_out(exp_c, "experiment.csv", experiment_csv(report, cfg.echo("# ")));
      write_out(exp_c, "experiment.txt", experiment_text(report));
      std::cout << experiment_text(report);
      return 0;
    }
  } catch (const invalid_input& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
