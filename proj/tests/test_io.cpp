#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "misreg/io.hpp"

using namespace misreg;
namespace fs = std::filesystem;

namespace {
std::ostream* quiet_logs() {
  misreg::log_stream() = nullptr;
  return nullptr;
}
const auto quiet = quiet_logs();

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("misreg_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};
}  // namespace

TEST_CASE("ingest a well-formed fixture", "[io]") {
  TempDir tmp;
  write_file(tmp.file("stations.csv"),
             "id,x_km,y_km,value\n"
             "s1,0,0,1.5\n"
             "s2,1,0,2.5\n"
             "s3,0,1,3.5\n");
  write_file(tmp.file("outcomes.csv"),
             "id,x_km,y_km,y\n"
             "o1,0.5,0.5,10\n"
             "o2,0.2,0.8,12\n");
  MisalignedDataset data = ingest(tmp.file("stations.csv"), tmp.file("outcomes.csv"));
  CHECK(data.n_stations() == 3);
  CHECK(data.n_outcomes() == 2);
  CHECK(data.controls.cols() == 1);  // intercept prepended
  CHECK(data.controls(0, 0) == 1.0);
}

TEST_CASE("non-numeric coordinate reports its line number", "[io]") {
  TempDir tmp;
  write_file(tmp.file("stations.csv"),
             "id,x_km,y_km,value\n"
             "s1,0,0,1\n"
             "s2,1,0,1\n"
             "s3,2,0,1\n"
             "s4,3,0,1\n"
             "s5,4,0,1\n"
             "s6,abc,0,1\n");
  try {
    read_stations_csv(tmp.file("stations.csv"));
    FAIL("expected invalid_input");
  } catch (const invalid_input& e) {
    CHECK(std::string(e.what()).find(":7") != std::string::npos);
    CHECK(std::string(e.what()).find("x_km") != std::string::npos);
  }
}

TEST_CASE("duplicate station rows are averaged on ingest", "[io]") {
  TempDir tmp;
  write_file(tmp.file("stations.csv"),
             "id,x_km,y_km,value\n"
             "a,0,0,1\n"
             "b,0,0,3\n"
             "c,1,0,5\n");
  write_file(tmp.file("outcomes.csv"),
             "id,x_km,y_km,y\n"
             "o,0.5,0,2\n");
  MisalignedDataset data = ingest(tmp.file("stations.csv"), tmp.file("outcomes.csv"));
  CHECK(data.n_stations() == 2);
  CHECK(data.r_star(0) == Catch::Approx(2.0));
}

TEST_CASE("schema violations are reported", "[io]") {
  TempDir tmp;
  write_file(tmp.file("bad_header.csv"), "id,x,y,value\n1,0,0,1\n");
  CHECK_THROWS_AS(read_stations_csv(tmp.file("bad_header.csv")), invalid_input);
  write_file(tmp.file("short_row.csv"), "id,x_km,y_km,value\n1,0,0\n");
  CHECK_THROWS_AS(read_stations_csv(tmp.file("short_row.csv")), invalid_input);
  write_file(tmp.file("empty.csv"), "id,x_km,y_km,value\n");
  CHECK_THROWS_AS(read_stations_csv(tmp.file("empty.csv")), invalid_input);
  write_file(tmp.file("nonfinite.csv"), "id,x_km,y_km,value\n1,0,0,nan\n");
  CHECK_THROWS_AS(read_stations_csv(tmp.file("nonfinite.csv")), invalid_input);
  write_file(tmp.file("badcol.csv"), "id,x_km,y_km,y,weird\n1,0,0,1,2\n");
  CHECK_THROWS_AS(read_outcomes_csv(tmp.file("badcol.csv")), invalid_input);
}

TEST_CASE("outcomes with controls and groups parse", "[io]") {
  TempDir tmp;
  write_file(tmp.file("outcomes.csv"),
             "id,x_km,y_km,y,ctrl_age,ctrl_inc,group\n"
             "o1,0,0,1.0,35,2.2,boy\n"
             "o2,1,0,2.0,41,1.8,girl\n"
             "o3,0,1,3.0,28,2.9,boy\n");
  OutcomesCsv out = read_outcomes_csv(tmp.file("outcomes.csv"));
  CHECK(out.controls.cols() == 2);
  CHECK(out.group.size() == 3);
  CHECK(out.group[1] == "girl");
  CHECK(out.controls(2, 1) == Catch::Approx(2.9));
}

TEST_CASE("prediction csv round-trips at 12 significant digits", "[io]") {
  KrigingPrediction pred;
  pred.locations = {{0.123456789012, 9.87654321098}, {1.0 / 3.0, 2.0 / 7.0}};
  pred.values = Eigen::VectorXd(2);
  pred.values << 1.23456789012e-3, -4.56789012345e6;
  pred.variances = Eigen::VectorXd(2);
  pred.variances << 0.5, 0.25;
  const std::string csv = predictions_csv({"a", "b"}, pred);
  TempDir tmp;
  write_file(tmp.file("pred.csv"), csv);
  // Re-ingest through the generic parser and compare at 12 digits.
  std::ifstream in(tmp.file("pred.csv"));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  auto tok = detail::split_csv_line(line);
  CHECK(std::stod(tok[1]) == Catch::Approx(0.123456789012).epsilon(1e-11));
  CHECK(std::stod(tok[3]) == Catch::Approx(1.23456789012e-3).epsilon(1e-11));
}

TEST_CASE("reports embed the run configuration and are reproducible", "[io]") {
  RunConfig cfg;
  cfg.subcommand = "krig-regress";
  cfg.seed = 42;
  cfg.set("stations", "stations.csv");
  cfg.set("level", 0.05);
  RegressionEstimate est;
  est.beta = Eigen::VectorXd::Constant(1, 0.9);
  est.gamma = Eigen::VectorXd::Constant(1, 0.1);
  est.se = Eigen::VectorXd::Constant(2, 0.05);
  est.ci = {{0.8, 1.0}, {0.0, 0.2}};
  est.beta_labels = {"beta"};
  est.method = "kr-naive";
  const std::string a = estimate_csv(est, cfg);
  const std::string b = estimate_csv(est, cfg);
  CHECK(a == b);
  CHECK(a.find("seed=42") != std::string::npos);
  CHECK(a.find("subcommand=krig-regress") != std::string::npos);
  CHECK(estimate_text(est, cfg).find("kr-naive") != std::string::npos);
}

TEST_CASE("variogram csv halves the full-variance column", "[io]") {
  EmpiricalVariogram ev;
  VariogramEntry e;
  e.lag = isotropic_lag(1.0, 0.5);
  e.estimate = 3.0;
  e.count = 10;
  e.mean_distance = 1.02;
  ev.entries.push_back(e);
  const std::string csv = variogram_csv(ev);
  CHECK(csv.find("3,1.5,10") != std::string::npos);
}
