// SPDX-License-Identifier: Apache-2.0
//
// Integration tests for the command-line binary: exit codes, file layout,
// override handling, and the contract that failed commands leave no
// partial outputs. The binary path arrives as DUQ_CLI_PATH.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "duq/data.hpp"
#include "duq/infer.hpp"
#include "duq/serialize.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace duq;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("duq-cli-test-" + std::to_string(std::rand()) + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& sub) const { return (path / sub).string(); }
};

RunResult run_cli(const TempDir& dir, const std::string& args) {
  const fs::path out_file = dir.path / "stdout.txt";
  const fs::path err_file = dir.path / "stderr.txt";
  const std::string cmd = std::string(DUQ_CLI_PATH) + " " + args + " > " + out_file.string() +
                          " 2> " + err_file.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

/// One tiny end-to-end workspace shared by the pipeline-level cases.
const TempDir& pipeline() {
  static TempDir dir;
  static bool built = false;
  if (!built) {
    built = true;
    RunResult r = run_cli(dir, "synth --out " + dir.str("synth") +
                                   " --seed 4 dates=40 stations=2 t_e=4 t_d=3 n1=2 nwp_width=2 "
                                   "n3=2 block_rate=0.02 local_rate=0.01");
    REQUIRE(r.exit_code == 0);
    r = run_cli(dir, "preprocess --out " + dir.str("prep") + " data=" + dir.str("synth") +
                         "/records.csv stations=2 t_e=4 t_d=3 n1=2 nwp_width=2 n3=2");
    REQUIRE(r.exit_code == 0);
    r = run_cli(dir, "train --out " + dir.str("train") + " --seed 2 data=" + dir.str("prep") +
                         " hidden_sizes=8 batch_size=8 max_iterations=50 validation_interval=25 "
                         "early_stop_tolerance=3");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("ti = ") != std::string::npos);
    r = run_cli(dir, "predict --out " + dir.str("pred") + " data=" + dir.str("prep") +
                         "/test checkpoint=" + dir.str("train") + "/model.duqp z=0.1");
    REQUIRE(r.exit_code == 0);
    r = run_cli(dir, "evaluate --out " + dir.str("eval") + " data=" + dir.str("prep") +
                         "/test forecasts=" + dir.str("pred") + "/forecasts.csv");
    REQUIRE(r.exit_code == 0);
  }
  return dir;
}

}  // namespace

TEST_CASE("no subcommand or an unknown one is a usage error") {
  TempDir dir;
  CHECK(run_cli(dir, "").exit_code == 1);
  CHECK(run_cli(dir, "frobnicate --out x").exit_code == 1);
  CHECK(run_cli(dir, "--help").exit_code == 0);
}

TEST_CASE("invalid missingness rate fails without leaving partial files") {
  TempDir dir;
  const RunResult r = run_cli(dir, "synth --out " + dir.str("synth") + " block_rate=1.5");
  CHECK(r.exit_code == 2);
  CHECK(!fs::exists(dir.str("synth") + "/records.csv"));
  CHECK(!fs::exists(dir.str("synth") + "/truth.csv"));
}

TEST_CASE("missing input tensors fail naming the absent path") {
  TempDir dir;
  const RunResult r =
      run_cli(dir, "train --out " + dir.str("t") + " data=" + dir.str("nowhere"));
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("encoder.duqt") != std::string::npos);
  CHECK(r.err.find(dir.str("nowhere")) != std::string::npos);
}

TEST_CASE("unknown config keys and malformed overrides are usage errors") {
  TempDir dir;
  CHECK(run_cli(dir, "synth --out " + dir.str("a") + " dates=20 speling_mistake=1").exit_code == 1);
  CHECK(run_cli(dir, "synth --out " + dir.str("b") + " dates").exit_code == 1);
  CHECK(!fs::exists(dir.str("a")));
}

TEST_CASE("config file values load and command-line overrides win") {
  TempDir dir;
  {
    std::ofstream cfg(dir.str("run.cfg"));
    cfg << "# comment line\n"
        << "dates = 25\n"
        << "stations = 2\n"
        << "t_e = 4\n"
        << "t_d = 3\n";
  }
  const RunResult r = run_cli(dir, "synth --config " + dir.str("run.cfg") + " --out " +
                                       dir.str("out") + " dates=30");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("(30 dates, 2 stations)") != std::string::npos);
  const std::string resolved = slurp(dir.str("out") + "/resolved_config.txt");
  CHECK(resolved.find("dates = 30") != std::string::npos);
  CHECK(resolved.find("stations = 2") != std::string::npos);
}

TEST_CASE("the full pipeline emits every promised artifact") {
  const TempDir& dir = pipeline();
  CHECK(fs::exists(dir.str("synth") + "/resolved_config.txt"));
  CHECK(fs::exists(dir.str("prep") + "/train/encoder.duqt"));
  CHECK(fs::exists(dir.str("train") + "/model.duqp"));
  CHECK(fs::exists(dir.str("train") + "/training_log.csv"));
  CHECK(fs::exists(dir.str("pred") + "/forecasts.csv"));
  CHECK(fs::exists(dir.str("eval") + "/report.csv"));
  CHECK(fs::exists(dir.str("eval") + "/report.json"));

  const auto doc = nlohmann::json::parse(slurp(dir.str("eval") + "/report.json"));
  CHECK(doc.contains("picp_avg"));
  CHECK(doc["stations"] == 2);
}

TEST_CASE("evaluating the forecast channel against itself scores zero skill") {
  const TempDir& dir = pipeline();
  const DatasetTensors ds = load_dataset(dir.str("prep") + "/test");
  ForecastTable table;
  table.date_ids = ds.date_ids;
  const Shape grid{ds.dates(), ds.stations(), ds.t_d(), ds.n3()};
  table.point = Tensor(grid);
  table.lower = Tensor(grid);
  table.upper = Tensor(grid);
  table.sigma = Tensor(grid);
  table.z = 0.1;
  table.lambda = lambda_from_z(0.1);
  for (Index d = 0; d < ds.dates(); ++d) {
    for (Index s = 0; s < ds.stations(); ++s) {
      for (Index t = 0; t < ds.t_d(); ++t) {
        for (Index o = 0; o < ds.n3(); ++o) {
          const double nwp = invert_range(ds.norm.nwp[static_cast<std::size_t>(o)],
                                          ds.decoder(d, t, s, 2 + o));
          table.point(d, s, t, o) = nwp;
          table.lower(d, s, t, o) = nwp - 1.0;
          table.upper(d, s, t, o) = nwp + 1.0;
        }
      }
    }
  }
  save_forecasts(table, dir.str("nwp_forecasts.csv"));
  TempDir scratch;
  const RunResult r = run_cli(scratch, "evaluate --out " + scratch.str("eval") + " data=" +
                                           dir.str("prep") + "/test forecasts=" +
                                           dir.str("nwp_forecasts.csv"));
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("ss_avg = 0\n") != std::string::npos);
}

TEST_CASE("oracle intervals from the truth sidecar land near nominal coverage") {
  const TempDir& dir = pipeline();
  TempDir scratch;
  const RunResult r = run_cli(scratch, "evaluate --out " + scratch.str("oracle") + " data=" +
                                           dir.str("prep") + "/test truth=" + dir.str("synth") +
                                           "/truth.csv z=0.1");
  CHECK(r.exit_code == 0);
  const auto doc = nlohmann::json::parse(slurp(scratch.str("oracle") + "/report.json"));
  const double picp = doc["picp_avg"].get<double>();
  CHECK(picp > 0.80);
  CHECK(picp < 0.98);
}

TEST_CASE("the ttest mode compares two reports") {
  const TempDir& dir = pipeline();
  TempDir scratch;
  // Against the oracle report the distinction is sharp in one direction.
  RunResult r = run_cli(scratch, "evaluate --out " + scratch.str("oracle") + " data=" +
                                     dir.str("prep") + "/test truth=" + dir.str("synth") +
                                     "/truth.csv z=0.1");
  REQUIRE(r.exit_code == 0);
  r = run_cli(scratch, "evaluate --out " + scratch.str("tt") + " --ttest " +
                           scratch.str("oracle") + "/report.csv " + dir.str("eval") +
                           "/report.csv");
  CHECK(r.exit_code == 0);
  const auto doc = nlohmann::json::parse(slurp(scratch.str("tt") + "/ttest.json"));
  const double p_rmse = doc["rmse_first_lower"]["p_value"].get<double>();
  CHECK(p_rmse > 0.0);
  CHECK(p_rmse < 0.05);  // the oracle's point forecast is clearly more accurate
}

TEST_CASE("predict masks inputs the same way train does") {
  const TempDir& dir = pipeline();
  TempDir scratch;
  RunResult r = run_cli(scratch, "train --out " + scratch.str("tm") + " --seed 2 --mask nwp data=" +
                                     dir.str("prep") +
                                     " hidden_sizes=8 batch_size=8 max_iterations=25 "
                                     "validation_interval=25 early_stop_tolerance=3");
  REQUIRE(r.exit_code == 0);
  r = run_cli(scratch, "predict --out " + scratch.str("pm") + " data=" + dir.str("prep") +
                           "/test checkpoint=" + scratch.str("tm") + "/model.duqp mask=nwp");
  CHECK(r.exit_code == 0);
  r = run_cli(scratch, "predict --out " + scratch.str("pbad") + " data=" + dir.str("prep") +
                           "/test checkpoint=" + scratch.str("tm") + "/model.duqp mask=sideways");
  CHECK(r.exit_code == 1);
}

TEST_CASE("ensemble prediction accepts interleaved member and override tokens") {
  const TempDir& dir = pipeline();
  TempDir scratch;
  const RunResult r =
      run_cli(scratch, "predict --out " + scratch.str("pe") + " data=" + dir.str("prep") +
                           "/test --members " + dir.str("train") + "/model.duqp " +
                           dir.str("train") + "/model.duqp z=0.2");
  CHECK(r.exit_code == 0);
  const std::string head = slurp(scratch.str("pe") + "/forecasts.csv").substr(0, 120);
  CHECK(head.find("members=2") != std::string::npos);
  CHECK(head.find("lambda=1.28") != std::string::npos);
}
