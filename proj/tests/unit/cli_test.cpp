#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "commands.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using curvlab::cli::run_cli;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("curvlab-cli-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << content;
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const json kSmallTrain = json::parse(R"({
  "model": {"widths": [2, 4, 2]},
  "loss": {"kind": "ce"},
  "optimizer": {"kind": "momentum", "lr": 0.05},
  "batch_size": 32,
  "epochs": 4,
  "seed": 5,
  "curvature": {"probes": 20, "power_iters": 30},
  "data": {"n": 200}
})");

}  // namespace

TEST_CASE("train writes config, jsonl, and summary") {
  TempDir dir("train");
  spit(dir.file("cfg.json"), kSmallTrain.dump());
  const auto r = run({"train", "--config", dir.file("cfg.json"), "--out", dir.file("out"), "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(r.out.empty());
  CHECK(fs::exists(dir.path / "out" / "resolved_config.json"));
  CHECK(fs::exists(dir.path / "out" / "run.jsonl"));
  const json summary = read_json(dir.path / "out" / "summary.json");
  CHECK_FALSE(summary["diverged"].get<bool>());
  const double acc = summary["val_acc"].get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("train rerun produces byte-identical jsonl") {
  TempDir dir("rerun");
  spit(dir.file("cfg.json"), kSmallTrain.dump());
  REQUIRE(run({"train", "--config", dir.file("cfg.json"), "--out", dir.file("a"), "--quiet"}).code == 0);
  REQUIRE(run({"train", "--config", dir.file("cfg.json"), "--out", dir.file("b"), "--quiet"}).code == 0);
  const std::string a = slurp(dir.path / "a" / "run.jsonl");
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(dir.path / "b" / "run.jsonl"));
}

TEST_CASE("train with a seed override replays the resolved config") {
  TempDir dir("seed");
  spit(dir.file("cfg.json"), kSmallTrain.dump());
  REQUIRE(run({"train", "--config", dir.file("cfg.json"), "--seed", "11", "--out", dir.file("a"), "--quiet"}).code == 0);
  const json resolved = read_json(dir.path / "a" / "resolved_config.json");
  CHECK(resolved["seed"].get<std::uint64_t>() == 11);
  REQUIRE(run({"train", "--config", dir.file("a/resolved_config.json"), "--out", dir.file("b"), "--quiet"}).code == 0);
  CHECK(slurp(dir.path / "a" / "run.jsonl") == slurp(dir.path / "b" / "run.jsonl"));
}

TEST_CASE("train rejects a negative gamma naming the field") {
  TempDir dir("gamma");
  json cfg = kSmallTrain;
  cfg["loss"] = {{"kind", "focal"}, {"gamma", -1.0}};
  spit(dir.file("cfg.json"), cfg.dump());
  const auto r = run({"train", "--config", dir.file("cfg.json"), "--out", dir.file("out")});
  CHECK(r.code == 2);
  CHECK(r.err.find("loss.gamma") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.path / "out" / "run.jsonl"));
}

TEST_CASE("unknown config keys are rejected") {
  TempDir dir("unknown");
  json cfg = kSmallTrain;
  cfg["epochz"] = 3;
  spit(dir.file("cfg.json"), cfg.dump());
  const auto r = run({"train", "--config", dir.file("cfg.json"), "--out", dir.file("out")});
  CHECK(r.code == 2);
  CHECK(r.err.find("epochz") != std::string::npos);
}

TEST_CASE("malformed JSON exits with a config error") {
  TempDir dir("malformed");
  spit(dir.file("cfg.json"), "{\"epochs\": ");
  CHECK(run({"train", "--config", dir.file("cfg.json"), "--out", dir.file("out")}).code == 2);
}

TEST_CASE("sweep over five gammas and three seeds") {
  TempDir dir("sweep");
  json cfg = kSmallTrain;
  cfg["epochs"] = 2;
  cfg["curvature"] = {{"probes", 5}, {"power_iters", 10}};
  cfg["sweep"] = {{"axis", "gamma"}, {"values", {0, 1, 2, 3, 5}}, {"seeds", {1, 2, 3}}};
  spit(dir.file("cfg.json"), cfg.dump());
  REQUIRE(run({"sweep", "--config", dir.file("cfg.json"), "--out", dir.file("a"), "--quiet"}).code == 0);
  const std::string csv = slurp(dir.path / "a" / "sweep.csv");
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 16);
  CHECK(lines[0].rfind("axis,value,seed", 0) == 0);
  CHECK(fs::exists(dir.path / "a" / "aggregate.csv"));
  CHECK(fs::exists(dir.path / "a" / "resolved_config.json"));

  REQUIRE(run({"sweep", "--config", dir.file("cfg.json"), "--out", dir.file("b"), "--quiet"}).code == 0);
  CHECK(csv == slurp(dir.path / "b" / "sweep.csv"));
}

TEST_CASE("sweep with an empty seed list exits 2") {
  TempDir dir("noseeds");
  json cfg = kSmallTrain;
  cfg["sweep"] = {{"axis", "gamma"}, {"values", {0, 1}}, {"seeds", json::array()}};
  spit(dir.file("cfg.json"), cfg.dump());
  CHECK(run({"sweep", "--config", dir.file("cfg.json"), "--out", dir.file("out")}).code == 2);
}

TEST_CASE("curvature of a literal matrix") {
  TempDir dir("curv");
  spit(dir.file("cfg.json"), R"({"matrix": [[1, 0, 0], [0, 2, 0], [0, 0, 3]], "probes": 200, "seed": 1})");
  REQUIRE(run({"curvature", "--config", dir.file("cfg.json"), "--out", dir.file("out"), "--quiet"}).code == 0);
  const json j = read_json(dir.path / "out" / "curvature.json");
  CHECK(j["trace"].get<double>() == 6.0);
  CHECK(j["lambda_max"].get<double>() == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(fs::exists(dir.path / "out" / "resolved_config.json"));
}

TEST_CASE("overflowing curvature input exits 3") {
  TempDir dir("overflow");
  spit(dir.file("cfg.json"), R"({"matrix": [[1e308, 1e308], [1e308, 1e308]], "probes": 4, "seed": 1})");
  const auto r = run({"curvature", "--config", dir.file("cfg.json"), "--out", dir.file("out"), "--quiet"});
  CHECK(r.code == 3);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("asymmetric matrix is a config error") {
  TempDir dir("asym");
  spit(dir.file("cfg.json"), R"({"matrix": [[1, 2], [0, 1]]})");
  CHECK(run({"curvature", "--config", dir.file("cfg.json"), "--out", dir.file("out")}).code == 2);
}

TEST_CASE("geometry euclidean christoffel symbols vanish") {
  TempDir dir("euclid");
  const auto r = run({"geometry", "euclidean", "--christoffel", "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK_FALSE(j.contains("riemann"));
  for (const auto& a : j["christoffel"]["values"])
    for (const auto& b : a)
      for (const auto& c : b) CHECK(std::abs(c.get<double>()) <= 1e-12);
  CHECK(fs::exists(dir.path / "out" / "resolved_config.json"));
  CHECK(fs::exists(dir.path / "out" / "geometry.json"));
}

TEST_CASE("geometry sphere riemann at theta 1") {
  TempDir dir("sphere");
  const auto r = run({"geometry", "sphere", "--riemann", "--theta", "1.0", "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  const double s2 = std::sin(1.0) * std::sin(1.0);
  CHECK(j["riemann"]["values"][0][0][1][1].get<double>() == doctest::Approx(s2).epsilon(1e-5));
  CHECK(j["riemann"]["values"][0][1][0][1].get<double>() == doctest::Approx(-s2).epsilon(1e-5));
}

TEST_CASE("geometry nn-manifold in two inputs has rank three") {
  TempDir dir("nn");
  const auto r = run({"geometry", "nn-manifold", "--d", "2", "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["rank"].get<int>() == 3);
  CHECK(j["full_rank"].get<bool>());
}

TEST_CASE("geometry bernoulli fisher matches the closed form") {
  TempDir dir("bern");
  const auto r = run({"geometry", "bernoulli", "--fisher", "--theta", "0.3", "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  const double want = 1.0 / (0.3 * 0.7);
  CHECK(j["fisher"][0][0].get<double>() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("geometry unknown id lists the known ids") {
  TempDir dir("unknown-id");
  const auto r = run({"geometry", "torus", "--out", dir.file("out")});
  CHECK(r.code == 2);
  CHECK(r.err.find("sphere") != std::string::npos);
  CHECK(r.err.find("nn-manifold") != std::string::npos);
}

TEST_CASE("bound with zero risk selects lambda one") {
  TempDir dir("bound0");
  spit(dir.file("cfg.json"), R"({"n": 1000, "epsilon": 0.05, "lambda": 0.5, "kl": 3.0, "empirical_risk": 0.0})");
  const auto r = run({"bound", "--config", dir.file("cfg.json"), "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  const json j = read_json(dir.path / "out" / "bound.json");
  CHECK(j["optimal_lambda"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fs::exists(dir.path / "out" / "resolved_config.json"));
}

TEST_CASE("bound with zero KL equals J") {
  TempDir dir("boundj");
  spit(dir.file("cfg.json"), R"({"n": 100, "epsilon": 20, "lambda": 1.0, "kl": 0.0, "empirical_risk": 0.1})");
  REQUIRE(run({"bound", "--config", dir.file("cfg.json"), "--out", dir.file("out"), "--quiet"}).code == 0);
  const json j = read_json(dir.path / "out" / "bound.json");
  CHECK(j["bound"].get<double>() == doctest::Approx(j["j"].get<double>()).epsilon(1e-12));
}

TEST_CASE("bound grid check agrees with the closed-form lambda") {
  TempDir dir("boundgrid");
  spit(dir.file("cfg.json"),
       R"({"n": 5000, "epsilon": 0.05, "lambda": 0.5, "kl": 12.0, "empirical_risk": 0.08, "grid_check": true})");
  REQUIRE(run({"bound", "--config", dir.file("cfg.json"), "--out", dir.file("out"), "--quiet"}).code == 0);
  const json j = read_json(dir.path / "out" / "bound.json");
  REQUIRE(j.contains("grid_gap"));
  CHECK(j["grid_gap"].get<double>() <= 1e-9);
}

TEST_CASE("bound rejects lambda outside (0, 2)") {
  TempDir dir("boundlam");
  for (const char* lam : {"0", "2", "2.5", "-1"}) {
    spit(dir.file("cfg.json"), std::string(R"({"n": 100, "kl": 1.0, "empirical_risk": 0.1, "lambda": )") + lam + "}");
    CHECK(run({"bound", "--config", dir.file("cfg.json"), "--out", dir.file("out")}).code == 2);
  }
}

TEST_CASE("calibrate one-hot predictions give zero ECE") {
  TempDir dir("cal0");
  spit(dir.file("p.csv"), "p0,p1,p2,label\n1,0,0,0\n0,1,0,1\n0,0,1,2\n1,0,0,0\n");
  const auto r = run({"calibrate", "--input", dir.file("p.csv"), "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["ece"].get<double>() <= 1e-9);
  CHECK(fs::exists(dir.path / "out" / "calibration_bins.csv"));
  CHECK(fs::exists(dir.path / "out" / "resolved_config.json"));
}

TEST_CASE("calibrate confident half-right predictions give 0.4") {
  TempDir dir("cal4");
  std::string rows;
  for (int i = 0; i < 10; ++i) rows += i % 2 == 0 ? "0.9,0.1,0\n" : "0.9,0.1,1\n";
  spit(dir.file("p.csv"), rows);
  const auto r = run({"calibrate", "--input", dir.file("p.csv"), "--bins", "10", "--out", dir.file("out")});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["ece"].get<double>() == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("calibrate report is invariant to row order") {
  TempDir dir("calperm");
  spit(dir.file("a.csv"), "0.7,0.3,0\n0.2,0.8,1\n0.55,0.45,1\n0.1,0.9,1\n0.6,0.4,0\n");
  spit(dir.file("b.csv"), "0.1,0.9,1\n0.55,0.45,1\n0.6,0.4,0\n0.7,0.3,0\n0.2,0.8,1\n");
  REQUIRE(run({"calibrate", "--input", dir.file("a.csv"), "--out", dir.file("a"), "--quiet"}).code == 0);
  REQUIRE(run({"calibrate", "--input", dir.file("b.csv"), "--out", dir.file("b"), "--quiet"}).code == 0);
  CHECK(slurp(dir.path / "a" / "calibration.json") == slurp(dir.path / "b" / "calibration.json"));
  CHECK(slurp(dir.path / "a" / "calibration_bins.csv") == slurp(dir.path / "b" / "calibration_bins.csv"));
}

TEST_CASE("calibrate rejects a row that does not sum to one") {
  TempDir dir("calbad");
  spit(dir.file("p.csv"), "p0,p1,label\n0.5,0.5,0\n0.6,0.6,1\n");
  const auto r = run({"calibrate", "--input", dir.file("p.csv"), "--out", dir.file("out")});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3") != std::string::npos);
}

TEST_CASE("calibrate reads its inputs from a config file") {
  TempDir dir("calcfg");
  spit(dir.file("p.csv"), "0.9,0.1,0\n0.9,0.1,1\n");
  spit(dir.file("cfg.json"), json{{"input", dir.file("p.csv")}, {"bins", 5}}.dump());
  REQUIRE(run({"calibrate", "--config", dir.file("cfg.json"), "--out", dir.file("out"), "--quiet"}).code == 0);
  CHECK(read_json(dir.path / "out" / "resolved_config.json")["bins"].get<int>() == 5);
}

TEST_CASE("help exits 0 and bad usage exits 2") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"sweep"}).code == 2);
}
