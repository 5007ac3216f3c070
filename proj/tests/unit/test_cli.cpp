#include <doctest.h>

#include <fstream>
#include <sstream>

#include "climemu/cli.hpp"
#include "climemu/dataset.hpp"
#include "climemu/emulator.hpp"
#include "climemu/hash.hpp"
#include "support.hpp"

using namespace climemu;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
  json error() const { return json::parse(err.substr(err.rfind('{'))); }
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits 0") {
  const auto r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("synth") != std::string::npos);
}

TEST_CASE("synth twice with the same seed is byte-identical") {
  testing::TempDir tmp;
  const auto a = cli({"synth", "--out", (tmp / "a").string(), "--seed", "4", "--n-months", "48", "--grid-level", "1"});
  const auto b = cli({"synth", "--out", (tmp / "b").string(), "--seed", "4", "--n-months", "48", "--grid-level", "1"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  for (const auto& e : fs::directory_iterator(tmp / "a")) {
    const auto name = e.path().filename();
    CHECK(slurp(e.path()) == slurp(tmp / "b" / name));
  }
}

TEST_CASE("manifest hashes describe the written files") {
  testing::TempDir tmp;
  REQUIRE(cli({"synth", "--out", (tmp / "raw").string(), "--seed", "1", "--n-months", "48", "--grid-level", "1"}).code == 0);
  const auto m = read_json(tmp / "raw" / "manifest.json");
  CHECK(m["schema_version"] == 1);
  CHECK(m["stage"] == "synth");
  CHECK(m["tool"] == "climemu");
  CHECK(m["seed"] == 1);
  CHECK(m["outputs"].contains("meta.json"));
  CHECK(!m["outputs"].contains("manifest.json"));
  for (const auto& [file, hash] : m["outputs"].items())
    CHECK(hash.get<std::string>() == hash_file(tmp / "raw" / file));
  CHECK(m["outputs"] == json(hash_directory(tmp / "raw")));

  REQUIRE(cli({"preprocess", "--in", (tmp / "raw").string(), "--out", (tmp / "an").string()}).code == 0);
  const auto p = read_json(tmp / "an" / "manifest.json");
  CHECK(p["stage"] == "preprocess");
  CHECK(p["inputs"].dump().find(m["outputs"]["meta.json"].get<std::string>()) != std::string::npos);
}

TEST_CASE("hash helpers") {
  const std::string s = "hello";
  const auto h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
  CHECK(h == 0xa430d84680aabd0bULL);
  CHECK(testing::error_code_of([] { hash_file("/nonexistent/file"); }) == ErrorCode::not_found);
}

TEST_CASE("preprocessing noise-free data leaves tiny anomalies") {
  testing::TempDir tmp;
  REQUIRE(cli({"synth", "--out", (tmp / "raw").string(), "--no-noise", "--n-months", "480", "--grid-level", "1"}).code == 0);
  const auto r = cli({"preprocess", "--in", (tmp / "raw").string(), "--out", (tmp / "an").string()});
  REQUIRE(r.code == 0);
  const auto metrics = json::parse(r.out)["metrics"];
  CHECK(metrics["max_relative"].get<double>() < 1e-5);
  CHECK(read_json(tmp / "an" / "manifest.json")["metrics"] == metrics);
}

TEST_CASE("exit codes: missing input 2, validation 3") {
  testing::TempDir tmp;
  auto r = cli({"preprocess", "--in", (tmp / "nope").string(), "--out", (tmp / "x").string()});
  CHECK(r.code == kExitMissingInput);
  CHECK(r.error()["exit_code"] == 2);
  CHECK(cli({"synth", "--out", (tmp / "s").string(), "--bogus"}).code == kExitValidation);
  CHECK(cli({}).code == kExitValidation);
  CHECK(cli({"--config", (tmp / "missing.toml").string(), "synth", "--out", "x"}).code == kExitMissingInput);
  r = cli({"synth", "--out", (tmp / "s").string(), "--grid-level", "9"});
  CHECK(r.code == kExitValidation);
  r = cli({"synth", "--out", (tmp / "s").string(), "--gain", "1:tas:nothing:0.5"});
  CHECK(r.code == kExitValidation);
}

TEST_CASE("train validates its configuration with field paths") {
  testing::TempDir tmp;
  REQUIRE(cli({"synth", "--out", (tmp / "raw").string(), "--n-months", "120", "--grid-level", "0"}).code == 0);
  REQUIRE(cli({"preprocess", "--in", (tmp / "raw").string(), "--out", (tmp / "an").string()}).code == 0);
  auto r = cli({"train", "--in", (tmp / "an").string(), "--out", (tmp / "s").string(), "--epochs", "-1"});
  CHECK(r.code == kExitValidation);
  CHECK(r.error()["field_path"] == "train.epochs");
  r = cli({"train", "--in", (tmp / "raw").string(), "--out", (tmp / "s").string(), "--epochs", "1"});
  CHECK(r.code == kExitValidation);  // raw data is not accepted for training
}

TEST_CASE("config file values apply and flags win") {
  testing::TempDir tmp;
  REQUIRE(cli({"synth", "--out", (tmp / "raw").string(), "--n-months", "120", "--grid-level", "0"}).code == 0);
  REQUIRE(cli({"preprocess", "--in", (tmp / "raw").string(), "--out", (tmp / "an").string()}).code == 0);
  std::ofstream(tmp / "c.toml") << "[train]\nepochs = 2\nhidden-layers = [8]\nlags = [1, 2]\nseed = 5\n";
  const auto r = cli({"--config", (tmp / "c.toml").string(), "train", "--in", (tmp / "an").string(), "--out",
                      (tmp / "s").string(), "--epochs", "1"});
  REQUIRE(r.code == 0);
  const auto suite = load_suite(tmp / "s");
  CHECK(suite.lags() == std::vector<int>{1, 2});
  CHECK(suite.train_config["epochs"] == 1);
  CHECK(suite.train_config["hidden_layers"] == json({8}));
  CHECK(suite.train_config["seed"] == 5);

  std::ofstream(tmp / "bad.toml") << "[train]\nepochz = 2\n";
  CHECK(cli({"--config", (tmp / "bad.toml").string(), "train", "--in", (tmp / "an").string(), "--out",
             (tmp / "s2").string()}).code == kExitValidation);
}

TEST_CASE("shift-fit and evaluate write their outputs") {
  testing::TempDir tmp;
  REQUIRE(cli({"synth", "--out", (tmp / "raw").string(), "--n-months", "120", "--grid-level", "1", "--gain",
               "1:tas:sw_cre_toa:0.5"}).code == 0);
  REQUIRE(cli({"preprocess", "--in", (tmp / "raw").string(), "--out", (tmp / "an").string()}).code == 0);
  REQUIRE(cli({"shift-fit", "--in", (tmp / "an").string(), "--out", (tmp / "sh").string()}).code == 0);
  for (const auto& c : kInputChannels) CHECK(fs::exists(tmp / "sh" / (std::string(c.id) + ".shft")));
  REQUIRE(cli({"train", "--in", (tmp / "an").string(), "--out", (tmp / "s").string(), "--lags", "1,2", "--epochs",
               "1", "--hidden-layers", "8"}).code == 0);
  const auto r = cli({"evaluate", "--suite", (tmp / "s").string(), "--data", (tmp / "an").string(), "--out",
                      (tmp / "ev").string()});
  REQUIRE(r.code == 0);
  const auto report = read_json(tmp / "ev" / "report.json");
  CHECK(report["per_lag"].size() == 2u);
  CHECK(report["planted"].size() == 1u);
  CHECK(fs::exists(tmp / "ev" / "manifest.json"));
}

TEST_CASE("serve refuses artifacts from different grid levels") {
  testing::TempDir tmp;
  REQUIRE(cli({"synth", "--out", (tmp / "raw1").string(), "--n-months", "60", "--grid-level", "1"}).code == 0);
  REQUIRE(cli({"preprocess", "--in", (tmp / "raw1").string(), "--out", (tmp / "an1").string()}).code == 0);
  REQUIRE(cli({"synth", "--out", (tmp / "raw0").string(), "--n-months", "60", "--grid-level", "0"}).code == 0);
  REQUIRE(cli({"preprocess", "--in", (tmp / "raw0").string(), "--out", (tmp / "an0").string()}).code == 0);
  REQUIRE(cli({"train", "--in", (tmp / "an0").string(), "--out", (tmp / "s0").string(), "--lags", "1", "--epochs", "1",
               "--hidden-layers", "4"}).code == 0);
  const auto r = cli({"serve", "--data", (tmp / "an1").string(), "--suite", (tmp / "s0").string(), "--records",
                      (tmp / "r.jsonl").string(), "--port", "0"});
  CHECK(r.code == kExitValidation);
  CHECK(r.error()["error"] == "shape_error");
  CHECK(cli({"serve", "--data", (tmp / "nowhere").string()}).code == kExitMissingInput);
}

}  // TEST_SUITE
