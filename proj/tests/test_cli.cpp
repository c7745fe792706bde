#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "longattack/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "longattack");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = longattack::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("longattack_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

constexpr const char* kTinyConfig = R"({
  "seed": 2,
  "cohort": {"n_cancer": 8, "n_control": 8, "height": 8, "width": 8, "texture_blobs": 4,
             "lesion_radius_min": 0.8, "lesion_radius_max": 1.0},
  "model": {"stage_channels": [3, 4], "embedding_dim": 8, "heads": 2, "tokens": 2},
  "train": {"epochs": 2, "batch_size": 8,
            "adversarial_training": {"epochs": 1, "iterations": 2, "batch_size": 8}},
  "attack_defaults": {"epsilon": 0.05, "iterations": 3},
  "attacks": ["fgsm", "knowledge_guided"],
  "evaluation": {"folds": 2},
  "sweep": {"iterations": [3], "epsilon": [0.01, 0.05]}
})";

fs::path write_config(const fs::path& dir, const std::string& text = kTinyConfig) {
  std::ofstream(dir / "c.json") << text;
  return dir / "c.json";
}

}  // namespace

TEST_CASE("usage errors exit 1 with usage text on stderr") {
  auto r = run({});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = run({"frobnicate"});
  CHECK(r.code == 1);
  r = run({"generate", "--bogus"});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = run({"evaluate"});  // --config is required
  CHECK(r.code == 1);
  r = run({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("evaluate") != std::string::npos);
}

TEST_CASE("generate writes the manifest and images and prints the count") {
  const auto dir = scratch("generate");
  const auto cfg = write_config(dir);
  const auto r = run({"generate", "--config", cfg.string(), "--out", (dir / "data").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("wrote 16 pairs") != std::string::npos);
  CHECK(fs::exists(dir / "data" / "manifest.csv"));
  std::size_t pgms = 0;
  for (const auto& e : fs::directory_iterator(dir / "data" / "images")) pgms += e.path().extension() == ".pgm";
  CHECK(pgms == 32);
}

TEST_CASE("config validation errors exit 1 and write nothing") {
  const auto dir = scratch("invalid");
  const auto cfg = write_config(dir, R"({"seed": 1, "attacks": ["fgsm"], "evaluation": {"folds": 0}})");
  const auto out = dir / "out";
  auto r = run({"evaluate", "--config", cfg.string(), "--out", out.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("folds") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
  const auto unknown = write_config(dir, R"({"seeds": 1})");
  r = run({"generate", "--config", unknown.string(), "--out", out.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("seeds") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("runtime failures exit 2") {
  const auto dir = scratch("runtime");
  std::ofstream(dir / "c.json") << R"({"cohort": {"manifest": "missing/manifest.csv"}})";
  const auto r = run({"evaluate", "--config", (dir / "c.json").string(), "--out", (dir / "out").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("manifest") != std::string::npos);
}

TEST_CASE("evaluate twice with the same seed gives byte-identical reports") {
  const auto dir = scratch("evaluate");
  const auto cfg = write_config(dir);
  const std::vector<std::string> files{"report.json", "report.csv", "report.md", "config.resolved.json"};
  const auto a = run({"evaluate", "--config", cfg.string(), "--out", (dir / "a").string()});
  REQUIRE(a.code == 0);
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(dir / "a" / f));
  const auto b = run({"evaluate", "--config", cfg.string(), "--out", (dir / "a").string()});
  REQUIRE(b.code == 0);
  for (std::size_t i = 0; i < files.size(); ++i) {
    INFO(files[i]);
    CHECK_FALSE(first[i].empty());
    CHECK(slurp(dir / "a" / files[i]) == first[i]);
  }
  CHECK(a.out.find("Target Model (Adversarial Training)") != std::string::npos);

  // A different seed changes the numbers.
  const auto c = run({"evaluate", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "3"});
  REQUIRE(c.code == 0);
  CHECK(slurp(dir / "a" / "report.csv") != slurp(dir / "c" / "report.csv"));

  // report rebuilds the table from the CSV.
  const auto rep = run({"report", "--csv", (dir / "a" / "report.csv").string(), "--out", (dir / "r").string()});
  CHECK(rep.code == 0);
  CHECK(fs::exists(dir / "r" / "report.md"));
}

TEST_CASE("train then attack with checkpoints") {
  const auto dir = scratch("attack");
  const auto cfg = write_config(dir);
  const auto out = dir / "run";
  auto r = run({"train", "--config", cfg.string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "source.ckpt"));
  CHECK(fs::exists(out / "target.ckpt"));
  CHECK(fs::exists(out / "target_advtrain.ckpt"));
  r = run({"attack", "--config", cfg.string(), "--out", out.string(), "--source", (out / "source.ckpt").string(),
           "--target", (out / "target.ckpt").string(), "--attack", "knowledge_guided", "--epsilon", "0.01",
           "--iterations", "15"});
  CHECK(r.code == 0);
  CHECK(r.out.find("epsilon 0.01, iterations 15") != std::string::npos);
  CHECK(fs::exists(out / "adversarial_knowledge_guided" / "manifest.csv"));
  r = run({"attack", "--config", cfg.string(), "--source", (out / "source.ckpt").string(), "--attack", "nope"});
  CHECK(r.code == 1);
  r = run({"attack", "--config", cfg.string(), "--source", (out / "target.ckpt").string()});
  CHECK(r.code == 2);
}

TEST_CASE("sweep writes a CSV and SVG plots; report redraws them") {
  const auto dir = scratch("sweep");
  const auto cfg = write_config(dir);
  const auto r = run({"sweep", "--config", cfg.string(), "--out", (dir / "s").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "s" / "sweep.csv"));
  CHECK(fs::exists(dir / "s" / "sweep_epsilon.svg"));
  CHECK(fs::exists(dir / "s" / "sweep_epsilon_advtrain.svg"));
  CHECK_FALSE(fs::exists(dir / "s" / "sweep_iterations.svg"));  // one iteration value only
  const auto p = run({"report", "--sweep", (dir / "s" / "sweep.csv").string(), "--axis", "epsilon", "--out",
                      (dir / "p").string()});
  CHECK(p.code == 0);
  CHECK(slurp(dir / "p" / "sweep_epsilon.svg") == slurp(dir / "s" / "sweep_epsilon.svg"));
  const auto bad = run({"report", "--sweep", (dir / "s" / "sweep.csv").string(), "--axis", "iterations", "--out",
                        (dir / "p").string()});
  CHECK(bad.code == 2);
}
