#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>

#include "longattack/checkpoint.hpp"
#include "longattack/config.hpp"
#include "longattack/report.hpp"
#include "support.hpp"

using namespace longattack;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("longattack_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

eval::EvalReport fake_report(std::size_t folds, std::vector<attacks::AttackKind> kinds) {
  eval::EvalReport r;
  r.cohort = {"synthetic", 40, 20, 20, 32, 32};
  testsupport::Rng rng(3);
  for (auto k : kinds) {
    attacks::AttackConfig a;
    a.attack = k;
    r.settings.attacks.push_back(a);
  }
  for (std::size_t f = 0; f < folds; ++f) {
    eval::FoldResult fr;
    fr.fold = f;
    auto result = [&] {
      eval::AttackResult a;
      a.source_auc = rng.uniform();
      a.target_auc = rng.uniform() / 3.0;
      a.target_advtrain_auc = rng.uniform();
      a.success_rate = rng.uniform();
      a.mean_prior_distance = rng.uniform(0, 2);
      return a;
    };
    fr.clean = result();
    for (auto k : kinds) fr.attacks.emplace_back(k, result());
    fr.distance = {rng.uniform(), rng.uniform()};
    r.folds.push_back(fr);
  }
  r.summary = eval::summarize(r.folds);
  return r;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every parameter bit for bit") {
  const auto dir = scratch("ckpt");
  const auto cfg = testsupport::tiny_backbone();
  const nn::TargetModel t(cfg, 7);
  save_checkpoint(dir / "t.ckpt", t, {"target", cfg, 7, json{{"epochs", 3}}});
  CheckpointMeta meta;
  const auto back = load_target_checkpoint(dir / "t.ckpt", &meta);
  CHECK(meta.kind == "target");
  CHECK(meta.seed == 7);
  CHECK(meta.backbone == cfg);
  CHECK(meta.training["epochs"] == 3);
  const auto a = t.named_parameters(), b = back.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(testsupport::bitwise_equal(a[i].second, b[i].second));
  }
  // The loaded model computes the same function.
  testsupport::Rng rng(1);
  const Tensor p = testsupport::random_tensor(cfg.input_shape(), rng), c = testsupport::random_tensor(cfg.input_shape(), rng);
  CHECK(t.probabilities(p, c) == back.probabilities(p, c));
}

TEST_CASE("checkpoint errors") {
  const auto dir = scratch("ckpt_err");
  const auto cfg = testsupport::tiny_backbone();
  save_checkpoint(dir / "s.ckpt", nn::SourceModel(cfg, 1), {"source", cfg, 1, json::object()});
  CHECK_THROWS_AS(load_target_checkpoint(dir / "s.ckpt"), CheckpointError);
  CHECK_NOTHROW(load_source_checkpoint(dir / "s.ckpt"));
  CHECK_THROWS_AS(load_source_checkpoint(dir / "missing.ckpt"), CheckpointError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(read_checkpoint_meta(dir / "junk.ckpt"), CheckpointError);
  // Truncated payload.
  const auto size = fs::file_size(dir / "s.ckpt");
  fs::copy_file(dir / "s.ckpt", dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", size - 8);
  CHECK_THROWS_AS(load_source_checkpoint(dir / "cut.ckpt"), CheckpointError);
}

TEST_CASE("config defaults and overrides") {
  const auto cfg = config::parse_config(json::parse(R"({
    "seed": 9,
    "cohort": {"n_cancer": 30, "n_control": 20, "drift": 0.2},
    "train": {"epochs": 3, "adversarial_training": {"epsilon": 0.05, "learning_rate": 0.0005}},
    "attack_defaults": {"epsilon": 0.02},
    "attacks": ["fgsm", {"attack": "pgd", "random_start": 0.5}],
    "evaluation": {"folds": 3, "defended": false},
    "sweep": {"epsilon": [0.01, 0.02], "attacks": ["pgd"]}
  })"));
  CHECK(cfg.seed == 9);
  CHECK(cfg.cohort.n_cancer == 30);
  CHECK(cfg.cohort.drift == 0.2);
  CHECK(cfg.train.epochs == 3);
  REQUIRE(cfg.train.adversarial_training.has_value());
  CHECK(cfg.train.adversarial_training->epsilon == 0.05);
  CHECK(cfg.train.adversarial_training->learning_rate == 0.0005);
  CHECK(cfg.train.adversarial_training->batch_size == 32);
  REQUIRE(cfg.attacks.size() == 2);
  CHECK(cfg.attacks[0].epsilon == 0.02);
  CHECK(cfg.attacks[1].random_start == 0.5);
  CHECK(cfg.attack_config(attacks::AttackKind::pgd).random_start == 0.5);
  CHECK(cfg.folds == 3);
  CHECK_FALSE(cfg.defended);
  const auto settings = cfg.settings(32, 32);
  CHECK(settings.model.height == 32);
  CHECK(cfg.sweep_settings(32, 32).attacks.size() == 1);
}

TEST_CASE("config defaults follow the published protocol") {
  const config::ExperimentConfig cfg;
  CHECK(cfg.attack_defaults.epsilon == 0.01);
  CHECK(cfg.attack_defaults.iterations == 15);
  CHECK(cfg.folds == 5);
  REQUIRE(cfg.train.adversarial_training.has_value());
  CHECK(cfg.train.adversarial_training->epsilon == 0.01);
  CHECK(cfg.train.adversarial_training->batch_size == 32);
  CHECK(cfg.attacks.size() == attacks::all_attacks().size());
}

TEST_CASE("config rejects unknown keys at every level") {
  for (const char* doc : {R"({"sed": 1})", R"({"cohort": {"n_cancers": 3}})", R"({"train": {"epoch": 3}})",
                          R"({"train": {"adversarial_training": {"eps": 0.1}}})", R"({"model": {"depth": 3}})",
                          R"({"attack_defaults": {"epsilon": 0.1, "foo": 1}})", R"({"attacks": [{"attack": "fgsm", "x": 1}]})",
                          R"({"evaluation": {"fold": 3}})", R"({"sweep": {"eps": [0.1]}})"}) {
    INFO(doc);
    CHECK_THROWS_AS(config::parse_config(json::parse(doc)), config::ConfigError);
  }
}

TEST_CASE("config rejects bad values") {
  for (const char* doc : {R"({"seed": -1})", R"({"attacks": ["bogus"]})", R"({"attacks": ["none"]})",
                          R"({"evaluation": {"folds": 1}})", R"({"attack_defaults": {"epsilon": -0.1}})",
                          R"({"train": {"learning_rate": "fast"}})", R"({"sweep": {"epsilon": []}})",
                          R"({"model": {"embedding_dim": 30}})", R"({"attacks": ["fgsm", "fgsm"]})",
                          R"({"cohort": {"manifest": "m.csv", "n_cancer": 3}})", R"([1, 2])"}) {
    INFO(doc);
    CHECK_THROWS_AS(config::parse_config(json::parse(doc)), config::ConfigError);
  }
}

TEST_CASE("resolved config parses back to the same document") {
  const auto cfg = config::parse_config(json::parse(R"({"seed": 4, "attacks": ["ifgsm", "knowledge_guided"],
    "train": {"adversarial_training": {"epsilon": 0.03}}})"));
  const json once = config::to_json(cfg);
  const json twice = config::to_json(config::parse_config(once));
  CHECK(once.dump() == twice.dump());
}

TEST_CASE("manifest paths resolve against the config directory") {
  const auto dir = scratch("cfg_manifest");
  std::ofstream(dir / "c.json") << R"({"cohort": {"manifest": "data/manifest.csv"}})";
  const auto cfg = config::load_config(dir / "c.json");
  REQUIRE(cfg.manifest.has_value());
  CHECK(*cfg.manifest == dir / "data/manifest.csv");
  CHECK_THROWS_AS(config::load_config(dir / "none.json"), config::ConfigError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(config::load_config(dir / "bad.json"), config::ConfigError);
}

TEST_CASE("report CSV round trip reproduces all numbers exactly") {
  auto r = fake_report(5, {attacks::AttackKind::fgsm, attacks::AttackKind::knowledge_guided});
  r.folds[2].distance.mean_cancer = NAN;
  r.folds[1].attacks[0].second.target_advtrain_auc.reset();
  const auto back = report::parse_report_csv(report::report_to_csv(r));
  REQUIRE(back.size() == r.folds.size());
  for (std::size_t f = 0; f < back.size(); ++f) {
    CHECK(back[f].fold == r.folds[f].fold);
    CHECK(back[f].clean == r.folds[f].clean);
    CHECK(back[f].attacks == r.folds[f].attacks);
    CHECK(back[f].distance.mean_control == r.folds[f].distance.mean_control);
  }
  CHECK(std::isnan(back[2].distance.mean_cancer));
  CHECK_THROWS_AS(report::parse_report_csv("fold,attack\n"), report::ReportError);
  CHECK_THROWS_AS(report::parse_report_csv("fold,attack,metric,value\n0,bogus,source_auc,0.5\n"), report::ReportError);
}

TEST_CASE("markdown table mirrors the results table layout") {
  const auto r = fake_report(3, {attacks::AttackKind::ifgsm, attacks::AttackKind::knowledge_guided});
  const auto md = report::report_to_markdown(r);
  CHECK(md.find("| Attack | Source Model | Target Model | Target Model (Adversarial Training) |") != std::string::npos);
  CHECK(md.find("| No Adversarial Attack |") != std::string::npos);
  CHECK(md.find("| I-FGSM |") != std::string::npos);
  CHECK(md.find("| Knowledge-guided (proposed) |") != std::string::npos);
  CHECK(std::regex_search(md, std::regex(R"(\| \d\.\d{3} ± \d\.\d{3} \|)")));
  CHECK(report::format_stat({0.2049, 0.04}) == "0.205 ± 0.040");
}

TEST_CASE("an empty attack list gives only the clean row") {
  const auto r = fake_report(2, {});
  const auto md = report::report_to_markdown(r);
  CHECK(count("\n" + md, "\n|") == 3);  // header, rule, clean row
  CHECK(md.find("No Adversarial Attack") != std::string::npos);
}

TEST_CASE("report JSON carries folds and summary") {
  auto r = fake_report(2, {attacks::AttackKind::pgd});
  r.folds[0].distance.mean_control = NAN;
  const auto j = report::report_to_json(r);
  CHECK(j["folds"].size() == 2);
  CHECK(j["folds"][0]["attacks"].contains("pgd"));
  CHECK(j["folds"][0]["distance"]["control"].is_null());
  CHECK(j["summary"]["attacks"].contains("none"));
  CHECK(j["cohort"]["patients"] == 40);
}

TEST_CASE("write_report writes the requested formats and fails on unwritable paths") {
  const auto dir = scratch("report");
  const auto r = fake_report(2, {attacks::AttackKind::fgsm});
  const std::vector<report::Format> all{report::Format::json, report::Format::csv, report::Format::markdown};
  const auto paths = report::write_report(r, dir / "out", all);
  CHECK(paths.size() == 3);
  for (const auto& p : paths) CHECK(fs::exists(p));
  std::ofstream(dir / "file") << "x";
  CHECK_THROWS(report::write_report(r, dir / "file" / "sub", all));
}

namespace {

std::vector<eval::SweepRow> decreasing_rows(std::size_t attacks_n, const std::vector<double>& eps) {
  std::vector<eval::SweepRow> rows;
  const auto& kinds = attacks::all_attacks();
  for (std::size_t a = 0; a < attacks_n; ++a)
    for (std::size_t e = 0; e < eps.size(); ++e)
      for (std::size_t f = 0; f < 2; ++f)
        rows.push_back({kinds[a], eps[e], 15, false, f, 0.9 - 0.1 * static_cast<double>(e) - 0.05 * static_cast<double>(a)});
  return rows;
}

std::vector<std::vector<std::pair<double, double>>> polylines(const std::string& svg) {
  std::vector<std::vector<std::pair<double, double>>> out;
  const std::regex line(R"re(<polyline[^>]*points="([^"]*)")re");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), line); it != std::sregex_iterator(); ++it) {
    std::vector<std::pair<double, double>> pts;
    std::stringstream ss((*it)[1].str());
    std::string pt;
    while (ss >> pt) {
      const auto comma = pt.find(',');
      pts.emplace_back(std::stod(pt.substr(0, comma)), std::stod(pt.substr(comma + 1)));
    }
    out.push_back(pts);
  }
  return out;
}

}  // namespace

TEST_CASE("sweep plot has one polyline per attack with one point per grid value") {
  const auto rows = decreasing_rows(2, {0.005, 0.01, 0.05});
  const auto svg = report::render_plot(rows, report::Axis::epsilon, false);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("http") == svg.find("http://www.w3.org/2000/svg"));  // no external assets
  const auto lines = polylines(svg);
  REQUIRE(lines.size() == 2);
  for (const auto& l : lines) {
    REQUIRE(l.size() == 3);
    // x increases and, since AUC decreases, the SVG y coordinate increases.
    for (std::size_t i = 1; i < l.size(); ++i) {
      CHECK(l[i].first > l[i - 1].first);
      CHECK(l[i].second > l[i - 1].second);
    }
  }
  CHECK(svg.find("Perturbation size") != std::string::npos);
  CHECK(svg.find("AUC") != std::string::npos);
  CHECK(svg.find("FGSM") != std::string::npos);
}

TEST_CASE("sweep plot errors on fewer than two points") {
  const auto rows = decreasing_rows(2, {0.01});
  CHECK_THROWS_AS(report::render_plot(rows, report::Axis::epsilon, false), report::ReportError);
  CHECK_THROWS_AS(report::render_plot(rows, report::Axis::epsilon, true), report::ReportError);
}

TEST_CASE("sweep CSV round trip") {
  const auto rows = decreasing_rows(3, {0.005, 0.02});
  CHECK(report::parse_sweep_csv(report::sweep_to_csv(rows)) == rows);
}
