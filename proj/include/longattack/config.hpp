#pragma once

// JSON experiment configuration.
//
// Every object is checked against its key list and unknown keys are errors.
// Missing keys keep their defaults. Example:
//
//   {
//     "seed": 0,
//     "output_dir": "out",
//     "cohort": {"n_cancer": 200, "n_control": 200, "drift": 0.25},
//     "model": {"stage_channels": [8, 16, 16], "embedding_dim": 64, "heads": 4, "tokens": 8},
//     "train": {"epochs": 20, "learning_rate": 0.002,
//               "adversarial_training": {"epsilon": 0.05, "iterations": 5}},
//     "attack_defaults": {"epsilon": 0.05, "iterations": 15},
//     "attacks": ["fgsm", "ifgsm", {"attack": "pgd", "random_start": 0.5}],
//     "evaluation": {"folds": 5, "defended": true},
//     "sweep": {"iterations": [15], "epsilon": [0.005, 0.01, 0.02, 0.05]}
//   }
//
// "cohort" may instead hold {"manifest": "path/to/manifest.csv"}; relative
// paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "longattack/attacks.hpp"
#include "longattack/data.hpp"
#include "longattack/eval.hpp"
#include "longattack/models.hpp"

namespace longattack::config {

using json = nlohmann::ordered_json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  data::SyntheticConfig cohort;
  std::optional<std::filesystem::path> manifest;
  // Height and width follow the cohort images.
  nn::BackboneConfig model;
  eval::TrainConfig train;
  attacks::AttackConfig attack_defaults;
  std::vector<attacks::AttackConfig> attacks;
  std::size_t folds = 5;
  bool defended = true;
  eval::SweepGrid sweep;
  // Attacks for the sweep; empty means the experiment's attack list.
  std::vector<attacks::AttackKind> sweep_attacks;

  ExperimentConfig();

  // Synthetic cohort settings with the seed derived from `seed`.
  data::SyntheticConfig synthetic_cohort() const;
  // Evaluation settings; the model input shape is taken from `height` x `width`.
  eval::ExperimentSettings settings(std::size_t height, std::size_t width) const;
  // Settings restricted to the sweep's attack list.
  eval::ExperimentSettings sweep_settings(std::size_t height, std::size_t width) const;
  // An attack configuration: attack_defaults with the listed entry for
  // `kind` applied on top, if any.
  attacks::AttackConfig attack_config(attacks::AttackKind kind) const;

  // Throws ConfigError.
  void validate() const;
};

// Parses and validates. `base_dir` anchors relative paths.
ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

json to_json(const ExperimentConfig& cfg);
json to_json(const data::SyntheticConfig& cfg);
json to_json(const nn::BackboneConfig& cfg);
json to_json(const eval::TrainConfig& cfg);
json to_json(const attacks::AttackConfig& cfg);
json to_json(const eval::ExperimentSettings& settings);

// Attack configuration from `doc` laid over `base`; unknown keys rejected.
attacks::AttackConfig parse_attack_config(const json& doc, attacks::AttackConfig base, const std::string& where);

}  // namespace longattack::config
