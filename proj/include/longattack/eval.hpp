#pragma once

// Training, adversarial training, AUC and the attack-transfer experiment.
//
// Protocol per fold: train a Source model and a Target model on the training
// split (optionally an adversarially trained Target as well), craft
// adversarial Current exams against the Source model for every test pair,
// then score the Source model on the adversarial Currents and the Target
// models on (clean Prior, adversarial Current).

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "longattack/attacks.hpp"
#include "longattack/data.hpp"
#include "longattack/models.hpp"

namespace longattack::eval {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdversarialTrainingConfig {
  double epsilon = 0.01;
  std::size_t batch_size = 32;
  // BIM steps per adversarial example; step size max(eps/T, eps/10).
  std::size_t iterations = 5;
  std::size_t epochs = 4;
  // Start from the clean-trained model instead of a fresh initialization.
  bool warm_start = true;
  // Adam step size for the retraining; unset means train.learning_rate.
  std::optional<double> learning_rate;

  void validate() const;
  bool operator==(const AdversarialTrainingConfig&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 2e-3;
  std::size_t batch_size = 32;
  // Vertical mirror and 180 degree rotation, drawn per pair and epoch and
  // applied identically to both exams.
  bool flip = true;
  bool rotate = false;
  std::uint64_t seed = 0;
  std::optional<AdversarialTrainingConfig> adversarial_training;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainStats {
  double initial_loss = 0.0;  // mean loss over the training set before the first step
  double final_loss = 0.0;    // mean batch loss of the last epoch
  std::vector<double> epoch_losses;
};

template <typename Model>
struct Trained {
  Model model;
  TrainStats stats;
};

Trained<nn::SourceModel> train_source(std::span<const data::ExamPair> pairs, const nn::BackboneConfig& backbone,
                                      const TrainConfig& cfg);
Trained<nn::TargetModel> train_target(std::span<const data::ExamPair> pairs, const nn::BackboneConfig& backbone,
                                      const TrainConfig& cfg);

// Each batch is paired with I-FGSM counterparts crafted against the model
// being trained (Current exam only for the Target model); the loss is the
// mean over the 2B clean and adversarial samples. Requires
// cfg.adversarial_training. `init` seeds the weights when warm_start is set.
Trained<nn::SourceModel> adversarial_train_source(std::span<const data::ExamPair> pairs,
                                                  const nn::BackboneConfig& backbone, const TrainConfig& cfg,
                                                  const nn::SourceModel* init = nullptr);
Trained<nn::TargetModel> adversarial_train_target(std::span<const data::ExamPair> pairs,
                                                  const nn::BackboneConfig& backbone, const TrainConfig& cfg,
                                                  const nn::TargetModel* init = nullptr);

// P(score_pos > score_neg) + P(tie) / 2. Throws std::invalid_argument unless
// both classes are present.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

struct DistanceStats {
  double mean_control = 0.0;
  double mean_cancer = 0.0;
};

// Mean Euclidean distance between Prior and Current embeddings per class.
// NaN for a class with no pairs.
DistanceStats cohort_distance_stats(std::span<const data::ExamPair> cohort, const nn::Backbone& backbone);

struct ExperimentSettings {
  nn::BackboneConfig model;
  TrainConfig train;
  // Full configuration for each attack to run; `none` is implied.
  std::vector<attacks::AttackConfig> attacks;
  std::size_t folds = 5;
  // Also train and score an adversarially trained Target.
  bool defended = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FoldModels {
  nn::SourceModel source;
  nn::TargetModel target;
  std::optional<nn::TargetModel> defended;
  TrainStats source_stats;
  TrainStats target_stats;
  std::optional<TrainStats> defended_stats;
  double train_seconds = 0.0;
};

// The experiment's patient-wise folds; a pure function of the cohort labels,
// settings.folds and settings.seed.
std::vector<data::Fold> experiment_folds(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings);

FoldModels train_fold_models(std::span<const data::ExamPair> train, const ExperimentSettings& settings,
                             std::size_t fold);

struct AttackResult {
  double source_auc = 0.0;
  double target_auc = 0.0;
  std::optional<double> target_advtrain_auc;
  // Fraction of test pairs whose Source prediction is wrong after the attack.
  double success_rate = 0.0;
  // Mean Source-feature distance between adversarial Current and Prior.
  double mean_prior_distance = 0.0;

  bool operator==(const AttackResult&) const = default;
};

struct FoldResult {
  std::size_t fold = 0;
  // Clean row, same fields as an attack row.
  AttackResult clean;
  std::vector<std::pair<attacks::AttackKind, AttackResult>> attacks;
  DistanceStats distance;
  double seconds = 0.0;

  const AttackResult& at(attacks::AttackKind kind) const;
};

// Scores one attack on one fold's test pairs. Sample i of the test split
// draws its attack randomness from (attack seed, experiment seed, fold,
// cohort index, attack kind), so the same cell gives the same numbers in an
// experiment and in a sweep.
AttackResult evaluate_attack(const FoldModels& models, std::span<const data::ExamPair> test,
                             std::span<const std::size_t> cohort_indices, const attacks::AttackConfig& attack,
                             std::uint64_t experiment_seed, std::size_t fold);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across folds, 0 for one fold
};

Stat mean_std(std::span<const double> values);

struct AttackSummary {
  attacks::AttackKind attack = attacks::AttackKind::none;
  Stat source_auc;
  Stat target_auc;
  std::optional<Stat> target_advtrain_auc;
  Stat success_rate;
};

struct Summary {
  // The clean row (attack `none`) first, then attacks in run order.
  std::vector<AttackSummary> rows;
  Stat distance_control;
  Stat distance_cancer;
};

Summary summarize(std::span<const FoldResult> folds);

struct CohortInfo {
  std::string source;  // "synthetic" or the manifest path
  std::size_t patients = 0;
  std::size_t cancer = 0;
  std::size_t control = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

CohortInfo describe_cohort(std::span<const data::ExamPair> cohort, std::string source);

struct EvalReport {
  CohortInfo cohort;
  ExperimentSettings settings;
  std::vector<FoldResult> folds;
  Summary summary;
};

EvalReport run_transfer_experiment(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                   std::string cohort_source = "synthetic");
// Same experiment over models that are already trained, one entry per fold.
EvalReport run_transfer_experiment(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                   std::span<const FoldModels> models, std::string cohort_source = "synthetic");

struct SweepGrid {
  std::vector<std::size_t> iterations{15};
  std::vector<double> epsilon{0.005, 0.01, 0.02, 0.05};

  void validate() const;
};

struct SweepRow {
  attacks::AttackKind attack = attacks::AttackKind::none;
  double epsilon = 0.0;
  std::size_t iterations = 0;
  bool defended = false;
  std::size_t fold = 0;
  double auc = 0.0;  // Target AUC on (clean Prior, adversarial Current)

  bool operator==(const SweepRow&) const = default;
};

// One row per (iterations, epsilon, attack, fold), plus a defended row when
// settings.defended. The attack list comes from settings.attacks; each
// config's epsilon and iterations are overridden by the grid point.
std::vector<SweepRow> run_sweep(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                const SweepGrid& grid);

// Same sweep over models that are already trained, one entry per fold.
std::vector<SweepRow> run_sweep(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                const SweepGrid& grid, std::span<const FoldModels> models);

}  // namespace longattack::eval
