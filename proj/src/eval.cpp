#include "longattack/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "longattack/optimizer.hpp"
#include "longattack/parallel.hpp"
#include "longattack/rng.hpp"

namespace longattack::eval {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kTagInit = 1,
  kTagEpoch = 2,
  kTagFolds = 3,
  kTagSource = 4,
  kTagTarget = 5,
  kTagDefended = 6,
  kTagAttack = 7,
};

struct Sample {
  Tensor prior;
  Tensor current;
  std::size_t label;
};

Tensor flip_rows(const Tensor& image) {
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  const auto d = image.data();
  std::vector<double> out(d.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>((ch * h + (h - 1 - y)) * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w));
  return Tensor(image.shape(), std::move(out));
}

Tensor rotate_half_turn(const Tensor& image) {
  const std::size_t c = image.shape()[0], plane = image.shape()[1] * image.shape()[2];
  const auto d = image.data();
  std::vector<double> out(d.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = d[ch * plane + (plane - 1 - i)];
  return Tensor(image.shape(), std::move(out));
}

Sample augment(const data::ExamPair& p, Rng& rng, const TrainConfig& cfg) {
  // Both draws happen regardless of the toggles so the shuffle stream does
  // not depend on them.
  const bool flip = rng.coin() && cfg.flip;
  const bool rotate = rng.coin() && cfg.rotate;
  Sample s{p.prior, p.current, static_cast<std::size_t>(p.label)};
  if (flip) {
    s.prior = flip_rows(s.prior);
    s.current = flip_rows(s.current);
  }
  if (rotate) {
    s.prior = rotate_half_turn(s.prior);
    s.current = rotate_half_turn(s.current);
  }
  return s;
}

Tensor sample_logits(const nn::SourceModel& m, const Tensor&, const Tensor& current) { return m.logits(current); }
Tensor sample_logits(const nn::TargetModel& m, const Tensor& prior, const Tensor& current) {
  return m.logits(prior, current);
}

Tensor bim_current(const nn::SourceModel& m, const Sample& s, const attacks::AttackConfig& cfg) {
  attacks::SourceSurrogate surrogate(m);
  return attacks::ifgsm_trajectory(surrogate, s.current, s.label, cfg).iterates.back().image;
}
Tensor bim_current(const nn::TargetModel& m, const Sample& s, const attacks::AttackConfig& cfg) {
  attacks::TargetCurrentSurrogate surrogate(m, s.prior);
  return attacks::ifgsm_trajectory(surrogate, s.current, s.label, cfg).iterates.back().image;
}

template <typename Model>
double mean_loss(const Model& model, std::span<const data::ExamPair> pairs) {
  double total = 0.0;
  for (const auto& p : pairs)
    total += cross_entropy(sample_logits(model, p.prior, p.current), static_cast<std::size_t>(p.label)).item();
  return total / static_cast<double>(pairs.size());
}

template <typename Model>
TrainStats fit(Model& model, std::span<const data::ExamPair> pairs, const TrainConfig& cfg, std::size_t epochs,
               std::size_t batch_size, const AdversarialTrainingConfig* adv) {
  if (pairs.empty()) throw TrainingError("training set is empty");
  std::vector<Tensor> params = model.parameters();
  OptimizerState opt = OptimizerState::adam(adv && adv->learning_rate ? *adv->learning_rate : cfg.learning_rate);
  TrainStats stats;
  stats.initial_loss = mean_loss(model, pairs);

  attacks::AttackConfig bim;
  if (adv) {
    bim.attack = attacks::AttackKind::ifgsm;
    bim.epsilon = adv->epsilon;
    bim.iterations = adv->iterations;
  }

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {kTagEpoch, epoch}));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;

    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::vector<Sample> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(augment(pairs[order[i]], rng, cfg));

      std::vector<Tensor> adv_current;
      if (adv) {
        adv_current.resize(batch.size());
        parallel_for(batch.size(), [&](std::size_t i) { adv_current[i] = bim_current(model, batch[i], bim); });
      }

      GradTape tape;
      Tensor loss;
      {
        GradTape::Recording rec(tape);
        std::vector<Tensor> terms;
        for (const auto& s : batch) terms.push_back(cross_entropy(sample_logits(model, s.prior, s.current), s.label));
        for (std::size_t i = 0; i < adv_current.size(); ++i)
          terms.push_back(cross_entropy(sample_logits(model, batch[i].prior, adv_current[i]), batch[i].label));
        Tensor total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
        loss = scale(total, 1.0 / static_cast<double>(terms.size()));
      }
      const double value = loss.item();
      if (!std::isfinite(value))
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch + 1));
      const auto grads = backward(loss, tape, params);
      optimizer_step(params, grads, opt);
      epoch_total += value * static_cast<double>(batch.size());
      epoch_count += batch.size();
    }
    stats.epoch_losses.push_back(epoch_total / static_cast<double>(epoch_count));
  }
  stats.final_loss = stats.epoch_losses.empty() ? stats.initial_loss : stats.epoch_losses.back();
  return stats;
}

template <typename Model>
Trained<Model> train_plain(std::span<const data::ExamPair> pairs, const nn::BackboneConfig& backbone,
                           const TrainConfig& cfg) {
  cfg.validate();
  Trained<Model> t{Model(backbone, derive_seed(cfg.seed, {kTagInit})), {}};
  t.stats = fit(t.model, pairs, cfg, cfg.epochs, cfg.batch_size, nullptr);
  return t;
}

template <typename Model>
Trained<Model> train_adversarial(std::span<const data::ExamPair> pairs, const nn::BackboneConfig& backbone,
                                 const TrainConfig& cfg, const Model* init) {
  cfg.validate();
  if (!cfg.adversarial_training) throw std::invalid_argument("adversarial training requested without its settings");
  const auto& adv = *cfg.adversarial_training;
  Trained<Model> t{adv.warm_start && init ? *init : Model(backbone, derive_seed(cfg.seed, {kTagInit})), {}};
  if (t.model.config() != backbone) throw std::invalid_argument("initial model does not match the backbone config");
  t.stats = fit(t.model, pairs, cfg, adv.epochs, adv.batch_size, &adv);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void AdversarialTrainingConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 2.0)) throw std::invalid_argument("adversarial_training.epsilon must lie in [0, 2]");
  if (batch_size == 0) throw std::invalid_argument("adversarial_training.batch_size must be positive");
  if (iterations == 0) throw std::invalid_argument("adversarial_training.iterations must be positive");
  if (epochs == 0) throw std::invalid_argument("adversarial_training.epochs must be positive");
  if (learning_rate && !(*learning_rate > 0.0 && std::isfinite(*learning_rate)))
    throw std::invalid_argument("adversarial_training.learning_rate must be positive");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train.epochs must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train.learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
  if (adversarial_training) adversarial_training->validate();
}

void ExperimentSettings::validate() const {
  model.validate();
  train.validate();
  if (folds < 2) throw std::invalid_argument("evaluation.folds must be at least 2");
  for (const auto& a : attacks) {
    a.validate();
    if (a.attack == attacks::AttackKind::none) throw std::invalid_argument("`none` is always run; do not list it");
  }
  for (std::size_t i = 0; i < attacks.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (attacks[i].attack == attacks[j].attack)
        throw std::invalid_argument("attack listed twice: " + std::string(attacks::attack_name(attacks[i].attack)));
}

void SweepGrid::validate() const {
  if (iterations.empty() || epsilon.empty()) throw std::invalid_argument("sweep grid must be nonempty on both axes");
  for (auto t : iterations)
    if (t == 0) throw std::invalid_argument("sweep iterations must be positive");
  for (auto e : epsilon)
    if (!(e >= 0.0 && e <= 2.0)) throw std::invalid_argument("sweep epsilon must lie in [0, 2]");
}

// ---------------------------------------------------------------------------
// Training

Trained<nn::SourceModel> train_source(std::span<const data::ExamPair> pairs, const nn::BackboneConfig& backbone,
                                      const TrainConfig& cfg) {
  return train_plain<nn::SourceModel>(pairs, backbone, cfg);
}

Trained<nn::TargetModel> train_target(std::span<const data::ExamPair> pairs, const nn::BackboneConfig& backbone,
                                      const TrainConfig& cfg) {
  return train_plain<nn::TargetModel>(pairs, backbone, cfg);
}

Trained<nn::SourceModel> adversarial_train_source(std::span<const data::ExamPair> pairs,
                                                  const nn::BackboneConfig& backbone, const TrainConfig& cfg,
                                                  const nn::SourceModel* init) {
  return train_adversarial<nn::SourceModel>(pairs, backbone, cfg, init);
}

Trained<nn::TargetModel> adversarial_train_target(std::span<const data::ExamPair> pairs,
                                                  const nn::BackboneConfig& backbone, const TrainConfig& cfg,
                                                  const nn::TargetModel* init) {
  return train_adversarial<nn::TargetModel>(pairs, backbone, cfg, init);
}

// ---------------------------------------------------------------------------
// Metrics

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("compute_auc: scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1)
      ++pos;
    else if (l == 0)
      ++neg;
    else
      throw std::invalid_argument("compute_auc: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("compute_auc: both classes must be present");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("compute_auc: NaN score");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of the positives, with tied groups at their mean rank;
  // kept in integers so the result is exact up to the final division.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    std::size_t pos_in_group = 0;
    for (std::size_t k = i; k < j; ++k) pos_in_group += labels[idx[k]] == 1;
    rank_sum2 += pos_in_group * ((i + 1) + j);  // mean rank (i+1+j)/2, doubled
    i = j;
  }
  const double u2 = static_cast<double>(rank_sum2) - static_cast<double>(pos * (pos + 1));
  return u2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

DistanceStats cohort_distance_stats(std::span<const data::ExamPair> cohort, const nn::Backbone& backbone) {
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (const auto& p : cohort) {
    const double d = attacks::feature_distance(backbone.forward(p.prior), backbone.forward(p.current));
    sum[p.label] += d;
    ++count[p.label];
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {count[0] ? sum[0] / static_cast<double>(count[0]) : nan,
          count[1] ? sum[1] / static_cast<double>(count[1]) : nan};
}

Stat mean_std(std::span<const double> values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

// ---------------------------------------------------------------------------
// Experiment

std::vector<data::Fold> experiment_folds(std::span<const data::ExamPair> cohort, const ExperimentSettings& s) {
  return data::split_folds(cohort, s.folds, derive_seed(s.seed, {kTagFolds}));
}

const AttackResult& FoldResult::at(attacks::AttackKind kind) const {
  if (kind == attacks::AttackKind::none) return clean;
  for (const auto& [k, r] : attacks)
    if (k == kind) return r;
  throw std::out_of_range("fold " + std::to_string(fold) + " has no result for " +
                          std::string(attacks::attack_name(kind)));
}

FoldModels train_fold_models(std::span<const data::ExamPair> train, const ExperimentSettings& settings,
                             std::size_t fold) {
  const auto started = std::chrono::steady_clock::now();
  TrainConfig cfg = settings.train;
  cfg.seed = derive_seed(settings.seed, {kTagSource, fold});
  auto source = train_source(train, settings.model, cfg);
  cfg.seed = derive_seed(settings.seed, {kTagTarget, fold});
  auto target = train_target(train, settings.model, cfg);

  FoldModels m{std::move(source.model), std::move(target.model), std::nullopt, source.stats, target.stats,
               std::nullopt};
  if (settings.defended) {
    cfg.seed = derive_seed(settings.seed, {kTagDefended, fold});
    if (!cfg.adversarial_training) cfg.adversarial_training = AdversarialTrainingConfig{};
    auto defended = adversarial_train_target(train, settings.model, cfg, &m.target);
    m.defended = std::move(defended.model);
    m.defended_stats = defended.stats;
  }
  m.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return m;
}

AttackResult evaluate_attack(const FoldModels& models, std::span<const data::ExamPair> test,
                             std::span<const std::size_t> cohort_indices, const attacks::AttackConfig& attack,
                             std::uint64_t experiment_seed, std::size_t fold) {
  if (test.size() != cohort_indices.size()) throw std::invalid_argument("evaluate_attack: index list size mismatch");
  const std::size_t n = test.size();
  std::vector<double> source_score(n), target_score(n), defended_score(n), distance(n);
  std::vector<int> labels(n), fooled(n);
  const attacks::SourceSurrogate surrogate(models.source);

  parallel_for(n, [&](std::size_t i) {
    const auto& p = test[i];
    const std::uint64_t seed = derive_seed(attack.seed, {kTagAttack, experiment_seed, fold, cohort_indices[i],
                                                         static_cast<std::uint64_t>(attack.attack)});
    const auto ex =
        attacks::run_attack(surrogate, p.current, p.prior, static_cast<std::size_t>(p.label), attack, seed);
    source_score[i] = ex.source_prediction[1];
    target_score[i] = models.target.probabilities(p.prior, ex.image)[1];
    if (models.defended) defended_score[i] = models.defended->probabilities(p.prior, ex.image)[1];
    distance[i] = ex.feature_distance_to_prior;
    labels[i] = p.label;
    fooled[i] = ex.success;
  });

  AttackResult r;
  r.source_auc = compute_auc(source_score, labels);
  r.target_auc = compute_auc(target_score, labels);
  if (models.defended) r.target_advtrain_auc = compute_auc(defended_score, labels);
  r.success_rate = static_cast<double>(std::accumulate(fooled.begin(), fooled.end(), 0)) / static_cast<double>(n);
  r.mean_prior_distance = std::accumulate(distance.begin(), distance.end(), 0.0) / static_cast<double>(n);
  return r;
}

Summary summarize(std::span<const FoldResult> folds) {
  Summary s;
  if (folds.empty()) return s;
  std::vector<attacks::AttackKind> kinds{attacks::AttackKind::none};
  for (const auto& [k, r] : folds[0].attacks) kinds.push_back(k);

  for (auto kind : kinds) {
    std::vector<double> src, tgt, def, succ;
    bool have_defended = true;
    for (const auto& f : folds) {
      const auto& r = f.at(kind);
      src.push_back(r.source_auc);
      tgt.push_back(r.target_auc);
      succ.push_back(r.success_rate);
      if (r.target_advtrain_auc)
        def.push_back(*r.target_advtrain_auc);
      else
        have_defended = false;
    }
    AttackSummary row{kind, mean_std(src), mean_std(tgt), std::nullopt, mean_std(succ)};
    if (have_defended) row.target_advtrain_auc = mean_std(def);
    s.rows.push_back(row);
  }
  std::vector<double> control, cancer;
  for (const auto& f : folds) {
    control.push_back(f.distance.mean_control);
    cancer.push_back(f.distance.mean_cancer);
  }
  s.distance_control = mean_std(control);
  s.distance_cancer = mean_std(cancer);
  return s;
}

CohortInfo describe_cohort(std::span<const data::ExamPair> cohort, std::string source) {
  CohortInfo info;
  info.source = std::move(source);
  info.patients = cohort.size();
  for (const auto& p : cohort) (p.label == 1 ? info.cancer : info.control)++;
  if (!cohort.empty()) {
    info.height = cohort[0].current.shape()[1];
    info.width = cohort[0].current.shape()[2];
  }
  return info;
}

namespace {

void check_cohort(std::span<const data::ExamPair> cohort, const ExperimentSettings& s) {
  for (const auto& p : cohort)
    if (p.current.shape() != s.model.input_shape())
      throw std::invalid_argument("pair " + p.patient_id + " has image shape " + shape_str(p.current.shape()) +
                                  ", model expects " + shape_str(s.model.input_shape()));
}

}  // namespace

EvalReport run_transfer_experiment(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                   std::string cohort_source) {
  settings.validate();
  check_cohort(cohort, settings);
  const auto folds = experiment_folds(cohort, settings);
  std::vector<FoldModels> models;
  for (std::size_t f = 0; f < folds.size(); ++f)
    models.push_back(train_fold_models(data::gather(cohort, folds[f].train), settings, f));
  return run_transfer_experiment(cohort, settings, models, std::move(cohort_source));
}

EvalReport run_transfer_experiment(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                   std::span<const FoldModels> models, std::string cohort_source) {
  settings.validate();
  check_cohort(cohort, settings);
  const auto folds = experiment_folds(cohort, settings);
  if (models.size() != folds.size())
    throw std::invalid_argument("run_transfer_experiment: need one trained model set per fold");
  EvalReport report;
  report.cohort = describe_cohort(cohort, std::move(cohort_source));
  report.settings = settings;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto started = std::chrono::steady_clock::now();
    const auto test = data::gather(cohort, folds[f].test);
    FoldResult fr;
    fr.fold = f;
    attacks::AttackConfig none;
    none.attack = attacks::AttackKind::none;
    fr.clean = evaluate_attack(models[f], test, folds[f].test, none, settings.seed, f);
    for (const auto& a : settings.attacks)
      fr.attacks.emplace_back(a.attack, evaluate_attack(models[f], test, folds[f].test, a, settings.seed, f));
    fr.distance = cohort_distance_stats(test, models[f].source.backbone());
    fr.seconds = models[f].train_seconds +
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.folds.push_back(std::move(fr));
  }
  report.summary = summarize(report.folds);
  return report;
}

std::vector<SweepRow> run_sweep(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                const SweepGrid& grid) {
  settings.validate();
  grid.validate();
  check_cohort(cohort, settings);
  const auto folds = experiment_folds(cohort, settings);
  std::vector<FoldModels> models;
  for (std::size_t f = 0; f < folds.size(); ++f)
    models.push_back(train_fold_models(data::gather(cohort, folds[f].train), settings, f));
  return run_sweep(cohort, settings, grid, models);
}

std::vector<SweepRow> run_sweep(std::span<const data::ExamPair> cohort, const ExperimentSettings& settings,
                                const SweepGrid& grid, std::span<const FoldModels> models) {
  settings.validate();
  grid.validate();
  const auto folds = experiment_folds(cohort, settings);
  if (models.size() != folds.size()) throw std::invalid_argument("run_sweep: need one trained model set per fold");

  // rows[((t * E + e) * A + a) * F + f]
  const std::size_t T = grid.iterations.size(), E = grid.epsilon.size(), A = settings.attacks.size(),
                    F = folds.size();
  std::vector<AttackResult> cells(T * E * A * F);
  for (std::size_t f = 0; f < F; ++f) {
    const auto test = data::gather(cohort, folds[f].test);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t a = 0; a < A; ++a) {
          attacks::AttackConfig cfg = settings.attacks[a];
          cfg.iterations = grid.iterations[t];
          cfg.epsilon = grid.epsilon[e];
          cells[((t * E + e) * A + a) * F + f] = evaluate_attack(models[f], test, folds[f].test, cfg, settings.seed, f);
        }
  }

  std::vector<SweepRow> rows;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t a = 0; a < A; ++a)
        for (int defended = 0; defended < (settings.defended ? 2 : 1); ++defended)
          for (std::size_t f = 0; f < F; ++f) {
            const auto& r = cells[((t * E + e) * A + a) * F + f];
            SweepRow row{settings.attacks[a].attack, grid.epsilon[e], grid.iterations[t], defended == 1, f,
                         defended ? r.target_advtrain_auc.value_or(std::numeric_limits<double>::quiet_NaN())
                                  : r.target_auc};
            rows.push_back(row);
          }
  return rows;
}

}  // namespace longattack::eval
