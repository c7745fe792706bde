#include "longattack/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

#include "longattack/rng.hpp"

namespace longattack::config {

namespace {

constexpr std::uint64_t kCohortTag = 0xC0;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string join(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(join(where, key) + ": expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError(join(where, key) + ": expected a nonnegative integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(join(where, key) + ": expected a number");
      out = v.get<T>();
    } else {
      out = v.get<T>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(join(where, key) + ": " + e.what());
  }
}

std::vector<std::size_t> read_size_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned()) throw ConfigError(where + ": expected nonnegative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

std::vector<double> read_number_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(where + ": expected numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

attacks::AttackKind read_attack_name(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected an attack name");
  const auto kind = attacks::parse_attack(v.get<std::string>());
  if (!kind) throw ConfigError(where + ": unknown attack '" + v.get<std::string>() + "'");
  return *kind;
}

void parse_cohort(const json& j, ExperimentConfig& cfg, const std::filesystem::path& base) {
  const std::string w = "cohort";
  check_keys(j,
             {"manifest", "n_cancer", "n_control", "height", "width", "background_level", "texture_amplitude",
              "texture_scale", "texture_blobs", "lesion_intensity_min", "lesion_intensity_max", "lesion_radius_min",
              "lesion_radius_max", "drift"},
             w);
  if (j.contains("manifest")) {
    if (j.size() != 1) throw ConfigError("cohort: 'manifest' cannot be combined with synthetic settings");
    if (!j["manifest"].is_string()) throw ConfigError("cohort.manifest: expected a path");
    std::filesystem::path p = j["manifest"].get<std::string>();
    cfg.manifest = p.is_absolute() || base.empty() ? p : base / p;
    return;
  }
  auto& c = cfg.cohort;
  read(j, "n_cancer", c.n_cancer, w);
  read(j, "n_control", c.n_control, w);
  read(j, "height", c.height, w);
  read(j, "width", c.width, w);
  read(j, "background_level", c.background_level, w);
  read(j, "texture_amplitude", c.texture_amplitude, w);
  read(j, "texture_scale", c.texture_scale, w);
  read(j, "texture_blobs", c.texture_blobs, w);
  read(j, "lesion_intensity_min", c.lesion_intensity_min, w);
  read(j, "lesion_intensity_max", c.lesion_intensity_max, w);
  read(j, "lesion_radius_min", c.lesion_radius_min, w);
  read(j, "lesion_radius_max", c.lesion_radius_max, w);
  read(j, "drift", c.drift, w);
}

void parse_model(const json& j, nn::BackboneConfig& m) {
  const std::string w = "model";
  check_keys(j, {"stage_channels", "embedding_dim", "heads", "tokens"}, w);
  if (j.contains("stage_channels")) m.stage_channels = read_size_list(j["stage_channels"], "model.stage_channels");
  read(j, "embedding_dim", m.embedding_dim, w);
  read(j, "heads", m.heads, w);
  read(j, "tokens", m.tokens, w);
}

void parse_train(const json& j, eval::TrainConfig& t) {
  const std::string w = "train";
  check_keys(j, {"epochs", "learning_rate", "batch_size", "flip", "rotate", "adversarial_training"}, w);
  read(j, "epochs", t.epochs, w);
  read(j, "learning_rate", t.learning_rate, w);
  read(j, "batch_size", t.batch_size, w);
  read(j, "flip", t.flip, w);
  read(j, "rotate", t.rotate, w);
  if (j.contains("adversarial_training")) {
    const auto& a = j["adversarial_training"];
    const std::string wa = "train.adversarial_training";
    check_keys(a, {"epsilon", "batch_size", "iterations", "epochs", "warm_start", "learning_rate"}, wa);
    eval::AdversarialTrainingConfig at = t.adversarial_training.value_or(eval::AdversarialTrainingConfig{});
    read(a, "epsilon", at.epsilon, wa);
    read(a, "batch_size", at.batch_size, wa);
    read(a, "iterations", at.iterations, wa);
    read(a, "epochs", at.epochs, wa);
    read(a, "warm_start", at.warm_start, wa);
    if (a.contains("learning_rate")) {
      double lr = 0.0;
      read(a, "learning_rate", lr, wa);
      at.learning_rate = lr;
    }
    t.adversarial_training = at;
  }
}

void parse_attacks(const json& j, ExperimentConfig& cfg) {
  cfg.attacks.clear();
  if (j.is_string() && j.get<std::string>() == "all") {
    for (auto k : attacks::all_attacks()) {
      auto a = cfg.attack_defaults;
      a.attack = k;
      cfg.attacks.push_back(a);
    }
    return;
  }
  if (!j.is_array()) throw ConfigError("attacks: expected an array or \"all\"");
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = "attacks[" + std::to_string(i) + "]";
    if (j[i].is_string()) {
      auto a = cfg.attack_defaults;
      a.attack = read_attack_name(j[i], w);
      cfg.attacks.push_back(a);
    } else {
      if (!j[i].is_object() || !j[i].contains("attack")) throw ConfigError(w + ": expected a name or an object with 'attack'");
      cfg.attacks.push_back(parse_attack_config(j[i], cfg.attack_defaults, w));
    }
  }
}

void parse_sweep(const json& j, ExperimentConfig& cfg) {
  check_keys(j, {"iterations", "epsilon", "attacks"}, "sweep");
  if (j.contains("iterations")) cfg.sweep.iterations = read_size_list(j["iterations"], "sweep.iterations");
  if (j.contains("epsilon")) cfg.sweep.epsilon = read_number_list(j["epsilon"], "sweep.epsilon");
  if (j.contains("attacks")) {
    const auto& a = j["attacks"];
    if (!a.is_array()) throw ConfigError("sweep.attacks: expected an array");
    for (std::size_t i = 0; i < a.size(); ++i)
      cfg.sweep_attacks.push_back(read_attack_name(a[i], "sweep.attacks[" + std::to_string(i) + "]"));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig::ExperimentConfig() {
  train.adversarial_training = eval::AdversarialTrainingConfig{};
  for (auto k : attacks::all_attacks()) {
    auto a = attack_defaults;
    a.attack = k;
    attacks.push_back(a);
  }
}

data::SyntheticConfig ExperimentConfig::synthetic_cohort() const {
  data::SyntheticConfig c = cohort;
  c.seed = derive_seed(seed, {kCohortTag});
  return c;
}

eval::ExperimentSettings ExperimentConfig::settings(std::size_t height, std::size_t width) const {
  eval::ExperimentSettings s;
  s.model = model;
  s.model.height = height;
  s.model.width = width;
  s.train = train;
  s.attacks = attacks;
  s.folds = folds;
  s.defended = defended;
  s.seed = seed;
  return s;
}

eval::ExperimentSettings ExperimentConfig::sweep_settings(std::size_t height, std::size_t width) const {
  auto s = settings(height, width);
  if (!sweep_attacks.empty()) {
    s.attacks.clear();
    for (auto k : sweep_attacks) s.attacks.push_back(attack_config(k));
  }
  return s;
}

attacks::AttackConfig ExperimentConfig::attack_config(attacks::AttackKind kind) const {
  for (const auto& a : attacks)
    if (a.attack == kind) return a;
  auto a = attack_defaults;
  a.attack = kind;
  return a;
}

void ExperimentConfig::validate() const {
  try {
    if (!manifest) cohort.validate();
    nn::BackboneConfig m = model;
    m.validate();
    train.validate();
    attack_defaults.validate();
    if (folds < 2) throw ConfigError("evaluation.folds must be at least 2");
    if (!manifest && folds > cohort.n_cancer + cohort.n_control)
      throw ConfigError("evaluation.folds exceeds the cohort size");
    for (const auto& a : attacks) a.validate();
    for (std::size_t i = 0; i < attacks.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (attacks[i].attack == attacks[j].attack)
          throw ConfigError("attack listed twice: " + std::string(attacks::attack_name(attacks[i].attack)));
    for (const auto& a : attacks)
      if (a.attack == attacks::AttackKind::none) throw ConfigError("attacks: 'none' is always evaluated; remove it");
    for (auto k : sweep_attacks)
      if (k == attacks::AttackKind::none) throw ConfigError("sweep.attacks: 'none' cannot be swept");
    sweep.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

attacks::AttackConfig parse_attack_config(const json& j, attacks::AttackConfig a, const std::string& where) {
  check_keys(j, {"attack", "epsilon", "iterations", "step_size", "momentum", "lambda", "random_start", "seed", "norm", "cw"},
             where);
  if (j.contains("attack")) a.attack = read_attack_name(j["attack"], join(where, "attack"));
  read(j, "epsilon", a.epsilon, where);
  read(j, "iterations", a.iterations, where);
  if (j.contains("step_size")) {
    if (j["step_size"].is_null()) {
      a.step_size.reset();
    } else {
      double s = 0.0;
      read(j, "step_size", s, where);
      a.step_size = s;
    }
  }
  read(j, "momentum", a.momentum, where);
  read(j, "lambda", a.lambda, where);
  read(j, "random_start", a.random_start, where);
  read(j, "seed", a.seed, where);
  if (j.contains("norm")) {
    const auto& n = j["norm"];
    if (n == "inf" || n == "linf")
      a.norm = attacks::Norm::linf;
    else if (n == "2" || n == 2 || n == "l2")
      a.norm = attacks::Norm::l2;
    else
      throw ConfigError(join(where, "norm") + ": expected \"inf\" or \"2\"");
  }
  if (j.contains("cw")) {
    const auto& c = j["cw"];
    const std::string wc = join(where, "cw");
    check_keys(c, {"confidence", "c_min", "c_max", "binary_steps", "steps", "learning_rate"}, wc);
    read(c, "confidence", a.cw.confidence, wc);
    read(c, "c_min", a.cw.c_min, wc);
    read(c, "c_max", a.cw.c_max, wc);
    read(c, "binary_steps", a.cw.binary_steps, wc);
    read(c, "steps", a.cw.steps, wc);
    read(c, "learning_rate", a.cw.learning_rate, wc);
  }
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return a;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, {"seed", "output_dir", "cohort", "model", "train", "attack_defaults", "attacks", "evaluation", "sweep"},
             "config");
  ExperimentConfig cfg;
  read(doc, "seed", cfg.seed, "");
  if (doc.contains("output_dir")) {
    if (!doc["output_dir"].is_string()) throw ConfigError("output_dir: expected a path");
    std::filesystem::path p = doc["output_dir"].get<std::string>();
    cfg.output_dir = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
  if (doc.contains("cohort")) parse_cohort(doc["cohort"], cfg, base_dir);
  if (doc.contains("model")) parse_model(doc["model"], cfg.model);
  if (doc.contains("train")) parse_train(doc["train"], cfg.train);
  if (doc.contains("attack_defaults")) {
    cfg.attack_defaults = parse_attack_config(doc["attack_defaults"], cfg.attack_defaults, "attack_defaults");
    if (doc["attack_defaults"].contains("attack")) throw ConfigError("attack_defaults: 'attack' is not allowed here");
  }
  // Rebuild the attack list so it picks up the defaults.
  parse_attacks(doc.contains("attacks") ? doc["attacks"] : json("all"), cfg);
  if (doc.contains("evaluation")) {
    const auto& e = doc["evaluation"];
    check_keys(e, {"folds", "defended"}, "evaluation");
    read(e, "folds", cfg.folds, "evaluation");
    read(e, "defended", cfg.defended, "evaluation");
  }
  if (doc.contains("sweep")) parse_sweep(doc["sweep"], cfg);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const data::SyntheticConfig& c) {
  json j;
  j["n_cancer"] = c.n_cancer;
  j["n_control"] = c.n_control;
  j["height"] = c.height;
  j["width"] = c.width;
  j["background_level"] = c.background_level;
  j["texture_amplitude"] = c.texture_amplitude;
  j["texture_scale"] = c.texture_scale;
  j["texture_blobs"] = c.texture_blobs;
  j["lesion_intensity_min"] = c.lesion_intensity_min;
  j["lesion_intensity_max"] = c.lesion_intensity_max;
  j["lesion_radius_min"] = c.lesion_radius_min;
  j["lesion_radius_max"] = c.lesion_radius_max;
  j["drift"] = c.drift;
  return j;
}

json to_json(const nn::BackboneConfig& m) {
  json j;
  j["stage_channels"] = m.stage_channels;
  j["embedding_dim"] = m.embedding_dim;
  j["heads"] = m.heads;
  j["tokens"] = m.tokens;
  return j;
}

json to_json(const eval::TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["flip"] = t.flip;
  j["rotate"] = t.rotate;
  if (t.adversarial_training) {
    const auto& a = *t.adversarial_training;
    j["adversarial_training"] = {{"epsilon", a.epsilon},
                                 {"batch_size", a.batch_size},
                                 {"iterations", a.iterations},
                                 {"epochs", a.epochs},
                                 {"warm_start", a.warm_start}};
    if (a.learning_rate) j["adversarial_training"]["learning_rate"] = *a.learning_rate;
  }
  return j;
}

json to_json(const attacks::AttackConfig& a) {
  json j;
  j["attack"] = attacks::attack_name(a.attack);
  j["epsilon"] = a.epsilon;
  j["iterations"] = a.iterations;
  j["step_size"] = a.resolved_step_size();
  j["momentum"] = a.momentum;
  j["lambda"] = a.lambda;
  j["random_start"] = a.random_start;
  j["seed"] = a.seed;
  j["norm"] = a.norm == attacks::Norm::linf ? "inf" : "2";
  j["cw"] = {{"confidence", a.cw.confidence}, {"c_min", a.cw.c_min},   {"c_max", a.cw.c_max},
             {"binary_steps", a.cw.binary_steps}, {"steps", a.cw.steps}, {"learning_rate", a.cw.learning_rate}};
  return j;
}

json to_json(const eval::ExperimentSettings& s) {
  json j;
  j["seed"] = s.seed;
  j["model"] = to_json(s.model);
  j["model"]["input_shape"] = s.model.input_shape();
  j["train"] = to_json(s.train);
  json list = json::array();
  for (const auto& a : s.attacks) list.push_back(to_json(a));
  j["attacks"] = std::move(list);
  j["evaluation"] = {{"folds", s.folds}, {"defended", s.defended}};
  return j;
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  j["cohort"] = cfg.manifest ? json{{"manifest", cfg.manifest->string()}} : to_json(cfg.cohort);
  j["model"] = to_json(cfg.model);
  j["train"] = to_json(cfg.train);
  json defaults = to_json(cfg.attack_defaults);
  defaults.erase("attack");
  if (!cfg.attack_defaults.step_size) defaults.erase("step_size");
  j["attack_defaults"] = std::move(defaults);
  json list = json::array();
  for (const auto& a : cfg.attacks) {
    json e = to_json(a);
    if (!a.step_size) e.erase("step_size");
    list.push_back(std::move(e));
  }
  j["attacks"] = std::move(list);
  j["evaluation"] = {{"folds", cfg.folds}, {"defended", cfg.defended}};
  j["sweep"] = {{"iterations", cfg.sweep.iterations}, {"epsilon", cfg.sweep.epsilon}};
  if (!cfg.sweep_attacks.empty()) {
    json names = json::array();
    for (auto k : cfg.sweep_attacks) names.push_back(attacks::attack_name(k));
    j["sweep"]["attacks"] = std::move(names);
  }
  return j;
}

}  // namespace longattack::config
