#include "longattack/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "longattack/checkpoint.hpp"
#include "longattack/config.hpp"
#include "longattack/data.hpp"
#include "longattack/eval.hpp"
#include "longattack/parallel.hpp"
#include "longattack/report.hpp"

namespace longattack::cli {

namespace fs = std::filesystem;

namespace {

// Validation problems detected after argument parsing; exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string data_path;
};

config::ExperimentConfig load(const Common& c, bool required) {
  if (c.config_path.empty() && required) throw UsageError("--config is required");
  config::ExperimentConfig cfg = c.config_path.empty() ? config::ExperimentConfig{} : config::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
  if (!c.data_path.empty()) cfg.manifest = fs::path(c.data_path);
  return cfg;
}

struct Cohort {
  std::vector<data::ExamPair> pairs;
  std::string source;
};

Cohort load_cohort(const config::ExperimentConfig& cfg) {
  if (cfg.manifest) {
    auto pairs = data::load_manifest(*cfg.manifest);
    if (pairs.empty()) throw data::DataError(cfg.manifest->string() + ": manifest has no rows");
    for (const auto& p : pairs)
      if (p.current.shape() != pairs[0].current.shape())
        throw data::DataError(cfg.manifest->string() + ": images differ in size (" + p.patient_id + ")");
    return {std::move(pairs), cfg.manifest->string()};
  }
  return {data::generate_synthetic_cohort(cfg.synthetic_cohort()), "synthetic"};
}

std::size_t image_height(const Cohort& c) { return c.pairs.at(0).current.shape()[1]; }
std::size_t image_width(const Cohort& c) { return c.pairs.at(0).current.shape()[2]; }

void write_resolved_config(const config::ExperimentConfig& cfg) {
  report::write_text_file(cfg.output_dir / "config.resolved.json", config::to_json(cfg).dump(2) + "\n");
}

config::json stats_json(const eval::TrainStats& s, const eval::TrainConfig& cfg) {
  config::json j = config::to_json(cfg);
  j["seed"] = cfg.seed;
  j["initial_loss"] = s.initial_loss;
  j["final_loss"] = s.final_loss;
  j["epoch_losses"] = s.epoch_losses;
  return j;
}

// ---------------------------------------------------------------------------

int run_generate(const Common& c, std::ostream& out) {
  auto cfg = load(c, false);
  if (cfg.manifest) throw UsageError("generate: the config names a manifest; nothing to generate");
  const auto pairs = data::generate_synthetic_cohort(cfg.synthetic_cohort());
  const auto manifest = data::write_cohort(pairs, cfg.output_dir);
  std::size_t cancer = 0;
  for (const auto& p : pairs) cancer += p.label == 1;
  out << "wrote " << pairs.size() << " pairs (" << cancer << " cancer, " << pairs.size() - cancer << " control) to "
      << manifest.string() << "\n";
  return 0;
}

int run_train(const Common& c, const std::string& which, std::ostream& out) {
  auto cfg = load(c, false);
  if (which != "source" && which != "target" && which != "all")
    throw UsageError("--model must be source, target or all");
  const Cohort cohort = load_cohort(cfg);
  const auto settings = cfg.settings(image_height(cohort), image_width(cohort));
  settings.validate();
  fs::create_directories(cfg.output_dir);

  eval::TrainConfig tc = settings.train;
  tc.seed = derive_seed(cfg.seed, {0x7261696eULL});
  if (which == "source" || which == "all") {
    auto t = eval::train_source(cohort.pairs, settings.model, tc);
    save_checkpoint(cfg.output_dir / "source.ckpt", t.model, {"source", settings.model, derive_seed(tc.seed, {1}), stats_json(t.stats, tc)});
    out << "source: loss " << t.stats.initial_loss << " -> " << t.stats.final_loss << ", saved "
        << (cfg.output_dir / "source.ckpt").string() << "\n";
  }
  if (which == "target" || which == "all") {
    auto t = eval::train_target(cohort.pairs, settings.model, tc);
    save_checkpoint(cfg.output_dir / "target.ckpt", t.model, {"target", settings.model, derive_seed(tc.seed, {1}), stats_json(t.stats, tc)});
    out << "target: loss " << t.stats.initial_loss << " -> " << t.stats.final_loss << ", saved "
        << (cfg.output_dir / "target.ckpt").string() << "\n";
    if (settings.defended) {
      auto d = eval::adversarial_train_target(cohort.pairs, settings.model, tc, &t.model);
      save_checkpoint(cfg.output_dir / "target_advtrain.ckpt", d.model,
                      {"target", settings.model, derive_seed(tc.seed, {1}), stats_json(d.stats, tc)});
      out << "target (adversarial training): loss " << d.stats.initial_loss << " -> " << d.stats.final_loss
          << ", saved " << (cfg.output_dir / "target_advtrain.ckpt").string() << "\n";
    }
  }
  write_resolved_config(cfg);
  return 0;
}

struct AttackArgs {
  std::string source_ckpt;
  std::string target_ckpt;
  std::string attack = "knowledge_guided";
  std::optional<double> epsilon;
  std::optional<std::size_t> iterations;
  std::optional<double> lambda;
};

int run_attack(const Common& c, const AttackArgs& a, std::ostream& out) {
  auto cfg = load(c, false);
  const auto kind = attacks::parse_attack(a.attack);
  if (!kind) throw UsageError("unknown attack '" + a.attack + "'");
  attacks::AttackConfig ac = cfg.attack_config(*kind);
  if (a.epsilon) ac.epsilon = *a.epsilon;
  if (a.iterations) ac.iterations = *a.iterations;
  if (a.lambda) ac.lambda = *a.lambda;
  try {
    ac.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const nn::SourceModel source = load_source_checkpoint(a.source_ckpt);
  std::optional<nn::TargetModel> target;
  if (!a.target_ckpt.empty()) target = load_target_checkpoint(a.target_ckpt);
  const Cohort cohort = load_cohort(cfg);
  if (cohort.pairs[0].current.shape() != source.config().input_shape())
    throw data::DataError("cohort images are " + shape_str(cohort.pairs[0].current.shape()) + ", model expects " +
                          shape_str(source.config().input_shape()));

  const std::size_t n = cohort.pairs.size();
  std::vector<data::ExamPair> adversarial(n);
  std::vector<attacks::AdversarialExample> examples(n);
  const attacks::SourceSurrogate surrogate(source);
  parallel_for(n, [&](std::size_t i) {
    const auto& p = cohort.pairs[i];
    const std::uint64_t seed = derive_seed(ac.seed, {cfg.seed, i, static_cast<std::uint64_t>(ac.attack)});
    examples[i] = attacks::run_attack(surrogate, p.current, p.prior, static_cast<std::size_t>(p.label), ac, seed);
    adversarial[i] = p;
    adversarial[i].current = examples[i].image;
  });

  const fs::path dir = cfg.output_dir / ("adversarial_" + std::string(attacks::attack_name(ac.attack)));
  const auto manifest = data::write_cohort(adversarial, dir);

  std::vector<double> clean_score(n), adv_score(n), tclean(n), tadv(n);
  std::vector<int> labels(n);
  std::size_t fooled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cohort.pairs[i];
    labels[i] = p.label;
    clean_score[i] = source.probabilities(p.current)[1];
    adv_score[i] = examples[i].source_prediction[1];
    fooled += examples[i].success;
    if (target) {
      tclean[i] = target->probabilities(p.prior, p.current)[1];
      tadv[i] = target->probabilities(p.prior, examples[i].image)[1];
    }
  }
  out << attacks::attack_title(ac.attack) << ": epsilon " << ac.epsilon << ", iterations " << ac.iterations
      << ", step " << ac.resolved_step_size() << "\n";
  out << "adversarial pairs written to " << manifest.string() << "\n";
  out << "source fooled on " << fooled << " of " << n << " pairs\n";
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
  if (both) {
    out << "source AUC clean " << eval::compute_auc(clean_score, labels) << ", adversarial "
        << eval::compute_auc(adv_score, labels) << "\n";
    if (target)
      out << "target AUC clean " << eval::compute_auc(tclean, labels) << ", adversarial "
          << eval::compute_auc(tadv, labels) << "\n";
  }
  return 0;
}

std::vector<report::Format> parse_formats(const std::string& list) {
  std::vector<report::Format> formats;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "json")
      formats.push_back(report::Format::json);
    else if (item == "csv")
      formats.push_back(report::Format::csv);
    else if (item == "md" || item == "markdown")
      formats.push_back(report::Format::markdown);
    else
      throw UsageError("unknown report format '" + item + "'");
  }
  if (formats.empty()) throw UsageError("--formats is empty");
  return formats;
}

int run_evaluate(const Common& c, const std::string& format_list, std::ostream& out) {
  auto cfg = load(c, true);
  const auto formats = parse_formats(format_list);
  const Cohort cohort = load_cohort(cfg);
  const auto settings = cfg.settings(image_height(cohort), image_width(cohort));
  settings.validate();
  const auto rep = eval::run_transfer_experiment(cohort.pairs, settings, cohort.source);
  for (const auto& p : report::write_report(rep, cfg.output_dir, formats)) out << "wrote " << p.string() << "\n";
  write_resolved_config(cfg);
  out << report::report_to_markdown(rep);
  out << "prior-current feature distance: control " << report::format_stat(rep.summary.distance_control)
      << ", cancer " << report::format_stat(rep.summary.distance_cancer) << "\n";
  return 0;
}

void write_plots(const std::vector<eval::SweepRow>& rows, const fs::path& dir, std::ostream& out) {
  for (auto axis : {report::Axis::epsilon, report::Axis::iterations})
    for (bool defended : {false, true}) {
      const bool any = std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.defended == defended; });
      if (!any) continue;
      std::string svg;
      try {
        svg = report::render_plot(rows, axis, defended);
      } catch (const report::ReportError&) {
        continue;  // a single grid value along this axis
      }
      const fs::path path = dir / (std::string("sweep_") + (axis == report::Axis::epsilon ? "epsilon" : "iterations") +
                                   (defended ? "_advtrain" : "") + ".svg");
      report::write_text_file(path, svg);
      out << "wrote " << path.string() << "\n";
    }
}

int run_sweep(const Common& c, std::ostream& out) {
  auto cfg = load(c, true);
  const Cohort cohort = load_cohort(cfg);
  const auto settings = cfg.sweep_settings(image_height(cohort), image_width(cohort));
  settings.validate();
  const auto rows = eval::run_sweep(cohort.pairs, settings, cfg.sweep);
  const fs::path csv = cfg.output_dir / "sweep.csv";
  report::write_text_file(csv, report::sweep_to_csv(rows));
  out << "wrote " << csv.string() << " (" << rows.size() << " rows)\n";
  write_plots(rows, cfg.output_dir, out);
  write_resolved_config(cfg);
  return 0;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_report(const std::string& report_csv, const std::string& sweep_csv, const std::string& axis_name,
               bool defended, const std::string& out_dir, std::ostream& out) {
  if (report_csv.empty() == sweep_csv.empty()) throw UsageError("report: give exactly one of --csv or --sweep");
  if (axis_name != "epsilon" && axis_name != "iterations") throw UsageError("--axis must be epsilon or iterations");
  const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  if (!report_csv.empty()) {
    eval::EvalReport rep;
    rep.folds = report::parse_report_csv(read_text(report_csv));
    rep.summary = eval::summarize(rep.folds);
    const std::string md = report::report_to_markdown(rep);
    report::write_text_file(dir / "report.md", md);
    out << md << "wrote " << (dir / "report.md").string() << "\n";
  } else {
    const auto rows = report::parse_sweep_csv(read_text(sweep_csv));
    const auto axis = axis_name == "epsilon" ? report::Axis::epsilon : report::Axis::iterations;
    const fs::path path = dir / ("sweep_" + axis_name + (defended ? "_advtrain" : "") + ".svg");
    report::write_text_file(path, report::render_plot(rows, axis, defended));
    out << "wrote " << path.string() << "\n";
  }
  return 0;
}

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config_path, "JSON experiment configuration");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "Global seed (overrides the config)");
  cmd->add_option("--out", c.out_dir, "Output directory (overrides output_dir)");
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial attacks on longitudinal two-exam classifiers", "longattack"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  std::string which = "all";
  AttackArgs attack_args;
  std::string formats = "json,csv,md";
  std::string report_csv, sweep_csv, axis = "epsilon";
  bool defended = false;

  auto* gen = app.add_subcommand("generate", "Write a synthetic cohort as PGM images plus manifest.csv");
  add_common(gen, common, false);

  auto* train = app.add_subcommand("train", "Train models on a whole cohort and save checkpoints");
  add_common(train, common, false);
  train->add_option("--data", common.data_path, "Manifest CSV (default: synthetic cohort from the config)");
  train->add_option("--model", which, "source, target or all");

  auto* attack = app.add_subcommand("attack", "Craft adversarial Current exams against a Source checkpoint");
  add_common(attack, common, false);
  attack->add_option("--data", common.data_path, "Manifest CSV (default: synthetic cohort from the config)");
  attack->add_option("--source", attack_args.source_ckpt, "Source model checkpoint")->required();
  attack->add_option("--target", attack_args.target_ckpt, "Target model checkpoint to score the transfer");
  attack->add_option("--attack", attack_args.attack, "Attack name");
  attack->add_option("--epsilon", attack_args.epsilon, "Perturbation budget");
  attack->add_option("--iterations", attack_args.iterations, "Iterations");
  attack->add_option("--lambda", attack_args.lambda, "Distance regularization weight");

  auto* evaluate = app.add_subcommand("evaluate", "Run the cross-validated transfer experiment");
  add_common(evaluate, common, true);
  evaluate->add_option("--data", common.data_path, "Manifest CSV (default: synthetic cohort from the config)");
  evaluate->add_option("--formats", formats, "Comma list of json, csv, md");

  auto* sweep = app.add_subcommand("sweep", "Sweep epsilon and iterations; write sweep.csv and SVG plots");
  add_common(sweep, common, true);
  sweep->add_option("--data", common.data_path, "Manifest CSV (default: synthetic cohort from the config)");

  auto* rep = app.add_subcommand("report", "Rebuild a markdown table or a sweep plot from CSV output");
  rep->add_option("--csv", report_csv, "report.csv from evaluate");
  rep->add_option("--sweep", sweep_csv, "sweep.csv from sweep");
  rep->add_option("--axis", axis, "epsilon or iterations");
  rep->add_flag("--defended", defended, "Plot the adversarially trained Target");
  rep->add_option("--out", common.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(e.get_name() == "--help" ? "" : "");
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return run_generate(common, out);
    if (train->parsed()) return run_train(common, which, out);
    if (attack->parsed()) return run_attack(common, attack_args, out);
    if (evaluate->parsed()) return run_evaluate(common, formats, out);
    if (sweep->parsed()) return run_sweep(common, out);
    if (rep->parsed()) return run_report(report_csv, sweep_csv, axis, defended, common.out_dir, out);
  } catch (const std::invalid_argument& e) {
    // ConfigError, UsageError and model/attack configuration checks.
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace longattack::cli
