#pragma once

// Report emission: JSON, long-form CSV, a markdown table in the layout
// "attack | Source | Target | Target (adversarial training)", the sweep CSV
// and SVG line plots of sweep results.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "longattack/eval.hpp"

namespace longattack::report {

using json = nlohmann::ordered_json;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json report_to_json(const eval::EvalReport& report);

// Header "fold,attack,metric,value". One row per number; the clean row uses
// attack "none" and the per-fold distance statistics use metrics
// "distance_control" and "distance_cancer". Values are printed with 17
// significant digits, so parsing restores them exactly; NaN is an empty field.
std::string report_to_csv(const eval::EvalReport& report);
std::vector<eval::FoldResult> parse_report_csv(const std::string& text);

// "0.205 ± 0.040"
std::string format_stat(const eval::Stat& s);
std::string report_to_markdown(const eval::EvalReport& report);

enum class Format { json, csv, markdown };

// Writes report.json, report.csv and/or report.md under `dir`; returns the
// written paths.
std::vector<std::filesystem::path> write_report(const eval::EvalReport& report, const std::filesystem::path& dir,
                                                std::span<const Format> formats);

// Header "attack,epsilon,iterations,defended,fold,auc".
std::string sweep_to_csv(std::span<const eval::SweepRow> rows);
std::vector<eval::SweepRow> parse_sweep_csv(const std::string& text);

enum class Axis { iterations, epsilon };

// One polyline per attack: mean AUC over folds against the chosen axis, with
// the other axis held at its first grid value. Throws ReportError when fewer
// than two distinct points lie along the axis.
std::string render_plot(std::span<const eval::SweepRow> rows, Axis axis, bool defended);

// Writes `text` to `path` through a temporary file and a rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace longattack::report
