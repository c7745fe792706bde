#include "longattack/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "longattack/config.hpp"

namespace longattack::report {

namespace {

using attacks::AttackKind;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json stat_json(const eval::Stat& s) { return {{"mean", number(s.mean)}, {"std", number(s.std)}}; }

json result_json(const eval::AttackResult& r) {
  json j;
  j["source_auc"] = number(r.source_auc);
  j["target_auc"] = number(r.target_auc);
  j["target_advtrain_auc"] = r.target_advtrain_auc ? number(*r.target_advtrain_auc) : json(nullptr);
  j["success_rate"] = number(r.success_rate);
  j["mean_prior_distance"] = number(r.mean_prior_distance);
  return j;
}

std::string g17(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ReportError("line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s, std::size_t line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ReportError("line " + std::to_string(line) + ": bad integer '" + s + "'");
  return std::stoull(s);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& header,
                                                std::size_t columns) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw ReportError("expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    fields.push_back(cur);
    if (fields.size() != columns)
      throw ReportError("line " + std::to_string(number) + ": expected " + std::to_string(columns) + " fields");
    fields.push_back(std::to_string(number));
    rows.push_back(std::move(fields));
  }
  return rows;
}

AttackKind attack_from(const std::string& name, std::size_t line) {
  const auto k = attacks::parse_attack(name);
  if (!k) throw ReportError("line " + std::to_string(line) + ": unknown attack '" + name + "'");
  return *k;
}

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// JSON

json report_to_json(const eval::EvalReport& r) {
  json j;
  j["cohort"] = {{"source", r.cohort.source},   {"patients", r.cohort.patients}, {"cancer", r.cohort.cancer},
                 {"control", r.cohort.control}, {"height", r.cohort.height},     {"width", r.cohort.width}};
  j["config"] = config::to_json(r.settings);
  json folds = json::array();
  for (const auto& f : r.folds) {
    json fj;
    fj["fold"] = f.fold;
    fj["clean"] = {{"source", number(f.clean.source_auc)},
                   {"target", number(f.clean.target_auc)},
                   {"target_advtrain", f.clean.target_advtrain_auc ? number(*f.clean.target_advtrain_auc) : json(nullptr)},
                   {"source_error_rate", number(f.clean.success_rate)},
                   {"mean_prior_distance", number(f.clean.mean_prior_distance)}};
    json attacks = json::object();
    for (const auto& [k, res] : f.attacks) attacks[std::string(attacks::attack_name(k))] = result_json(res);
    fj["attacks"] = std::move(attacks);
    fj["distance"] = {{"control", number(f.distance.mean_control)}, {"cancer", number(f.distance.mean_cancer)}};
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);

  json summary = json::object();
  json rows = json::object();
  for (const auto& row : r.summary.rows) {
    json rj;
    rj["title"] = attacks::attack_title(row.attack);
    rj["source_auc"] = stat_json(row.source_auc);
    rj["target_auc"] = stat_json(row.target_auc);
    rj["target_advtrain_auc"] = row.target_advtrain_auc ? stat_json(*row.target_advtrain_auc) : json(nullptr);
    rj["success_rate"] = stat_json(row.success_rate);
    rows[std::string(attacks::attack_name(row.attack))] = std::move(rj);
  }
  summary["attacks"] = std::move(rows);
  summary["distance"] = {{"control", stat_json(r.summary.distance_control)},
                         {"cancer", stat_json(r.summary.distance_cancer)}};
  j["summary"] = std::move(summary);
  return j;
}

// ---------------------------------------------------------------------------
// CSV

std::string report_to_csv(const eval::EvalReport& r) {
  std::string out = "fold,attack,metric,value\n";
  auto emit = [&](std::size_t fold, std::string_view attack, std::string_view metric, double v) {
    out += std::to_string(fold);
    out += ',';
    out += attack;
    out += ',';
    out += metric;
    out += ',';
    out += g17(v);
    out += '\n';
  };
  auto emit_result = [&](std::size_t fold, AttackKind kind, const eval::AttackResult& res) {
    const auto name = attacks::attack_name(kind);
    emit(fold, name, "source_auc", res.source_auc);
    emit(fold, name, "target_auc", res.target_auc);
    if (res.target_advtrain_auc) emit(fold, name, "target_advtrain_auc", *res.target_advtrain_auc);
    emit(fold, name, "success_rate", res.success_rate);
    emit(fold, name, "mean_prior_distance", res.mean_prior_distance);
  };
  for (const auto& f : r.folds) {
    emit_result(f.fold, AttackKind::none, f.clean);
    for (const auto& [k, res] : f.attacks) emit_result(f.fold, k, res);
    emit(f.fold, "none", "distance_control", f.distance.mean_control);
    emit(f.fold, "none", "distance_cancer", f.distance.mean_cancer);
  }
  return out;
}

std::vector<eval::FoldResult> parse_report_csv(const std::string& text) {
  std::vector<eval::FoldResult> folds;
  for (const auto& row : parse_csv(text, "fold,attack,metric,value", 4)) {
    const std::size_t line = std::stoull(row[4]);
    const std::size_t fold = parse_size(row[0], line);
    const AttackKind kind = attack_from(row[1], line);
    const std::string& metric = row[2];
    const double v = parse_double(row[3], line);

    auto it = std::find_if(folds.begin(), folds.end(), [&](const auto& f) { return f.fold == fold; });
    if (it == folds.end()) {
      folds.emplace_back();
      folds.back().fold = fold;
      it = folds.end() - 1;
    }
    if (metric == "distance_control" || metric == "distance_cancer") {
      (metric == "distance_control" ? it->distance.mean_control : it->distance.mean_cancer) = v;
      continue;
    }
    eval::AttackResult* res = nullptr;
    if (kind == AttackKind::none) {
      res = &it->clean;
    } else {
      auto a = std::find_if(it->attacks.begin(), it->attacks.end(), [&](const auto& p) { return p.first == kind; });
      if (a == it->attacks.end()) {
        it->attacks.emplace_back(kind, eval::AttackResult{});
        a = it->attacks.end() - 1;
      }
      res = &a->second;
    }
    if (metric == "source_auc")
      res->source_auc = v;
    else if (metric == "target_auc")
      res->target_auc = v;
    else if (metric == "target_advtrain_auc")
      res->target_advtrain_auc = v;
    else if (metric == "success_rate")
      res->success_rate = v;
    else if (metric == "mean_prior_distance")
      res->mean_prior_distance = v;
    else
      throw ReportError("line " + std::to_string(line) + ": unknown metric '" + metric + "'");
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Markdown

std::string format_stat(const eval::Stat& s) {
  if (!std::isfinite(s.mean)) return "n/a";
  return fmt(s.mean, "%.3f") + " ± " + fmt(s.std, "%.3f");
}

std::string report_to_markdown(const eval::EvalReport& r) {
  std::string out = "| Attack | Source Model | Target Model | Target Model (Adversarial Training) |\n";
  out += "|---|---|---|---|\n";
  for (const auto& row : r.summary.rows) {
    out += "| ";
    out += attacks::attack_title(row.attack);
    out += " | " + format_stat(row.source_auc);
    out += " | " + format_stat(row.target_auc);
    out += " | " + (row.target_advtrain_auc ? format_stat(*row.target_advtrain_auc) : std::string("n/a"));
    out += " |\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw ReportError(path.parent_path().string() + ": cannot create directory: " + ec.message());
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ReportError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw ReportError(path.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ReportError(path.string() + ": cannot replace file");
  }
}

std::vector<std::filesystem::path> write_report(const eval::EvalReport& report, const std::filesystem::path& dir,
                                                std::span<const Format> formats) {
  std::vector<std::filesystem::path> written;
  for (auto f : formats) {
    switch (f) {
      case Format::json:
        written.push_back(dir / "report.json");
        write_text_file(written.back(), report_to_json(report).dump(2) + "\n");
        break;
      case Format::csv:
        written.push_back(dir / "report.csv");
        write_text_file(written.back(), report_to_csv(report));
        break;
      case Format::markdown:
        written.push_back(dir / "report.md");
        write_text_file(written.back(), report_to_markdown(report));
        break;
    }
  }
  return written;
}

// ---------------------------------------------------------------------------
// Sweep

std::string sweep_to_csv(std::span<const eval::SweepRow> rows) {
  std::string out = "attack,epsilon,iterations,defended,fold,auc\n";
  for (const auto& r : rows) {
    out += attacks::attack_name(r.attack);
    out += ',' + g17(r.epsilon) + ',' + std::to_string(r.iterations) + ',' + (r.defended ? "1" : "0") + ',' +
           std::to_string(r.fold) + ',' + g17(r.auc) + '\n';
  }
  return out;
}

std::vector<eval::SweepRow> parse_sweep_csv(const std::string& text) {
  std::vector<eval::SweepRow> rows;
  for (const auto& f : parse_csv(text, "attack,epsilon,iterations,defended,fold,auc", 6)) {
    const std::size_t line = std::stoull(f[6]);
    if (f[3] != "0" && f[3] != "1") throw ReportError("line " + std::to_string(line) + ": defended must be 0 or 1");
    rows.push_back({attack_from(f[0], line), parse_double(f[1], line), parse_size(f[2], line), f[3] == "1",
                    parse_size(f[4], line), parse_double(f[5], line)});
  }
  return rows;
}

std::string render_plot(std::span<const eval::SweepRow> rows, Axis axis, bool defended) {
  // Hold the other axis at its first value in row order.
  std::vector<const eval::SweepRow*> picked;
  bool have_other = false;
  double other = 0.0;
  for (const auto& r : rows) {
    if (r.defended != defended) continue;
    const double o = axis == Axis::epsilon ? static_cast<double>(r.iterations) : r.epsilon;
    if (!have_other) {
      other = o;
      have_other = true;
    }
    if (o == other) picked.push_back(&r);
  }

  std::vector<AttackKind> order;
  std::map<AttackKind, std::map<double, std::pair<double, std::size_t>>> curves;
  std::vector<double> xs;
  for (const auto* r : picked) {
    if (std::find(order.begin(), order.end(), r->attack) == order.end()) order.push_back(r->attack);
    const double x = axis == Axis::epsilon ? r->epsilon : static_cast<double>(r->iterations);
    auto& cell = curves[r->attack][x];
    cell.first += r->auc;
    cell.second += 1;
    if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
  }
  if (xs.size() < 2)
    throw ReportError("plot needs at least two distinct " + std::string(axis == Axis::epsilon ? "epsilon" : "iteration") +
                      " values, found " + std::to_string(xs.size()));
  std::sort(xs.begin(), xs.end());

  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& [k, c] : curves)
    for (const auto& [x, cell] : c) {
      const double y = cell.first / static_cast<double>(cell.second);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  double y0 = std::floor(ymin * 10.0) / 10.0, y1 = std::ceil(ymax * 10.0) / 10.0;
  if (y1 - y0 < 0.1) y1 = y0 + 0.1;
  const double x0 = xs.front(), x1 = xs.back();

  constexpr double W = 680, H = 420, left = 70, right = 190, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000"};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W, "%.0f") + "\" height=\"" + fmt(H, "%.0f") +
         "\" viewBox=\"0 0 " + fmt(W, "%.0f") + " " + fmt(H, "%.0f") + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + fmt(W, "%.0f") + "\" height=\"" + fmt(H, "%.0f") + "\" fill=\"white\"/>\n";
  svg += "<g class=\"axes\" stroke=\"black\">\n";
  svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top + ph) + "\" x2=\"" + fmt(left + pw) + "\" y2=\"" +
         fmt(top + ph) + "\"/>\n";
  svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(top + ph) +
         "\"/>\n";
  svg += "</g>\n";
  for (double x : xs) {
    svg += "<line x1=\"" + fmt(px(x)) + "\" y1=\"" + fmt(top + ph) + "\" x2=\"" + fmt(px(x)) + "\" y2=\"" +
           fmt(top + ph + 5) + "\" stroke=\"black\"/>\n";
    svg += "<text class=\"xtick\" x=\"" + fmt(px(x)) + "\" y=\"" + fmt(top + ph + 18) + "\" text-anchor=\"middle\">" +
           fmt(x, "%g") + "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double y = y0 + (y1 - y0) * i / 5.0;
    svg += "<line x1=\"" + fmt(left - 5) + "\" y1=\"" + fmt(py(y)) + "\" x2=\"" + fmt(left) + "\" y2=\"" +
           fmt(py(y)) + "\" stroke=\"black\"/>\n";
    svg += "<text class=\"ytick\" x=\"" + fmt(left - 8) + "\" y=\"" + fmt(py(y) + 4) + "\" text-anchor=\"end\">" +
           fmt(y, "%.2f") + "</text>\n";
  }
  const std::string xlabel = axis == Axis::epsilon ? "Perturbation size (epsilon)" : "Iterations";
  svg += "<text class=\"xlabel\" x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(H - 15) + "\" text-anchor=\"middle\">" +
         xlabel + "</text>\n";
  svg += "<text class=\"ylabel\" x=\"18\" y=\"" + fmt(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         fmt(top + ph / 2) + ")\">" + (defended ? "Target AUC (adversarial training)" : "Target AUC") + "</text>\n";

  for (std::size_t i = 0; i < order.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    std::string points;
    for (const auto& [x, cell] : curves[order[i]]) {
      if (!points.empty()) points += ' ';
      points += fmt(px(x)) + "," + fmt(py(cell.first / static_cast<double>(cell.second)));
    }
    svg += "<polyline data-attack=\"" + std::string(attacks::attack_name(order[i])) + "\" fill=\"none\" stroke=\"" +
           color + "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    svg += "<line x1=\"" + fmt(left + pw + 15) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(left + pw + 40) + "\" y2=\"" +
           fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text class=\"legend\" x=\"" + fmt(left + pw + 45) + "\" y=\"" + fmt(ly + 4) + "\">" +
           escape_xml(attacks::attack_title(order[i])) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace longattack::report
