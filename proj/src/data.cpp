#include "longattack/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "longattack/rng.hpp"

namespace longattack::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Synthetic cohort

void SyntheticConfig::validate() const {
  if (n_cancer == 0 || n_control == 0) throw DataError("cohort needs at least one cancer and one control pair");
  if (height < 8 || width < 8) throw DataError("synthetic images must be at least 8x8");
  if (!(texture_amplitude >= 0.0) || !(drift >= 0.0) || !(texture_scale > 0.0))
    throw DataError("texture amplitude/drift must be nonnegative and texture scale positive");
  if (!(lesion_intensity_min > 0.0 && lesion_intensity_min <= lesion_intensity_max))
    throw DataError("lesion intensity range must be positive and ordered");
  if (!(lesion_radius_min > 0.0 && lesion_radius_min <= lesion_radius_max))
    throw DataError("lesion radius range must be positive and ordered");
  if (!(lesion_intensity_min > texture_amplitude))
    throw DataError("lesion intensity must stay strictly above the texture amplitude");
  if (background_level + texture_amplitude + drift + lesion_intensity_max > 1.0)
    throw DataError("configuration can push pixels above +1");
  if (background_level - texture_amplitude - drift < -1.0)
    throw DataError("configuration can push pixels below -1");
  if (2.0 * lesion_radius_max >= 0.4 * static_cast<double>(std::min(height, width)))
    throw DataError("lesion radius too large for the image size");
}

namespace {

struct Canvas {
  std::size_t h, w;
  std::vector<double> v;
  Canvas(std::size_t h_, std::size_t w_) : h(h_), w(w_), v(h_ * w_, 0.0) {}
  double& at(std::size_t y, std::size_t x) { return v[y * w + x]; }
};

void add_gaussian(Canvas& c, double cy, double cx, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < c.h; ++y)
    for (std::size_t x = 0; x < c.w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      c.at(y, x) += amp * std::exp(-(dy * dy + dx * dx) * inv);
    }
}

// Scales the field so its peak absolute value over `mask` equals `peak`.
void normalize_peak(Canvas& c, const std::vector<bool>& mask, double peak) {
  double m = 0.0;
  for (std::size_t i = 0; i < c.v.size(); ++i)
    if (mask[i]) m = std::max(m, std::abs(c.v[i]));
  const double f = m > 0.0 ? peak / m : 0.0;
  for (auto& x : c.v) x *= f;
}

struct BreastShape {
  double cy, ax, ay;
  bool inside(double y, double x) const {
    const double u = x / ax, v = (y - cy) / ay;
    return u * u + v * v <= 1.0;
  }
};

ExamPair make_pair(const SyntheticConfig& cfg, std::size_t index, int label, Rng& rng) {
  const std::size_t h = cfg.height, w = cfg.width;
  const double H = static_cast<double>(h), W = static_cast<double>(w);
  BreastShape shape{H / 2.0 + rng.uniform(-0.05, 0.05) * H, W * rng.uniform(0.8, 0.95), H * rng.uniform(0.44, 0.5)};
  std::vector<bool> mask(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) mask[y * w + x] = shape.inside(static_cast<double>(y), static_cast<double>(x));

  auto point_inside = [&](double margin) {
    for (;;) {
      const double y = rng.uniform(0.0, H - 1.0), x = rng.uniform(0.0, W - 1.0);
      BreastShape shrunk{shape.cy, shape.ax - margin, shape.ay - margin};
      if (shrunk.ax > 0 && shrunk.ay > 0 && shrunk.inside(y, x) && x >= margin) return std::pair{y, x};
    }
  };

  Canvas texture(h, w);
  for (std::size_t b = 0; b < cfg.texture_blobs; ++b) {
    const auto [y, x] = point_inside(0.0);
    add_gaussian(texture, y, x, cfg.texture_scale * rng.uniform(0.6, 1.4), rng.uniform(-1.0, 1.0));
  }
  normalize_peak(texture, mask, cfg.texture_amplitude);

  Canvas drift(h, w);
  if (cfg.drift > 0.0) {
    const double gy = rng.uniform(-1.0, 1.0), gx = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        drift.at(y, x) = gy * (static_cast<double>(y) / H - 0.5) + gx * (static_cast<double>(x) / W - 0.5);
    const auto [by, bx] = point_inside(0.0);
    add_gaussian(drift, by, bx, W / 3.0, rng.uniform(-1.0, 1.0));
    normalize_peak(drift, mask, cfg.drift * rng.uniform(0.5, 1.0));
  }

  Canvas lesion(h, w);
  if (label == 1) {
    const double radius = rng.uniform(cfg.lesion_radius_min, cfg.lesion_radius_max);
    const auto [ly, lx] = point_inside(2.0 * radius);
    add_gaussian(lesion, ly, lx, radius, rng.uniform(cfg.lesion_intensity_min, cfg.lesion_intensity_max));
  }

  std::vector<double> prior(h * w), current(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!mask[i]) {
      prior[i] = current[i] = -1.0;
      continue;
    }
    prior[i] = cfg.background_level + texture.v[i];
    current[i] = prior[i] + drift.v[i] + lesion.v[i];
  }

  ExamPair p;
  std::ostringstream id;
  id << 'P' << std::setfill('0') << std::setw(4) << index;
  p.patient_id = id.str();
  p.prior = Tensor({1, h, w}, std::move(prior));
  p.current = Tensor({1, h, w}, std::move(current));
  p.label = label;
  p.side = rng.coin() ? Side::right : Side::left;
  return p;
}

}  // namespace

std::vector<ExamPair> generate_synthetic_cohort(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_cancer + cfg.n_control;
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(cfg.n_cancer), 1);
  Rng order(derive_seed(cfg.seed, {0}));
  order.shuffle(labels.begin(), labels.end());

  std::vector<ExamPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, {1, i}));
    pairs.push_back(make_pair(cfg, i, labels[i], rng));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Pixels

Tensor normalize_image(std::span<const std::uint16_t> raw, std::size_t height, std::size_t width) {
  if (raw.size() != height * width) throw DataError("normalize_image: sample count does not match dimensions");
  std::vector<double> v(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) v[i] = 2.0 * static_cast<double>(raw[i]) / 65535.0 - 1.0;
  return Tensor({1, height, width}, std::move(v));
}

std::vector<std::uint16_t> quantize_image(const Tensor& image) {
  std::vector<std::uint16_t> out(image.numel());
  const auto d = image.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(d[i], -1.0, 1.0);
    out[i] = static_cast<std::uint16_t>(std::lround((v + 1.0) / 2.0 * 65535.0));
  }
  return out;
}

Tensor orient_flip(const Tensor& image, Side side) {
  if (side == Side::left) return image;
  if (image.dim() != 3) throw ShapeError("orient_flip: expected [c x h x w], got " + shape_str(image.shape()));
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  const auto d = image.data();
  std::vector<double> out(d.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = d[(ch * h + y) * w + (w - 1 - x)];
  return Tensor(image.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// PGM

Pgm read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](std::size_t offset, const std::string& what) -> DataError {
    return DataError(path.string() + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail(0, "missing P5 magic");
  std::size_t pos = 2;
  auto is_space = [](unsigned char ch) { return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' || ch == '\f'; };
  auto read_number = [&](const char* field) {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail(pos, std::string("expected ") + field);
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > 1'000'000) throw fail(pos, std::string(field) + " out of range");
      ++pos;
    }
    return value;
  };
  Pgm pgm;
  pgm.width = read_number("width");
  pgm.height = read_number("height");
  const std::size_t maxval_pos = pos;
  const std::size_t maxval = read_number("maxval");
  if (pgm.width == 0 || pgm.height == 0) throw fail(maxval_pos, "zero image dimension");
  if (maxval != 65535) throw fail(maxval_pos, "maxval must be 65535, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw fail(pos, "expected whitespace after maxval");
  ++pos;
  const std::size_t n = pgm.width * pgm.height;
  if (bytes.size() - pos < 2 * n)
    throw fail(bytes.size(), "truncated pixel data (need " + std::to_string(2 * n) + " bytes from offset " +
                                 std::to_string(pos) + ")");
  pgm.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    pgm.samples[i] = static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
  return pgm;
}

void write_pgm(const fs::path& path, const Pgm& pgm) {
  if (pgm.samples.size() != pgm.width * pgm.height) throw DataError(path.string() + ": sample count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << "P5\n" << pgm.width << ' ' << pgm.height << "\n65535\n";
  std::vector<char> buf(2 * pgm.samples.size());
  for (std::size_t i = 0; i < pgm.samples.size(); ++i) {
    buf[2 * i] = static_cast<char>(pgm.samples[i] >> 8);
    buf[2 * i + 1] = static_cast<char>(pgm.samples[i] & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(path.string() + ": write failed");
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

Tensor load_image(const fs::path& path) {
  const Pgm pgm = read_pgm(path);
  return normalize_image(pgm.samples, pgm.height, pgm.width);
}

}  // namespace

std::vector<ExamPair> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open manifest");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty manifest (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  if (line != kManifestHeader)
    throw DataError(path.string() + ": bad header '" + line + "', expected '" + kManifestHeader + "'");

  const fs::path base = path.parent_path();
  struct Row {
    std::size_t number;
    std::string id;
    fs::path prior, current;
    int label;
    Side side;
  };
  std::vector<Row> rows;
  std::set<std::string> ids;
  std::vector<std::string> missing;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = path.string() + " row " + std::to_string(number);
    if (f.size() != 5) throw DataError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    Row r{number, f[0], base / f[1], base / f[2], 0, Side::left};
    if (r.id.empty()) throw DataError(where + ": empty patient_id");
    if (f[3] == "0" || f[3] == "1")
      r.label = f[3] == "1";
    else
      throw DataError(where + ": label must be 0 or 1, got '" + f[3] + "'");
    if (f[4] == "L")
      r.side = Side::left;
    else if (f[4] == "R")
      r.side = Side::right;
    else
      throw DataError(where + ": side must be L or R, got '" + f[4] + "'");
    if (!ids.insert(r.id).second) throw DataError(where + ": duplicate patient_id '" + r.id + "'");
    for (const auto& [field, file] : {std::pair{&f[1], &r.prior}, std::pair{&f[2], &r.current}})
      if (!fs::exists(*file)) missing.push_back("row " + std::to_string(number) + " (" + *field + ")");
    rows.push_back(std::move(r));
  }
  if (!missing.empty()) {
    std::string msg = path.string() + ": missing image files:";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : " ") + missing[i];
    throw DataError(msg);
  }

  std::vector<ExamPair> pairs;
  pairs.reserve(rows.size());
  for (auto& r : rows) {
    ExamPair p;
    p.patient_id = r.id;
    p.label = r.label;
    p.side = r.side;
    p.prior = orient_flip(load_image(r.prior), r.side);
    p.current = orient_flip(load_image(r.current), r.side);
    if (p.prior.shape() != p.current.shape())
      throw DataError(path.string() + " row " + std::to_string(r.number) + ": prior and current sizes differ");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

fs::path write_cohort(std::span<const ExamPair> pairs, const fs::path& dir) {
  fs::create_directories(dir / "images");
  const fs::path manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw DataError(manifest.string() + ": cannot open for writing");
  out << kManifestHeader << '\n';
  auto save = [&](const Tensor& img, Side side, const std::string& name) {
    const Tensor raw = orient_flip(img, side);  // the flip is its own inverse
    Pgm pgm{raw.shape()[2], raw.shape()[1], quantize_image(raw)};
    write_pgm(dir / "images" / name, pgm);
    return "images/" + name;
  };
  for (const auto& p : pairs) {
    if (p.patient_id.find(',') != std::string::npos) throw DataError("patient_id may not contain commas");
    const auto prior = save(p.prior, p.side, p.patient_id + "_prior.pgm");
    const auto current = save(p.current, p.side, p.patient_id + "_current.pgm");
    out << p.patient_id << ',' << prior << ',' << current << ',' << p.label << ','
        << (p.side == Side::right ? 'R' : 'L') << '\n';
  }
  if (!out) throw DataError(manifest.string() + ": write failed");
  return manifest;
}

// ---------------------------------------------------------------------------
// Folds

std::vector<Fold> split_folds(std::span<const ExamPair> pairs, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > pairs.size())
    throw std::invalid_argument("split_folds: k=" + std::to_string(k) + " must lie in [2, " +
                                std::to_string(pairs.size()) + "]");
  std::vector<std::size_t> cancer, control;
  for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].label == 1 ? cancer : control).push_back(i);
  Rng rng(seed);
  rng.shuffle(cancer.begin(), cancer.end());
  rng.shuffle(control.begin(), control.end());

  std::vector<std::size_t> fold_of(pairs.size());
  std::size_t slot = 0;
  for (auto i : cancer) fold_of[i] = slot++ % k;
  for (auto i : control) fold_of[i] = slot++ % k;

  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  return folds;
}

std::vector<ExamPair> gather(std::span<const ExamPair> pairs, std::span<const std::size_t> indices) {
  std::vector<ExamPair> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(pairs[i]);
  return out;
}

}  // namespace longattack::data
