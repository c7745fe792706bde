#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "longattack/data.hpp"
#include "support.hpp"

using namespace longattack;
using namespace longattack::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("longattack_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticConfig small_cohort(std::uint64_t seed = 1) {
  SyntheticConfig c;
  c.n_cancer = 12;
  c.n_control = 10;
  c.height = 16;
  c.width = 20;
  c.seed = seed;
  return c;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_CASE("synthetic cohort shape, labels and range") {
  const auto cfg = small_cohort();
  const auto pairs = generate_synthetic_cohort(cfg);
  REQUIRE(pairs.size() == 22);
  std::size_t cancer = 0;
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    CHECK(p.prior.shape() == Shape{1, 16, 20});
    CHECK(p.current.shape() == Shape{1, 16, 20});
    for (double v : p.current.data()) CHECK((v >= -1.0 && v <= 1.0));
    cancer += p.label == 1;
    ids.insert(p.patient_id);
  }
  CHECK(cancer == 12);
  CHECK(ids.size() == 22);
}

TEST_CASE("synthetic cohort is deterministic per seed") {
  const auto a = generate_synthetic_cohort(small_cohort(3));
  const auto b = generate_synthetic_cohort(small_cohort(3));
  const auto c = generate_synthetic_cohort(small_cohort(4));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(testsupport::bitwise_equal(a[i].current, b[i].current));
    CHECK(a[i].label == b[i].label);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || !testsupport::bitwise_equal(a[i].prior, c[i].prior);
  CHECK(differs);
}

TEST_CASE("control pairs change less than cancer pairs") {
  auto cfg = small_cohort(5);
  cfg.n_cancer = cfg.n_control = 40;
  double change[2] = {0, 0};
  for (const auto& p : generate_synthetic_cohort(cfg))
    change[p.label] += testsupport::max_abs_diff(p.current, p.prior);
  CHECK(change[1] > change[0]);
}

TEST_CASE("without drift a control Current equals its Prior") {
  auto cfg = small_cohort(6);
  cfg.drift = 0.0;
  for (const auto& p : generate_synthetic_cohort(cfg))
    if (p.label == 0) CHECK(testsupport::bitwise_equal(p.prior, p.current));
}

TEST_CASE("synthetic config validation") {
  auto cfg = small_cohort();
  cfg.lesion_intensity_min = 0.1;  // below the texture amplitude
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = small_cohort();
  cfg.n_cancer = 0;
  CHECK_THROWS_AS(generate_synthetic_cohort(cfg), DataError);
  cfg = small_cohort();
  cfg.lesion_intensity_max = 5.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("normalize and quantize round trip within one quantum") {
  testsupport::Rng rng(2);
  const Tensor img = testsupport::random_tensor({1, 7, 9}, rng);
  const auto q = quantize_image(img);
  const Tensor back = normalize_image(q, 7, 9);
  CHECK(testsupport::max_abs_diff(img, back) <= 1.0 / 65535.0 + 1e-15);
  CHECK(normalize_image(std::vector<std::uint16_t>{0, 65535}, 1, 2)[0] == -1.0);
  CHECK(normalize_image(std::vector<std::uint16_t>{0, 65535}, 1, 2)[1] == 1.0);
}

TEST_CASE("PGM round trip") {
  const auto dir = scratch("pgm");
  testsupport::Rng rng(8);
  const Tensor img = testsupport::random_tensor({1, 5, 6}, rng);
  write_pgm(dir / "a.pgm", {6, 5, quantize_image(img)});
  const auto pgm = read_pgm(dir / "a.pgm");
  CHECK(pgm.width == 6);
  CHECK(pgm.height == 5);
  CHECK(testsupport::max_abs_diff(normalize_image(pgm.samples, 5, 6), img) <= 2.0 / 65535.0);
}

TEST_CASE("PGM errors") {
  const auto dir = scratch("pgm_err");
  write_file(dir / "p2.pgm", "P2\n2 2\n65535\n0 0 0 0\n");
  CHECK_THROWS_AS(read_pgm(dir / "p2.pgm"), DataError);
  write_file(dir / "maxval.pgm", std::string("P5\n1 1\n255\n") + '\x10');
  CHECK_THROWS_AS(read_pgm(dir / "maxval.pgm"), DataError);
  write_file(dir / "short.pgm", std::string("P5\n2 2\n65535\n") + "\x01\x02");
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), DataError);
  CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), DataError);
}

TEST_CASE("orient_flip mirrors right-side images") {
  const Tensor img({1, 1, 3}, {1.0, 2.0, 3.0});
  const Tensor r = orient_flip(img, Side::right);
  CHECK(r[0] == 3.0);
  CHECK(r[2] == 1.0);
  CHECK(testsupport::bitwise_equal(orient_flip(img, Side::left), img));
  CHECK(testsupport::bitwise_equal(orient_flip(r, Side::right), img));
}

TEST_CASE("write_cohort then load_manifest reproduces the cohort") {
  const auto dir = scratch("cohort");
  const auto pairs = generate_synthetic_cohort(small_cohort(9));
  const auto manifest = write_cohort(pairs, dir);
  CHECK(manifest == dir / "manifest.csv");
  const auto loaded = load_manifest(manifest);
  REQUIRE(loaded.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(loaded[i].patient_id == pairs[i].patient_id);
    CHECK(loaded[i].label == pairs[i].label);
    CHECK(loaded[i].side == pairs[i].side);
    CHECK(testsupport::max_abs_diff(loaded[i].prior, pairs[i].prior) <= 2.0 / 65535.0);
    CHECK(testsupport::max_abs_diff(loaded[i].current, pairs[i].current) <= 2.0 / 65535.0);
  }
}

TEST_CASE("manifest errors name the row") {
  const auto dir = scratch("manifest_err");
  const auto pairs = generate_synthetic_cohort(small_cohort(2));
  write_cohort(std::span(pairs).first(2), dir);
  const std::string header = std::string(kManifestHeader) + "\n";
  const std::string good = "A,images/" + pairs[0].patient_id + "_prior.pgm,images/" + pairs[0].patient_id +
                           "_current.pgm,";

  auto expect_error = [&](const std::string& body, const std::string& needle) {
    write_file(dir / "m.csv", body);
    try {
      load_manifest(dir / "m.csv");
      FAIL("no error for: " << body);
    } catch (const DataError& e) {
      INFO(std::string(e.what()));
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_error("id,a,b\n", "header");
  expect_error(header + good + "2,L\n", "row 2");
  expect_error(header + good + "1,X\n", "row 2");
  expect_error(header + good + "1,L\n" + good + "0,R\n", "duplicate");
  expect_error(header + "B,images/nope.pgm,images/nope2.pgm,1,L\n", "nope.pgm");
  expect_error(header + good + "1\n", "row 2");
}

TEST_CASE("manifest accepts a UTF-8 BOM and right-side rows") {
  const auto dir = scratch("manifest_bom");
  const auto pairs = generate_synthetic_cohort(small_cohort(2));
  write_cohort(std::span(pairs).first(1), dir);
  const std::string id = pairs[0].patient_id;
  write_file(dir / "m.csv", "\xEF\xBB\xBF" + std::string(kManifestHeader) + "\nX,images/" + id + "_prior.pgm,images/" +
                                id + "_current.pgm,1,R\n");
  const auto loaded = load_manifest(dir / "m.csv");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].side == Side::right);
}

TEST_CASE("folds partition the cohort, stratified and deterministic") {
  auto cfg = small_cohort(3);
  cfg.n_cancer = 23;
  cfg.n_control = 17;
  const auto pairs = generate_synthetic_cohort(cfg);
  for (std::size_t k : {2u, 5u, 7u}) {
    const auto folds = split_folds(pairs, k, 11);
    REQUIRE(folds.size() == k);
    std::vector<int> seen(pairs.size(), 0);
    for (const auto& f : folds) {
      CHECK(std::is_sorted(f.test.begin(), f.test.end()));
      CHECK(std::is_sorted(f.train.begin(), f.train.end()));
      CHECK(f.train.size() + f.test.size() == pairs.size());
      std::size_t cancer = 0;
      for (auto i : f.test) {
        ++seen[i];
        cancer += pairs[i].label == 1;
      }
      // Per-class counts differ by at most one between folds.
      CHECK(cancer >= 23 / k);
      CHECK(cancer <= 23 / k + 1);
      std::set<std::size_t> test(f.test.begin(), f.test.end());
      for (auto i : f.train) CHECK_FALSE(test.contains(i));
    }
    for (int s : seen) CHECK(s == 1);
    const auto again = split_folds(pairs, k, 11);
    for (std::size_t i = 0; i < k; ++i) CHECK(again[i].test == folds[i].test);
  }
  CHECK_THROWS(split_folds(pairs, 1, 0));
  CHECK_THROWS(split_folds(pairs, 41, 0));
}
