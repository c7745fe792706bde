#pragma once

// Longitudinal exam pairs: synthetic case-control cohort generation, 16-bit
// PGM + CSV manifest interchange, orientation and patient-wise folds.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "longattack/tensor.hpp"

namespace longattack::data {

enum class Side { left, right };

struct ExamPair {
  std::string patient_id;
  Tensor prior;    // [1 x h x w], normalized, left-oriented
  Tensor current;  // same shape as prior
  int label = 0;   // 0 = control, 1 = cancer
  Side side = Side::left;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticConfig {
  std::size_t n_cancer = 200;
  std::size_t n_control = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  double background_level = -0.3;
  // Peak absolute value of the per-patient tissue texture.
  double texture_amplitude = 0.25;
  // Typical radius, in pixels, of the texture structures.
  double texture_scale = 2.5;
  std::size_t texture_blobs = 14;
  double lesion_intensity_min = 0.45;
  double lesion_intensity_max = 0.65;
  double lesion_radius_min = 1.5;
  double lesion_radius_max = 2.5;
  // Peak absolute value of the benign low-frequency change between exams.
  double drift = 0.06;
  std::uint64_t seed = 0;

  // Throws DataError when the magnitudes could push pixels outside [-1, 1]
  // or the lesion would not stand above the texture.
  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

// Cancer pairs: Current = Prior + drift + lesion. Control pairs: Current =
// Prior + drift. Priors never carry a lesion. Deterministic per seed.
std::vector<ExamPair> generate_synthetic_cohort(const SyntheticConfig& cfg);

// v -> 2 v / 65535 - 1, returned as [1 x h x w].
Tensor normalize_image(std::span<const std::uint16_t> raw, std::size_t height, std::size_t width);
// Inverse of normalize_image with rounding; values are clamped to [-1, 1].
std::vector<std::uint16_t> quantize_image(const Tensor& image);

// Mirrors right-side images horizontally; left-side images are returned as is.
Tensor orient_flip(const Tensor& image, Side side);

struct Pgm {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> samples;
};

// Binary "P5", maxval 65535, big-endian samples.
Pgm read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Pgm& pgm);

inline constexpr const char* kManifestHeader = "patient_id,prior_path,current_path,label,side";

std::vector<ExamPair> load_manifest(const std::filesystem::path& path);
// Writes images/<id>_{prior,current}.pgm in acquisition orientation (right
// side mirrored back) and manifest.csv under `dir`. Returns the manifest path.
std::filesystem::path write_cohort(std::span<const ExamPair> pairs, const std::filesystem::path& dir);

struct Fold {
  std::vector<std::size_t> train;  // indices into the cohort, ascending
  std::vector<std::size_t> test;
};

// Label-stratified patient-wise k-fold partition; deterministic per seed.
std::vector<Fold> split_folds(std::span<const ExamPair> pairs, std::size_t k, std::uint64_t seed);

std::vector<ExamPair> gather(std::span<const ExamPair> pairs, std::span<const std::size_t> indices);

}  // namespace longattack::data
