#pragma once

// Model checkpoints.
//
// Layout: the 8 bytes "LACKPT1\n", a little-endian uint64 header length, a
// JSON header of that many bytes, then every parameter as little-endian
// float64 values, concatenated in named_parameters() order. The header lists
// that order as [name, shape] entries so a reader can check it.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "longattack/models.hpp"

namespace longattack {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::string kind;  // "source" or "target"
  nn::BackboneConfig backbone;
  std::uint64_t seed = 0;
  nlohmann::ordered_json training = nlohmann::ordered_json::object();
};

nlohmann::ordered_json backbone_to_json(const nn::BackboneConfig& cfg);
nn::BackboneConfig backbone_from_json(const nlohmann::ordered_json& j);

void save_checkpoint(const std::filesystem::path& path, const nn::SourceModel& model, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const nn::TargetModel& model, const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
nn::SourceModel load_source_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
nn::TargetModel load_target_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace longattack
