#include "longattack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace longattack {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'L', 'A', 'C', 'K', 'P', 'T', '1', '\n'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json header_json(const nn::NamedParameters& params, const CheckpointMeta& meta) {
  json h;
  h["format"] = "longattack-checkpoint";
  h["version"] = 1;
  h["kind"] = meta.kind;
  h["config"] = backbone_to_json(meta.backbone);
  h["seed"] = meta.seed;
  h["training"] = meta.training;
  json list = json::array();
  for (const auto& [name, t] : params) list.push_back({name, t.shape()});
  h["parameters"] = std::move(list);
  return h;
}

void write_file(const std::filesystem::path& path, const nn::NamedParameters& params, const CheckpointMeta& meta) {
  const std::string header = header_json(params, meta).dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : params) {
    const auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError(path.string() + ": write failed");
}

struct RawCheckpoint {
  json header;
  std::vector<double> values;
};

RawCheckpoint read_file(const std::filesystem::path& path, bool with_values) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 26)) throw CheckpointError(path.string() + ": bad header length");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = json::parse(header);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  if (raw.header.value("format", "") != "longattack-checkpoint" || raw.header.value("version", 0) != 1)
    throw CheckpointError(path.string() + ": unsupported checkpoint format");
  if (with_values) {
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(double) != 0) throw CheckpointError(path.string() + ": parameter blob size is not a multiple of 8");
    raw.values.resize(bytes.size() / sizeof(double));
    std::memcpy(raw.values.data(), bytes.data(), bytes.size());
  }
  return raw;
}

CheckpointMeta meta_from(const json& h, const std::filesystem::path& path) {
  try {
    CheckpointMeta m;
    m.kind = h.at("kind").get<std::string>();
    m.backbone = backbone_from_json(h.at("config"));
    m.seed = h.at("seed").get<std::uint64_t>();
    m.training = h.at("training");
    return m;
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
}

void fill(const nn::NamedParameters& params, const RawCheckpoint& raw, const std::filesystem::path& path) {
  const auto& listed = raw.header.at("parameters");
  if (listed.size() != params.size())
    throw CheckpointError(path.string() + ": parameter count " + std::to_string(listed.size()) + ", model expects " +
                          std::to_string(params.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (listed[i].at(0).get<std::string>() != name || listed[i].at(1).get<Shape>() != t.shape())
      throw CheckpointError(path.string() + ": parameter " + std::to_string(i) + " is " + listed[i].dump() +
                            ", model expects [\"" + name + "\"," + json(t.shape()).dump() + "]");
    offset += t.numel();
  }
  if (offset != raw.values.size())
    throw CheckpointError(path.string() + ": parameter blob holds " + std::to_string(raw.values.size()) +
                          " values, expected " + std::to_string(offset));
  offset = 0;
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    auto d = handle.mutable_data();
    std::copy_n(raw.values.begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }
}

template <typename Model>
Model load(const std::filesystem::path& path, const char* kind, CheckpointMeta* meta_out) {
  const RawCheckpoint raw = read_file(path, true);
  CheckpointMeta meta = meta_from(raw.header, path);
  if (meta.kind != kind) throw CheckpointError(path.string() + ": holds a " + meta.kind + " model, expected " + kind);
  Model model(meta.backbone, meta.seed);
  fill(model.named_parameters(), raw, path);
  if (meta_out) *meta_out = std::move(meta);
  return model;
}

}  // namespace

json backbone_to_json(const nn::BackboneConfig& cfg) {
  json j;
  j["in_channels"] = cfg.in_channels;
  j["height"] = cfg.height;
  j["width"] = cfg.width;
  j["stage_channels"] = cfg.stage_channels;
  j["embedding_dim"] = cfg.embedding_dim;
  j["heads"] = cfg.heads;
  j["tokens"] = cfg.tokens;
  return j;
}

nn::BackboneConfig backbone_from_json(const json& j) {
  nn::BackboneConfig cfg;
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.height = j.at("height").get<std::size_t>();
  cfg.width = j.at("width").get<std::size_t>();
  cfg.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  cfg.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.tokens = j.at("tokens").get<std::size_t>();
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const nn::SourceModel& model, const CheckpointMeta& meta) {
  CheckpointMeta m = meta;
  m.kind = "source";
  m.backbone = model.config();
  write_file(path, model.named_parameters(), m);
}

void save_checkpoint(const std::filesystem::path& path, const nn::TargetModel& model, const CheckpointMeta& meta) {
  CheckpointMeta m = meta;
  m.kind = "target";
  m.backbone = model.config();
  write_file(path, model.named_parameters(), m);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  return meta_from(read_file(path, false).header, path);
}

nn::SourceModel load_source_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  return load<nn::SourceModel>(path, "source", meta);
}

nn::TargetModel load_target_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  return load<nn::TargetModel>(path, "target", meta);
}

}  // namespace longattack
