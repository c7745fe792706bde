#pragma once

// Source (single exam) and Target (Prior + Current) classifiers.
//
// Both share the same backbone design: stride-2 3x3 conv stages with ReLU,
// global average pooling and a linear projection to the d-dimensional
// embedding. The Target model runs one backbone on both exams and fuses the
// Current feature with the Prior-minus-Current feature through two residual
// multi-head attention passes before a linear 2d -> 2 head.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "longattack/rng.hpp"
#include "longattack/tensor.hpp"

namespace longattack::nn {

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> stage_channels{8, 16, 16};
  std::size_t embedding_dim = 64;
  std::size_t heads = 4;
  // The embedding is read as `tokens` rows for attention; each head sees a
  // contiguous d/heads slice laid out as tokens x d/(heads*tokens).
  std::size_t tokens = 8;

  Shape input_shape() const { return {in_channels, height, width}; }
  std::size_t head_width() const { return embedding_dim / (heads * tokens); }
  // Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;
};

// A trainable tensor with deep-copy semantics, so models behave as values.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor t) : tensor_(std::move(t)) { tensor_.set_requires_grad(true); }
  Parameter(const Parameter& other) : tensor_(other.copy()) {}
  Parameter& operator=(const Parameter& other) {
    if (this != &other) tensor_ = other.copy();
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Tensor& tensor() const { return tensor_; }
  Tensor& tensor() { return tensor_; }
  operator const Tensor&() const { return tensor_; }

 private:
  Tensor copy() const {
    if (!tensor_.defined()) return {};
    Tensor t = tensor_.detach();
    t.set_requires_grad(true);
    return t;
  }
  Tensor tensor_;
};

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  // image [c x h x w] -> embedding [d]
  Tensor forward(const Tensor& image) const;
  void append_parameters(const std::string& prefix, NamedParameters& out) const;
  // Zeroes the final projection (weights and bias).
  void zero_projection();

 private:
  BackboneConfig cfg_;
  std::vector<Parameter> kernels_;
  std::vector<Parameter> biases_;
  Parameter proj_w_;
  Parameter proj_b_;
};

// Query/key/value/output projections, each a d x d matrix plus bias.
struct AttentionParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(std::size_t d, Rng& rng);
  void append_parameters(const std::string& prefix, NamedParameters& out) const;
};

struct AttentionOutput {
  Tensor output;                // [d]
  std::vector<Tensor> weights;  // per head, [tokens x tokens], rows sum to one
};

// Scaled dot-product attention of the `query_src` tokens over the
// `key_value_src` tokens, per head, heads concatenated then output-projected.
AttentionOutput multi_head_attention(const Tensor& query_src, const Tensor& key_value_src,
                                     const AttentionParams& params, std::size_t heads, std::size_t tokens);

struct CrossViewOutput {
  Tensor prior_minus_current;  // x_prior - x_current
  Tensor current_cross;        // x_current + attention(x_current <- x_pc)
  Tensor pc_cross;             // x_pc + attention(x_pc <- x_current)
};

CrossViewOutput cross_view(const Tensor& x_current, const Tensor& x_prior, const AttentionParams& current_stream,
                           const AttentionParams& pc_stream, std::size_t heads, std::size_t tokens);

using Probabilities = std::array<double, 2>;

class SourceModel {
 public:
  SourceModel() = default;
  SourceModel(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return backbone_.config(); }
  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }

  Tensor features(const Tensor& current) const;
  Tensor logits(const Tensor& current) const;
  Tensor logits_from_features(const Tensor& features) const;
  Probabilities probabilities(const Tensor& current) const;
  std::vector<Probabilities> probabilities(std::span<const Tensor> currents) const;

  NamedParameters named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_head();

 private:
  Backbone backbone_;
  Parameter head_w_;
  Parameter head_b_;
};

class TargetModel {
 public:
  TargetModel() = default;
  TargetModel(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return backbone_.config(); }
  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }
  AttentionParams& current_attention() { return attn_current_; }
  AttentionParams& pc_attention() { return attn_pc_; }

  CrossViewOutput fuse(const Tensor& prior, const Tensor& current) const;
  Tensor logits(const Tensor& prior, const Tensor& current) const;
  // Same as logits() given precomputed backbone embeddings of both exams.
  Tensor logits_from_features(const Tensor& prior_features, const Tensor& current_features) const;
  Probabilities probabilities(const Tensor& prior, const Tensor& current) const;
  std::vector<Probabilities> probabilities(std::span<const Tensor> priors, std::span<const Tensor> currents) const;

  NamedParameters named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_head();

 private:
  Backbone backbone_;
  AttentionParams attn_current_;
  AttentionParams attn_pc_;
  Parameter head_w_;
  Parameter head_b_;
};

Probabilities to_probabilities(const Tensor& logits);

}  // namespace longattack::nn
