#include "longattack/models.hpp"

#include <cmath>
#include <stdexcept>

namespace longattack::nn {

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kStride = 2;
constexpr std::size_t kPadding = 1;

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

void check_image(const BackboneConfig& cfg, const Tensor& image) {
  if (image.shape() != cfg.input_shape())
    throw ShapeError("image shape " + shape_str(image.shape()) + " does not match backbone input " +
                     shape_str(cfg.input_shape()));
}

}  // namespace

void BackboneConfig::validate() const {
  if (in_channels == 0 || height == 0 || width == 0) throw std::invalid_argument("input shape must be positive");
  if (stage_channels.empty()) throw std::invalid_argument("backbone needs at least one conv stage");
  for (auto c : stage_channels)
    if (c == 0) throw std::invalid_argument("conv stage width must be positive");
  if (embedding_dim == 0 || heads == 0 || tokens == 0)
    throw std::invalid_argument("embedding_dim, heads and tokens must be positive");
  if (embedding_dim % heads != 0) throw std::invalid_argument("embedding_dim must be divisible by heads");
  if (embedding_dim % (heads * tokens) != 0)
    throw std::invalid_argument("embedding_dim must be divisible by heads * tokens");
}

// ---------------------------------------------------------------------------
// Backbone

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t cin = cfg_.in_channels;
  for (auto cout : cfg_.stage_channels) {
    const double fan_in = static_cast<double>(cin * kKernel * kKernel);
    kernels_.emplace_back(normal_tensor({cout, cin, kKernel, kKernel}, std::sqrt(2.0 / fan_in), rng));
    biases_.emplace_back(Tensor::zeros({cout}));
    cin = cout;
  }
  proj_w_ = Parameter(normal_tensor({cfg_.embedding_dim, cin}, 1.0 / std::sqrt(static_cast<double>(cin)), rng));
  proj_b_ = Parameter(Tensor::zeros({cfg_.embedding_dim}));
}

Tensor Backbone::forward(const Tensor& image) const {
  check_image(cfg_, image);
  Tensor x = image;
  for (std::size_t s = 0; s < kernels_.size(); ++s)
    x = relu(add_channel_bias(conv2d(x, kernels_[s], kStride, kPadding), biases_[s]));
  return linear(global_avg_pool(x), proj_w_, proj_b_);
}

void Backbone::append_parameters(const std::string& prefix, NamedParameters& out) const {
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    out.emplace_back(prefix + "conv" + std::to_string(s) + ".weight", kernels_[s].tensor());
    out.emplace_back(prefix + "conv" + std::to_string(s) + ".bias", biases_[s].tensor());
  }
  out.emplace_back(prefix + "proj.weight", proj_w_.tensor());
  out.emplace_back(prefix + "proj.bias", proj_b_.tensor());
}

void Backbone::zero_projection() {
  for (auto& v : proj_w_.tensor().mutable_data()) v = 0.0;
  for (auto& v : proj_b_.tensor().mutable_data()) v = 0.0;
}

// ---------------------------------------------------------------------------
// Attention

AttentionParams AttentionParams::init(std::size_t d, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = Parameter(normal_tensor({d, d}, s, rng));
  p.bq = Parameter(Tensor::zeros({d}));
  p.wk = Parameter(normal_tensor({d, d}, s, rng));
  p.bk = Parameter(Tensor::zeros({d}));
  p.wv = Parameter(normal_tensor({d, d}, s, rng));
  p.bv = Parameter(Tensor::zeros({d}));
  p.wo = Parameter(normal_tensor({d, d}, s, rng));
  p.bo = Parameter(Tensor::zeros({d}));
  return p;
}

void AttentionParams::append_parameters(const std::string& prefix, NamedParameters& out) const {
  out.emplace_back(prefix + "q.weight", wq.tensor());
  out.emplace_back(prefix + "q.bias", bq.tensor());
  out.emplace_back(prefix + "k.weight", wk.tensor());
  out.emplace_back(prefix + "k.bias", bk.tensor());
  out.emplace_back(prefix + "v.weight", wv.tensor());
  out.emplace_back(prefix + "v.bias", bv.tensor());
  out.emplace_back(prefix + "out.weight", wo.tensor());
  out.emplace_back(prefix + "out.bias", bo.tensor());
}

AttentionOutput multi_head_attention(const Tensor& query_src, const Tensor& key_value_src,
                                     const AttentionParams& params, std::size_t heads, std::size_t tokens) {
  const std::size_t d = query_src.numel();
  if (key_value_src.numel() != d)
    throw ShapeError("multi_head_attention: query " + shape_str(query_src.shape()) + " vs key/value " +
                     shape_str(key_value_src.shape()));
  if (heads == 0 || tokens == 0 || d % (heads * tokens) != 0)
    throw ShapeError("multi_head_attention: d=" + std::to_string(d) + " not divisible by heads*tokens");
  const std::size_t per_head = d / heads;
  const std::size_t width = per_head / tokens;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(width));

  const Tensor q = linear(query_src, params.wq, params.bq);
  const Tensor k = linear(key_value_src, params.wk, params.bk);
  const Tensor v = linear(key_value_src, params.wv, params.bv);

  AttentionOutput result;
  std::vector<Tensor> head_out;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * per_head, e = b + per_head;
    const Tensor qh = reshape(slice(q, b, e), {tokens, width});
    const Tensor kh = reshape(slice(k, b, e), {tokens, width});
    const Tensor vh = reshape(slice(v, b, e), {tokens, width});
    Tensor w = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
    head_out.push_back(matmul(w, vh));
    result.weights.push_back(std::move(w));
  }
  result.output = linear(concat(head_out), params.wo, params.bo);
  return result;
}

CrossViewOutput cross_view(const Tensor& x_current, const Tensor& x_prior, const AttentionParams& current_stream,
                           const AttentionParams& pc_stream, std::size_t heads, std::size_t tokens) {
  if (x_current.shape() != x_prior.shape())
    throw ShapeError("cross_view: feature shapes differ " + shape_str(x_current.shape()) + " vs " +
                     shape_str(x_prior.shape()));
  CrossViewOutput out;
  out.prior_minus_current = sub(x_prior, x_current);
  const auto current_att = multi_head_attention(x_current, out.prior_minus_current, current_stream, heads, tokens);
  const auto pc_att = multi_head_attention(out.prior_minus_current, x_current, pc_stream, heads, tokens);
  out.current_cross = add(x_current, current_att.output);
  out.pc_cross = add(out.prior_minus_current, pc_att.output);
  return out;
}

// ---------------------------------------------------------------------------
// Models

Probabilities to_probabilities(const Tensor& logits) {
  const Tensor p = softmax(logits.detach(), 0);
  return {p[0], p[1]};
}

SourceModel::SourceModel(const BackboneConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  backbone_ = Backbone(cfg, rng);
  const std::size_t d = cfg.embedding_dim;
  head_w_ = Parameter(normal_tensor({2, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  head_b_ = Parameter(Tensor::zeros({2}));
}

Tensor SourceModel::features(const Tensor& current) const { return backbone_.forward(current); }

Tensor SourceModel::logits(const Tensor& current) const { return logits_from_features(features(current)); }

Tensor SourceModel::logits_from_features(const Tensor& features) const { return linear(features, head_w_, head_b_); }

Probabilities SourceModel::probabilities(const Tensor& current) const { return to_probabilities(logits(current)); }

std::vector<Probabilities> SourceModel::probabilities(std::span<const Tensor> currents) const {
  std::vector<Probabilities> out;
  out.reserve(currents.size());
  for (const auto& c : currents) out.push_back(probabilities(c));
  return out;
}

NamedParameters SourceModel::named_parameters() const {
  NamedParameters out;
  backbone_.append_parameters("backbone.", out);
  out.emplace_back("head.weight", head_w_.tensor());
  out.emplace_back("head.bias", head_b_.tensor());
  return out;
}

std::vector<Tensor> SourceModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void SourceModel::zero_head() {
  for (auto& v : head_w_.tensor().mutable_data()) v = 0.0;
  for (auto& v : head_b_.tensor().mutable_data()) v = 0.0;
}

TargetModel::TargetModel(const BackboneConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  backbone_ = Backbone(cfg, rng);
  const std::size_t d = cfg.embedding_dim;
  attn_current_ = AttentionParams::init(d, rng);
  attn_pc_ = AttentionParams::init(d, rng);
  head_w_ = Parameter(normal_tensor({2, 2 * d}, 1.0 / std::sqrt(static_cast<double>(2 * d)), rng));
  head_b_ = Parameter(Tensor::zeros({2}));
}

CrossViewOutput TargetModel::fuse(const Tensor& prior, const Tensor& current) const {
  if (prior.shape() != current.shape())
    throw ShapeError("target model: prior " + shape_str(prior.shape()) + " and current " +
                     shape_str(current.shape()) + " differ");
  const auto& cfg = config();
  return cross_view(backbone_.forward(current), backbone_.forward(prior), attn_current_, attn_pc_, cfg.heads,
                    cfg.tokens);
}

Tensor TargetModel::logits(const Tensor& prior, const Tensor& current) const {
  if (prior.shape() != current.shape())
    throw ShapeError("target model: prior " + shape_str(prior.shape()) + " and current " +
                     shape_str(current.shape()) + " differ");
  return logits_from_features(backbone_.forward(prior), backbone_.forward(current));
}

Tensor TargetModel::logits_from_features(const Tensor& prior_features, const Tensor& current_features) const {
  const auto& cfg = config();
  const auto fused = cross_view(current_features, prior_features, attn_current_, attn_pc_, cfg.heads, cfg.tokens);
  const Tensor parts[] = {fused.current_cross, fused.pc_cross};
  return linear(concat(parts), head_w_, head_b_);
}

Probabilities TargetModel::probabilities(const Tensor& prior, const Tensor& current) const {
  return to_probabilities(logits(prior, current));
}

std::vector<Probabilities> TargetModel::probabilities(std::span<const Tensor> priors,
                                                      std::span<const Tensor> currents) const {
  if (priors.size() != currents.size()) throw ShapeError("target model: batch sizes differ");
  std::vector<Probabilities> out;
  out.reserve(priors.size());
  for (std::size_t i = 0; i < priors.size(); ++i) out.push_back(probabilities(priors[i], currents[i]));
  return out;
}

NamedParameters TargetModel::named_parameters() const {
  NamedParameters out;
  backbone_.append_parameters("backbone.", out);
  attn_current_.append_parameters("cross.current.", out);
  attn_pc_.append_parameters("cross.prior_minus_current.", out);
  out.emplace_back("head.weight", head_w_.tensor());
  out.emplace_back("head.bias", head_b_.tensor());
  return out;
}

std::vector<Tensor> TargetModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void TargetModel::zero_head() {
  for (auto& v : head_w_.tensor().mutable_data()) v = 0.0;
  for (auto& v : head_b_.tensor().mutable_data()) v = 0.0;
}

}  // namespace longattack::nn
