#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Operations record onto the GradTape that is active on the calling thread
// (see GradTape::Recording) whenever at least one input participates in
// differentiation. With no active tape, operations are plain numeric kernels.
// Parameters can therefore be shared read-only between threads; gradients are
// never stored on tensors, only in the Gradients map returned by backward().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace longattack {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  std::span<const double> data() const;
  // Writable view for leaves (parameters, attack iterates). Never write to a
  // tensor that has already been consumed by a recorded operation.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;

  const TensorImpl* id() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

class GradTape {
 public:
  struct Node;
  // grad_in[i] is null when input i does not need a gradient; otherwise the
  // rule accumulates (+=) into a zero-initialized buffer of the input's size.
  using BackwardFn = std::function<void(const Node& node, std::span<const double> grad_out,
                                        std::span<double* const> grad_in)>;

  struct Node {
    std::vector<std::shared_ptr<const TensorImpl>> inputs;
    std::shared_ptr<const TensorImpl> output;
    BackwardFn backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool produced(const TensorImpl* t) const { return produced_.contains(t); }
  void clear();

  void record(Node node);

  static GradTape* active();

  // Makes `tape` the active tape of this thread for the guard's lifetime.
  class Recording {
   public:
    explicit Recording(GradTape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    GradTape* previous_;
  };

 private:
  std::vector<Node> nodes_;
  std::unordered_set<const TensorImpl*> produced_;
};

class Gradients {
 public:
  bool has(const Tensor& t) const { return grads_.contains(t.id()); }
  std::span<const double> of(const Tensor& t) const;
  Tensor as_tensor(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

  void set(const TensorImpl* t, std::vector<double> g) { grads_[t] = std::move(g); }

 private:
  std::unordered_map<const TensorImpl*, std::vector<double>> grads_;
};

// Gradients of a scalar root. With `wrt` empty, returns a gradient for every
// requires_grad leaf reachable from the root; otherwise only for the listed
// tensors (zeros when unreachable) and prunes work on other branches.
Gradients backward(const Tensor& root, const GradTape& tape, std::span<const Tensor> wrt = {});

// Elementwise. `b` may have the same shape as `a` or be a single-element tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);
// Subgradient 1 strictly inside [lo, hi] and 0 at or beyond the bounds.
Tensor clip(const Tensor& a, double lo, double hi);
// sign(0) = 0; gradient is zero everywhere.
Tensor sign(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor sum(const Tensor& a);
// Euclidean norm of all elements; gradient defined as 0 at the origin.
Tensor l2_norm(const Tensor& a);
Tensor select(const Tensor& a, std::size_t flat_index);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
// Elements [begin, end) of the flattened tensor, as a vector.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
// Concatenation of flattened tensors into a vector.
Tensor concat(std::span<const Tensor> parts);

Tensor matmul(const Tensor& a, const Tensor& b);
// weight[m x n] * x[n] + bias[m]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// input [c_in x h x w], kernels [c_out x c_in x kh x kw]; zero-padded cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding);
Tensor add_channel_bias(const Tensor& input, const Tensor& bias);
Tensor global_avg_pool(const Tensor& input);

Tensor softmax(const Tensor& logits, std::size_t axis);
// -log softmax(logits)[label] for a logits vector.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace longattack
