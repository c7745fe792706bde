#include "longattack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace longattack {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimension must be positive: " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  impl_->requires_grad = value;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

GradTape::Recording::Recording(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
GradTape::Recording::~Recording() { g_active_tape = previous_; }

void GradTape::record(Node node) {
  produced_.insert(node.output.get());
  nodes_.push_back(std::move(node));
}

void GradTape::clear() {
  nodes_.clear();
  produced_.clear();
}

std::span<const double> Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) throw std::out_of_range("no gradient recorded for tensor " + shape_str(t.shape()));
  return it->second;
}

Tensor Gradients::as_tensor(const Tensor& t) const {
  auto g = of(t);
  return Tensor(t.shape(), std::vector<double>(g.begin(), g.end()));
}

Gradients backward(const Tensor& root, const GradTape& tape, std::span<const Tensor> wrt) {
  if (!root.defined() || root.numel() != 1)
    throw ShapeError("backward requires a scalar root, got " + (root.defined() ? shape_str(root.shape()) : "undefined"));

  const auto& nodes = tape.nodes();
  // Which tensors lie on a path from a requested leaf.
  std::unordered_set<const TensorImpl*> needed;
  const bool restricted = !wrt.empty();
  if (restricted) {
    for (const auto& t : wrt) needed.insert(t.id());
    for (const auto& node : nodes) {
      for (const auto& in : node.inputs) {
        if (needed.contains(in.get())) {
          needed.insert(node.output.get());
          break;
        }
      }
    }
  }
  auto needs_grad = [&](const TensorImpl* t) {
    return restricted ? needed.contains(t) : t->requires_grad;
  };

  std::unordered_map<const TensorImpl*, std::vector<double>> grads;
  grads[root.id()] = {1.0};

  std::vector<double*> grad_in;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto found = grads.find(it->output.get());
    if (found == grads.end()) continue;
    grad_in.assign(it->inputs.size(), nullptr);
    bool any = false;
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const TensorImpl* in = it->inputs[i].get();
      if (!needs_grad(in)) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      grad_in[i] = buf.data();
      any = true;
    }
    if (!any) continue;
    const auto& gout = grads.at(it->output.get());
    it->backward(*it, gout, grad_in);
  }

  Gradients result;
  if (restricted) {
    for (const auto& t : wrt) {
      auto g = grads.find(t.id());
      result.set(t.id(), g != grads.end() ? g->second : std::vector<double>(t.numel(), 0.0));
    }
  } else {
    for (auto& [t, g] : grads)
      if (!tape.produced(t) && t->requires_grad) result.set(t, std::move(g));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Operation plumbing

namespace {

Tensor make_result(Shape shape, std::vector<double> values, std::span<const Tensor> inputs,
                   GradTape::BackwardFn fn) {
  auto out = std::make_shared<TensorImpl>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  if (GradTape* tape = GradTape::active()) {
    bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tracked) {
      out->requires_grad = true;
      GradTape::Node node;
      node.inputs.reserve(inputs.size());
      for (const auto& t : inputs) node.inputs.push_back(t.impl());
      node.output = out;
      node.backward = std::move(fn);
      tape->record(std::move(node));
    }
  }
  return Tensor(std::move(out));
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   GradTape::BackwardFn fn) {
  return make_result(std::move(shape), std::move(values), std::span<const Tensor>(inputs.begin(), inputs.size()),
                     std::move(fn));
}

const std::vector<double>& in_data(const GradTape::Node& n, std::size_t i) { return n.inputs[i]->data; }

void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && b.numel() != 1)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  check_binary(op, a, b);
  const auto ad = a.data();
  const auto bd = b.data();
  const bool bcast = a.shape() != b.shape();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i], bd[bcast ? 0 : i]);
  return make_result(a.shape(), std::move(out), {a, b},
                     [bcast, da, db](const GradTape::Node& n, std::span<const double> g, std::span<double* const> gi) {
                       const auto& x = in_data(n, 0);
                       const auto& y = in_data(n, 1);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double yv = y[bcast ? 0 : i];
                         if (gi[0]) gi[0][i] += g[i] * da(x[i], yv);
                         if (gi[1]) gi[1][bcast ? 0 : i] += g[i] * db(x[i], yv);
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [deriv](const GradTape::Node& n, std::span<const double> g, std::span<double* const> gi) {
                       const auto& x = in_data(n, 0);
                       const auto& y = n.output->data;
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * deriv(x[i], y[i]);
                     });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Tensor add(const Tensor& a, double b) {
  return unary(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor clip(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clip: lower bound must be below upper bound");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sign(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, [](double, double) { return 0.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// Reductions and indexing

Tensor sum(const Tensor& a) {
  const auto ad = a.data();
  double s = 0.0;
  for (double v : ad) s += v;
  return make_result({}, {s}, {a}, [](const GradTape::Node& n, std::span<const double> g, std::span<double* const> gi) {
    const std::size_t size = in_data(n, 0).size();
    for (std::size_t i = 0; i < size; ++i) gi[0][i] += g[0];
  });
}

Tensor l2_norm(const Tensor& a) {
  const auto ad = a.data();
  double s = 0.0;
  for (double v : ad) s += v * v;
  return make_result({}, {std::sqrt(s)}, {a},
                     [](const GradTape::Node& n, std::span<const double> g, std::span<double* const> gi) {
                       const double norm = n.output->data[0];
                       if (norm == 0.0) return;
                       const auto& x = in_data(n, 0);
                       for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] += g[0] * x[i] / norm;
                     });
}

Tensor select(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel())
    throw ShapeError("select: index " + std::to_string(flat_index) + " out of range for " + shape_str(a.shape()));
  return make_result({}, {a.data()[flat_index]}, {a},
                     [flat_index](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       gi[0][flat_index] += g[0];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto ad = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return make_result({n, m}, std::move(out), {a},
                     [m, n](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                     });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.numel())
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) + ") for " +
                     shape_str(a.shape()));
  const auto ad = a.data();
  std::vector<double> out(ad.begin() + static_cast<std::ptrdiff_t>(begin), ad.begin() + static_cast<std::ptrdiff_t>(end));
  return make_result({end - begin}, std::move(out), {a},
                     [begin](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][begin + i] += g[i];
                     });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  const std::size_t n = out.size();
  return make_result({n}, std::move(out), parts,
                     [sizes](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         if (gi[k])
                           for (std::size_t i = 0; i < sizes[k]; ++i) gi[k][i] += g[off + i];
                         off += sizes[k];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](const GradTape::Node& node, std::span<const double> g, std::span<double* const> gi) {
                       const auto& A = in_data(node, 0);
                       const auto& B = in_data(node, 1);
                       if (gi[0])  // dA = G * B^T
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                             gi[0][i * k + p] += s;
                           }
                       if (gi[1])  // dB = A^T * G
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = A[i * k + p];
                             for (std::size_t j = 0; j < n; ++j) gi[1][p * n + j] += av * g[i * n + j];
                           }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.dim() != 2 || x.numel() != weight.shape()[1] || bias.numel() != weight.shape()[0])
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + ", input " + shape_str(x.shape()) + ", bias " +
                     shape_str(bias.shape()));
  const std::size_t m = weight.shape()[0], n = weight.shape()[1];
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = bd[i];
    for (std::size_t j = 0; j < n; ++j) s += wd[i * n + j] * xd[j];
    out[i] = s;
  }
  return make_result({m}, std::move(out), {x, weight, bias},
                     [m, n](const GradTape::Node& node, std::span<const double> g, std::span<double* const> gi) {
                       const auto& X = in_data(node, 0);
                       const auto& W = in_data(node, 1);
                       for (std::size_t i = 0; i < m; ++i) {
                         const double gv = g[i];
                         if (gi[0])
                           for (std::size_t j = 0; j < n; ++j) gi[0][j] += gv * W[i * n + j];
                         if (gi[1])
                           for (std::size_t j = 0; j < n; ++j) gi[1][i * n + j] += gv * X[j];
                         if (gi[2]) gi[2][i] += gv;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  if (input.dim() != 3 || kernels.dim() != 4 || kernels.shape()[1] != input.shape()[0])
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernels " +
                     shape_str(kernels.shape()));
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t cout = kernels.shape()[0], kh = kernels.shape()[2], kw = kernels.shape()[3];
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                     shape_str(input.shape()));
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  const auto x = input.data();
  const auto k = kernels.data();
  const long pad = static_cast<long>(padding);

  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double kv = k[((co * cin + ci) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const double* row = &x[(ci * h + static_cast<std::size_t>(iy)) * w];
            double* orow = &out[(co * oh + oy) * ow];
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              orow[ox] += kv * row[ix];
            }
          }
        }

  return make_result(
      {cout, oh, ow}, std::move(out), {input, kernels},
      [=](const GradTape::Node& node, std::span<const double> g, std::span<double* const> gi) {
        const auto& X = in_data(node, 0);
        const auto& K = in_data(node, 1);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t kidx = ((co * cin + ci) * kh + ky) * kw + kx;
                const double kv = K[kidx];
                double kgrad = 0.0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  const std::size_t rbase = (ci * h + static_cast<std::size_t>(iy)) * w;
                  const double* grow = &g[(co * oh + oy) * ow];
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const long ix = static_cast<long>(ox * stride + kx) - pad;
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    if (gi[0]) gi[0][rbase + static_cast<std::size_t>(ix)] += grow[ox] * kv;
                    kgrad += grow[ox] * X[rbase + static_cast<std::size_t>(ix)];
                  }
                }
                if (gi[1]) gi[1][kidx] += kgrad;
              }
      });
}

Tensor add_channel_bias(const Tensor& input, const Tensor& bias) {
  if (input.dim() != 3 || bias.numel() != input.shape()[0])
    throw ShapeError("add_channel_bias: input " + shape_str(input.shape()) + " vs bias " + shape_str(bias.shape()));
  const std::size_t c = input.shape()[0], plane = input.shape()[1] * input.shape()[2];
  std::vector<double> out(input.data().begin(), input.data().end());
  const auto bd = bias.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += bd[ch];
  return make_result(input.shape(), std::move(out), {input, bias},
                     [c, plane](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t i = 0; i < plane; ++i) {
                           const double gv = g[ch * plane + i];
                           if (gi[0]) gi[0][ch * plane + i] += gv;
                           if (gi[1]) gi[1][ch] += gv;
                         }
                     });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.dim() != 3) throw ShapeError("global_avg_pool: expected [c x h x w], got " + shape_str(input.shape()));
  const std::size_t c = input.shape()[0], plane = input.shape()[1] * input.shape()[2];
  const auto x = input.data();
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
    out[ch] = s / static_cast<double>(plane);
  }
  return make_result({c}, std::move(out), {input},
                     [c, plane](const GradTape::Node&, std::span<const double> g, std::span<double* const> gi) {
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t i = 0; i < plane; ++i) gi[0][ch * plane + i] += g[ch] * inv;
                     });
}

// ---------------------------------------------------------------------------
// Probabilities

Tensor softmax(const Tensor& logits, std::size_t axis) {
  const auto& s = logits.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto x = logits.data();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) z += (out[base + j * inner] = std::exp(x[base + j * inner] - mx));
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  return make_result(s, std::move(out), {logits},
                     [outer, inner, len](const GradTape::Node& node, std::span<const double> g,
                                         std::span<double* const> gi) {
                       const auto& y = node.output->data;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = o * len * inner + in;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
                           for (std::size_t j = 0; j < len; ++j) {
                             const std::size_t idx = base + j * inner;
                             gi[0][idx] += y[idx] * (g[idx] - dot);
                           }
                         }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.dim() != 1 || label >= logits.numel())
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " invalid for logits " +
                     shape_str(logits.shape()));
  const auto x = logits.data();
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return make_result({}, {lse - x[label]}, {logits},
                     [label, lse](const GradTape::Node& node, std::span<const double> g, std::span<double* const> gi) {
                       const auto& X = in_data(node, 0);
                       for (std::size_t j = 0; j < X.size(); ++j)
                         gi[0][j] += g[0] * (std::exp(X[j] - lse) - (j == label ? 1.0 : 0.0));
                     });
}

}  // namespace longattack
