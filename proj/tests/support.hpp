#pragma once

// Shared test helpers: central finite differences, random tensors and a
// logistic toy classifier with closed-form gradients.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "longattack/attacks.hpp"
#include "longattack/models.hpp"
#include "longattack/rng.hpp"
#include "longattack/tensor.hpp"

namespace testsupport {

using longattack::Rng;
using longattack::Shape;
using longattack::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::vector<double> v(longattack::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v), requires_grad);
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor random_off_kink(const Shape& shape, Rng& rng, double gap = 0.05) {
  std::vector<double> v(longattack::shape_numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(gap, 1.0);
    x = rng.coin() ? m : -m;
  }
  return Tensor(shape, std::move(v), true);
}

struct FdResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
  std::size_t checked = 0;
};

// f builds a scalar from `inputs` (all requires_grad leaves). Compares the
// tape gradient against central differences with step h on every element.
inline FdResult finite_difference(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  std::vector<Tensor> inputs, double h = 1e-5) {
  longattack::GradTape tape;
  Tensor out;
  {
    longattack::GradTape::Recording rec(tape);
    out = f(inputs);
  }
  const auto grads = longattack::backward(out, tape, inputs);

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  FdResult r;
  for (auto& in : inputs) {
    const auto analytic = grads.of(in);
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f(inputs).item();
      data[i] = saved - h;
      const double down = f(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++r.checked;
    }
  }
  r.rel_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
  return r;
}

// Random projection to a scalar, so every output element gets a distinct
// weight in the gradient check.
inline Tensor project_to_scalar(const Tensor& t, const Tensor& weights) {
  return longattack::sum(longattack::mul(longattack::reshape(t, {t.numel()}), weights));
}

inline longattack::nn::BackboneConfig tiny_backbone() {
  longattack::nn::BackboneConfig c;
  c.height = 8;
  c.width = 8;
  c.stage_channels = {3, 4};
  c.embedding_dim = 8;
  c.heads = 2;
  c.tokens = 2;
  return c;
}

// Logistic classifier on a flattened image: logits = [0, w.x + b], features = x.
// d/dx of CE is (sigmoid(z) - t) w, so the FGSM step is analytically known.
class LogisticModel final : public longattack::attacks::AttackModel {
 public:
  LogisticModel(std::vector<double> w, double b) : w_(Tensor::vector(std::move(w))), b_(b) {}
  longattack::attacks::SurrogateOutput forward(const Tensor& image) const override {
    using namespace longattack;
    const Tensor flat = reshape(image, {image.numel()});
    const Tensor z = add(sum(mul(flat, w_)), b_);
    const Tensor zero = scale(z, 0.0);
    const Tensor parts[] = {zero, z};
    return {flat, concat(parts)};
  }

 private:
  Tensor w_;
  double b_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), y.end(),
                    [](double p, double q) { return std::memcmp(&p, &q, sizeof p) == 0; });
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testsupport
