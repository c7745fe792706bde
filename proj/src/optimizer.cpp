#include "longattack/optimizer.hpp"

#include <cmath>

namespace longattack {

void optimizer_step(std::span<Tensor> params, const Gradients& grads, OptimizerState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(state.kind == OptimizerKind::adam ? p.numel() : 0, 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("optimizer_step: state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel())
      throw ShapeError("optimizer_step: moment buffer size mismatch for parameter " + std::to_string(i) + " " +
                       shape_str(params[i].shape()));
    if (grads.has(params[i]) && grads.of(params[i]).size() != params[i].numel())
      throw ShapeError("optimizer_step: gradient size mismatch for parameter " + std::to_string(i));
  }

  ++state.step;
  const double lr = state.learning_rate;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads.has(params[i])) continue;
    auto g = grads.of(params[i]);
    auto p = params[i].mutable_data();
    auto& m = state.first_moment[i];
    if (state.kind == OptimizerKind::sgd_momentum) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = state.momentum * m[j] + g[j];
        p[j] -= lr * m[j];
      }
    } else {
      auto& v = state.second_moment[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
        v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
  }
}

}  // namespace longattack
