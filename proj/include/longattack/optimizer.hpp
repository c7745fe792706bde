#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "longattack/tensor.hpp"

namespace longattack {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd_momentum only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static OptimizerState adam(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.learning_rate = lr;
    return s;
  }
  static OptimizerState sgd(double lr, double momentum) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd_momentum;
    s.learning_rate = lr;
    s.momentum = momentum;
    return s;
  }
};

// Updates `params` in place. Parameters without a gradient entry are treated
// as having a zero gradient. Moment buffers are created lazily on the first
// step and must match the parameter shapes from then on.
void optimizer_step(std::span<Tensor> params, const Gradients& grads, OptimizerState& state);

}  // namespace longattack
