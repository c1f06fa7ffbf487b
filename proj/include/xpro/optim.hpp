#pragma once

#include <vector>

#include "xpro/tensor.hpp"

namespace xpro {

/// Bias-corrected Adam for a single parameter tensor. The learning rate is
/// mutable so a scheduler can apply a per-epoch multiplicative decay.
struct AdamState {
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  long step = 0;
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState(int numel, double learning_rate)
      : m(static_cast<size_t>(numel), 0.0), v(static_cast<size_t>(numel), 0.0), lr(learning_rate) {}

  void decay_lr(double factor) { lr *= factor; }
};

/// One in-place Adam update. Shapes of param/grad/moments must agree.
void adam_step(AdamState& state, Tensor& param, const std::vector<double>& grad);

}  // namespace xpro
