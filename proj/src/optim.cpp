#include "xpro/optim.hpp"

#include <cmath>

namespace xpro {

void adam_step(AdamState& state, Tensor& param, const std::vector<double>& grad) {
  const size_t n = static_cast<size_t>(param.numel());
  if (grad.size() != n || state.m.size() != n || state.v.size() != n)
    throw ShapeError("adam_step: parameter " + shape_str(param.shape()) + " (" +
                     std::to_string(n) + " values) vs gradient of " +
                     std::to_string(grad.size()) + " and moments of " +
                     std::to_string(state.m.size()));
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  double* p = param.data();
  for (size_t i = 0; i < n; ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace xpro
