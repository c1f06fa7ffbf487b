#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xpro/tensor.hpp"

namespace xpro {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_param;
};

/// Relative error between two gradient values; exactly 0 when both are 0.
/// The additive floor keeps finite-difference roundoff noise from blowing
/// up the ratio for near-zero gradients.
double grad_rel_error(double analytic, double numeric);

/// Compares tape gradients against central finite differences
/// (f(p+h) - f(p-h)) / 2h for every element of every named parameter.
///
/// build_loss must re-evaluate the scalar loss from the current contents of
/// the parameter tensors: it is called once under a tape for the analytic
/// gradients and twice per element for the differences. Throws NumericError
/// if the loss is non-finite at any probe point.
GradCheckReport finite_diff_check(
    const std::function<Tensor()>& build_loss,
    const std::vector<std::pair<std::string, Tensor>>& params,
    double h = 1e-6);

}  // namespace xpro
