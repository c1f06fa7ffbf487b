#include "xpro/gradcheck.hpp"

#include <cmath>

namespace xpro {

double grad_rel_error(double analytic, double numeric) {
  if (analytic == 0.0 && numeric == 0.0) return 0.0;
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  return std::abs(analytic - numeric) / (mag + 1e-4);
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& build_loss,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h) {
  if (h <= 0.0) throw ContractError("finite_diff_check: h must be positive");

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    for (const auto& [name, p] : params) {
      Tensor& mut = const_cast<Tensor&>(p);
      tape.watch(mut);
    }
    Tensor loss = build_loss();
    if (!std::isfinite(loss.value()))
      throw NumericError("finite_diff_check: loss is non-finite at the base point");
    tape.backward(loss);
    for (const auto& [name, p] : params) analytic.push_back(tape.grad(p));
    for (const auto& [name, p] : params) const_cast<Tensor&>(p).unbind();
  }

  auto eval = [&](const std::string& where) {
    const double f = build_loss().value();
    if (!std::isfinite(f))
      throw NumericError("finite_diff_check: loss is non-finite when perturbing " + where);
    return f;
  };

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const std::string& name = params[pi].first;
    Tensor& p = const_cast<Tensor&>(params[pi].second);
    GradCheckEntry entry{name, 0.0};
    for (int i = 0; i < p.numel(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double fp = eval(name + "[" + std::to_string(i) + "]");
      p.data()[i] = saved - h;
      const double fm = eval(name + "[" + std::to_string(i) + "]");
      p.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      entry.max_rel_error =
          std::max(entry.max_rel_error, grad_rel_error(analytic[pi][static_cast<size_t>(i)], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace xpro
