// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cpmoe/errors.hpp"

namespace cpmoe {

namespace {

double eval_finite(const std::function<Tensor<double>()>& loss_fn) {
  const double v = loss_fn().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is non-finite at a perturbed point");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<Tensor<double>>& params, double step, double tol,
                           double abs_floor) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  std::vector<Tensor<double>> xs = params;
  for (auto& p : xs) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<double> loss = loss_fn();
  if (loss.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is non-finite");
  backward(loss);

  GradCheckReport report;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    std::vector<double> analytic(xs[t].grad().begin(), xs[t].grad().end());
    auto values = xs[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = eval_finite(loss_fn);
      values[i] = original - step;
      const double down = eval_finite(loss_fn);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
      const double rel = abs_err / denom;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel > report.max_rel_err || report.checked == 0) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
        report.worst_tensor = t;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double step, double tol, double abs_floor) {
  return grad_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, step, tol, abs_floor);
}

}  // namespace cpmoe
