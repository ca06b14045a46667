// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cpmoe/tensor.hpp"

namespace cpmoe {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  /// Which tensor (index into the checked list) and coordinate was worst.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  bool pass = true;
};

/// Compares reverse-mode gradients of the scalar `loss_fn()` with respect to
/// every coordinate of `params` against central differences
/// (f(x+h) - f(x-h)) / 2h. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor); the floor
/// keeps coordinates whose true gradient is zero from dividing by rounding
/// noise. `loss_fn` must rebuild its graph from the current parameter values
/// on every call.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<Tensor<double>>& params, double step, double tol,
                           double abs_floor = 1e-6);

/// Single-input form: f(x) must be scalar.
GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double step, double tol, double abs_floor = 1e-6);

}  // namespace cpmoe
