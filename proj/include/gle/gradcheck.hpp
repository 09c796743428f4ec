// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gle/tape.hpp"

namespace gle {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_input;  // parameter name or "input[i]"
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements_checked = 0;
};

/// Builds a scalar loss on the given tape from the supplied input handles.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
/// Builds a scalar loss on the given tape, binding parameters via Tape::param.
using ParamScalarFn = std::function<Var(Tape&)>;

/// Compares tape gradients with central differences for every element of
/// every input. The error of one element is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckResult gradient_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps);

/// Same check over parameter values; the parameters are restored afterwards
/// and their grads are left zeroed.
GradCheckResult gradient_check(const ParamScalarFn& f, std::span<Parameter* const> params,
                               double eps);

}  // namespace gle
