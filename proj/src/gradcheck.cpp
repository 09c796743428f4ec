// SPDX-License-Identifier: Apache-2.0
#include "gle/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace gle {
namespace {

double evaluate(const ParamScalarFn& f) {
  Tape tape(false);
  return f(tape).value().item();
}

}  // namespace

GradCheckResult gradient_check(const ParamScalarFn& f, std::span<Parameter* const> params,
                               double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::precondition, "gradient_check: eps must be positive");

  const double base = evaluate(f);
  const double again = evaluate(f);
  if (std::bit_cast<std::uint64_t>(base) != std::bit_cast<std::uint64_t>(again)) {
    fail(ErrorKind::precondition, "gradient_check: function is not deterministic");
  }

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
  }

  GradCheckResult result;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double plus = evaluate(f);
      p->value[i] = orig - eps;
      const double minus = evaluate(f);
      p->value[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.elements_checked;
      if (err > result.max_relative_error || result.elements_checked == 1) {
        result.max_relative_error = err;
        result.worst_input = p->name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
    p->zero_grad();
  }
  return result;
}

GradCheckResult gradient_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps) {
  std::vector<Parameter> store;
  store.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    store.emplace_back("input[" + std::to_string(i) + "]", std::move(inputs[i]));
  }
  std::vector<Parameter*> refs;
  for (auto& p : store) refs.push_back(&p);
  const ParamScalarFn bound = [&](Tape& tape) {
    std::vector<Var> vars;
    vars.reserve(store.size());
    for (auto& p : store) vars.push_back(tape.param(p));
    return f(tape, vars);
  };
  return gradient_check(bound, refs, eps);
}

}  // namespace gle
