// SPDX-License-Identifier: Apache-2.0
#include "gle/gradcheck_suite.hpp"

#include <random>

#include "gle/gle.hpp"
#include "gle/layers.hpp"
#include "gle/network.hpp"
#include "gle/ops.hpp"

namespace gle {
namespace {

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

// sum(y * r) for a random r fixed by the seed and the output shape.
Var project(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tape& tape = *y.tape;
  return ops::sum(ops::mul(y, tape.constant(uniform(y.shape(), rng))));
}

Var flipped_relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.mutable_data()) v = v > 0.0 ? v : 0.0;
  return x.tape->emit("relu_flipped", std::move(out), {x}, [](const BackwardPass& bp) {
    Tensor* g = bp.in_grad(0);
    if (!g) return;
    for (std::size_t i = 0; i < g->numel(); ++i) {
      if (bp.input(0)[i] > 0.0) (*g)[i] -= bp.out_grad()[i];
    }
  });
}

void randomize(Parameter& p, std::mt19937_64& rng, double scale) {
  p.value = uniform(p.value.shape(), rng, -scale, scale);
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& options) {
  const double eps = options.eps;
  const std::uint64_t seed = options.seed;
  std::mt19937_64 rng;
  std::vector<GradSuiteEntry> out;
  // Each case draws from its own stream so it can be reproduced alone.
  auto reseed = [&](std::string_view name) { rng.seed(seed ^ fnv1a(name)); };
  auto wanted = [&](std::string_view name) { return options.only.empty() || options.only == name; };
  auto check = [&](std::string name, const ScalarFn& f, std::vector<Tensor> inputs) {
    if (!wanted(name)) return;
    out.push_back({std::move(name), gradient_check(f, std::move(inputs), eps)});
  };

  reseed("add");

  check("add", [&](Tape&, std::span<const Var> v) { return project(ops::add(v[0], v[1]), seed); },
        {uniform({2, 3}, rng), uniform({2, 3}, rng)});
  reseed("mul");
  check("mul", [&](Tape&, std::span<const Var> v) { return project(ops::mul(v[0], v[1]), seed); },
        {uniform({2, 3}, rng), uniform({2, 3}, rng)});
  reseed("scale");
  check("scale", [&](Tape&, std::span<const Var> v) { return project(ops::scale(v[0], -1.75), seed); },
        {uniform({4}, rng)});
  reseed("sum");
  check("sum", [&](Tape&, std::span<const Var> v) { return ops::sum(ops::mul(v[0], v[0])); },
        {uniform({3, 2}, rng)});
  reseed("reshape");
  check("reshape", [&](Tape&, std::span<const Var> v) { return project(ops::reshape(v[0], {3, 4}), seed); },
        {uniform({2, 6}, rng)});
  reseed("transpose_last2");
  check("transpose_last2",
        [&](Tape&, std::span<const Var> v) { return project(ops::transpose_last2(v[0]), seed); },
        {uniform({2, 3, 4}, rng)});
  reseed("conv2d");
  check("conv2d",
        [&](Tape&, std::span<const Var> v) { return project(ops::conv2d(v[0], v[1], v[2], 2, 1), seed); },
        {uniform({2, 3, 6, 6}, rng), uniform({4, 3, 3, 3}, rng), uniform({4}, rng)});
  reseed("conv_transpose2d");
  check("conv_transpose2d",
        [&](Tape&, std::span<const Var> v) {
          return project(ops::conv_transpose2d(v[0], v[1], v[2], 2, 1), seed);
        },
        {uniform({1, 2, 4, 4}, rng), uniform({2, 3, 4, 4}, rng), uniform({3}, rng)});
  reseed("batchnorm2d[train]");
  check("batchnorm2d[train]",
        [&](Tape&, std::span<const Var> v) {
          BatchNormStats stats(3);
          return project(ops::batchnorm2d(v[0], v[1], v[2], stats, Mode::train), seed);
        },
        {uniform({2, 3, 3, 3}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)});
  {
    reseed("batchnorm2d[eval]");
    BatchNormStats stats(3);
    stats.running_mean = uniform({3}, rng);
    stats.running_var = uniform({3}, rng, 0.5, 2.0);
    check("batchnorm2d[eval]",
          [&](Tape&, std::span<const Var> v) {
            return project(ops::batchnorm2d(v[0], v[1], v[2], stats, Mode::eval), seed);
          },
          {uniform({2, 3, 3, 3}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)});
  }
  reseed("relu");
  check("relu", [&](Tape&, std::span<const Var> v) { return project(ops::relu(v[0]), seed); },
        {uniform({3, 5}, rng)});
  reseed("max_pool2d");
  check("max_pool2d", [&](Tape&, std::span<const Var> v) { return project(ops::max_pool2d(v[0], 2, 2), seed); },
        {uniform({1, 2, 6, 6}, rng)});
  reseed("softmax_rows");
  check("softmax_rows", [&](Tape&, std::span<const Var> v) { return project(ops::softmax_rows(v[0]), seed); },
        {uniform({2, 3, 5}, rng, -3.0, 3.0)});
  reseed("matmul_batched");
  check("matmul_batched",
        [&](Tape&, std::span<const Var> v) { return project(ops::matmul_batched(v[0], v[1]), seed); },
        {uniform({2, 3, 4}, rng), uniform({2, 4, 5}, rng)});
  if (options.inject_sign_error) {
    reseed("relu[injected sign error]");
    check("relu[injected sign error]",
          [&](Tape&, std::span<const Var> v) { return project(flipped_relu(v[0]), seed); },
          {uniform({3, 5}, rng)});
  }

  if (!options.include_composites) return out;

  auto check_params = [&](std::string name, const ParamScalarFn& f, std::vector<Parameter*> params) {
    if (!wanted(name)) return;
    out.push_back({std::move(name), gradient_check(f, params, eps)});
  };
  {
    reseed("nonlocal_block");
    NonLocalBlock block = NonLocalBlock::create("nonlocal", 4, seed);
    randomize(block.w.weight, rng, 0.5);
    randomize(*block.w.bias, rng, 0.5);
    Parameter x("x", uniform({1, 4, 3, 3}, rng));
    ParameterRefs refs;
    block.collect(refs);
    refs.params.push_back(&x);
    check_params("nonlocal_block",
                 [&](Tape& tape) { return project(block.forward(tape, tape.param(x)), seed); }, refs.params);
  }
  {
    reseed("gle_module");
    GLEModule module = GLEModule::create("gle", 4, seed);
    randomize(module.nonlocal.w.weight, rng, 0.5);
    Parameter x("x", uniform({1, 4, 6, 6}, rng));
    ParameterRefs refs;
    module.collect(refs);
    refs.params.push_back(&x);
    check_params("gle_module",
                 [&](Tape& tape) { return ops::sum(module.forward(tape, tape.param(x), Mode::train)); },
                 refs.params);
  }
  {
    reseed("gle_stack[k=2]");
    GLEStack stack = GLEStack::create("gle", 4, 2, seed);
    for (auto& m : stack.modules) randomize(m.nonlocal.w.weight, rng, 0.5);
    Parameter x("x", uniform({1, 4, 6, 6}, rng));
    ParameterRefs refs;
    stack.collect(refs);
    refs.params.push_back(&x);
    check_params("gle_stack[k=2]",
                 [&](Tape& tape) { return ops::sum(stack.forward(tape, tape.param(x), Mode::train)); },
                 refs.params);
  }
  {
    reseed("toy_network");
    NetworkConfig config;
    config.input_size = 16;
    config.width_multiplier = 1.0 / 32.0;
    config.k = 2;
    LandmarkNet net = LandmarkNet::build(config, seed);
    for (auto& m : net.gle().modules) randomize(m.nonlocal.w.weight, rng, 0.5);
    randomize(net.head().weight, rng, 0.5);
    Parameter x("x", uniform({1, 3, 16, 16}, rng, 0.0, 1.0));
    std::vector<Parameter*> params = net.parameters();
    params.push_back(&x);
    check_params("toy_network",
                 [&](Tape& tape) { return ops::sum(net.forward(tape, tape.param(x), Mode::train)); },
                 params);
  }
  return out;
}

}  // namespace gle
