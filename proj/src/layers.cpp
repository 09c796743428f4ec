// SPDX-License-Identifier: Apache-2.0
#include "gle/layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gle {
namespace {

Var bias_var(Tape& tape, std::optional<Parameter>& bias, std::size_t channels) {
  return bias ? tape.param(*bias) : tape.constant(Tensor::zeros({channels}));
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed, std::string_view name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(name)),
                    static_cast<std::uint32_t>(fnv1a(name) >> 32)};
  std::mt19937_64 rng(seq);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

Conv2dLayer Conv2dLayer::create(const std::string& name, std::size_t in_channels,
                                std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                std::size_t padding, std::uint64_t seed, bool with_bias) {
  Conv2dLayer layer;
  const Shape shape{out_channels, in_channels, kernel, kernel};
  layer.weight = Parameter(name + ".weight", he_uniform(shape, in_channels * kernel * kernel, seed,
                                                        name + ".weight"));
  if (with_bias) layer.bias = Parameter(name + ".bias", Tensor::zeros({out_channels}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Var Conv2dLayer::forward(Tape& tape, Var x) {
  return ops::conv2d(x, tape.param(weight), bias_var(tape, bias, weight.value.dim(0)), stride, padding);
}

void Conv2dLayer::collect(ParameterRefs& refs) {
  refs.params.push_back(&weight);
  if (bias) refs.params.push_back(&*bias);
}

ConvTranspose2dLayer ConvTranspose2dLayer::create(const std::string& name, std::size_t in_channels,
                                                  std::size_t out_channels, std::size_t kernel,
                                                  std::size_t stride, std::size_t padding,
                                                  std::uint64_t seed, bool with_bias) {
  ConvTranspose2dLayer layer;
  const Shape shape{in_channels, out_channels, kernel, kernel};
  // Each output pixel of a stride-s transposed conv receives in*k*k/s^2 taps.
  const std::size_t fan_in = std::max<std::size_t>(1, in_channels * kernel * kernel / (stride * stride));
  layer.weight = Parameter(name + ".weight", he_uniform(shape, fan_in, seed, name + ".weight"));
  if (with_bias) layer.bias = Parameter(name + ".bias", Tensor::zeros({out_channels}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Var ConvTranspose2dLayer::forward(Tape& tape, Var x) {
  return ops::conv_transpose2d(x, tape.param(weight), bias_var(tape, bias, weight.value.dim(1)), stride, padding);
}

void ConvTranspose2dLayer::collect(ParameterRefs& refs) {
  refs.params.push_back(&weight);
  if (bias) refs.params.push_back(&*bias);
}

BatchNormLayer BatchNormLayer::create(const std::string& name, std::size_t channels) {
  BatchNormLayer layer;
  layer.name = name;
  layer.gamma = Parameter(name + ".gamma", Tensor::full({channels}, 1.0));
  layer.beta = Parameter(name + ".beta", Tensor::zeros({channels}));
  layer.stats = BatchNormStats(channels);
  return layer;
}

Var BatchNormLayer::forward(Tape& tape, Var x, Mode mode) {
  return ops::batchnorm2d(x, tape.param(gamma), tape.param(beta), stats, mode);
}

void BatchNormLayer::collect(ParameterRefs& refs) {
  refs.params.push_back(&gamma);
  refs.params.push_back(&beta);
  refs.buffers.push_back({name + ".running_mean", &stats.running_mean});
  refs.buffers.push_back({name + ".running_var", &stats.running_var});
}

ConvBnRelu ConvBnRelu::create(const std::string& name, std::size_t in_channels,
                              std::size_t out_channels, std::size_t kernel, std::size_t padding,
                              std::uint64_t seed) {
  return ConvBnRelu{Conv2dLayer::create(name + ".conv", in_channels, out_channels, kernel, 1,
                                        padding, seed, false),
                    BatchNormLayer::create(name + ".bn", out_channels)};
}

Var ConvBnRelu::forward(Tape& tape, Var x, Mode mode) {
  return ops::relu(bn.forward(tape, conv.forward(tape, x), mode));
}

void ConvBnRelu::collect(ParameterRefs& refs) {
  conv.collect(refs);
  bn.collect(refs);
}

}  // namespace gle
