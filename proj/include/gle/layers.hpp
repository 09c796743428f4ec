// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gle/ops.hpp"

namespace gle {

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

/// Flat view over the trainable parameters and non-trainable buffers of a
/// model, in construction order.
struct ParameterRefs {
  std::vector<Parameter*> params;
  std::vector<NamedBuffer> buffers;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL);

/// He-uniform draw in [-sqrt(6/fan_in), sqrt(6/fan_in)]. The stream is keyed on
/// (seed, name) so a parameter's initial value does not depend on what else
/// the model contains.
Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed, std::string_view name);

struct Conv2dLayer {
  Parameter weight;  // [Cout,Cin,k,k]
  std::optional<Parameter> bias;  // [Cout]; omitted when a batch norm follows
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2dLayer create(const std::string& name, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::uint64_t seed, bool with_bias = true);
  Var forward(Tape& tape, Var x);
  void collect(ParameterRefs& refs);
};

struct ConvTranspose2dLayer {
  Parameter weight;  // [Cin,Cout,k,k]
  std::optional<Parameter> bias;  // [Cout]
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvTranspose2dLayer create(const std::string& name, std::size_t in_channels,
                                     std::size_t out_channels, std::size_t kernel,
                                     std::size_t stride, std::size_t padding, std::uint64_t seed,
                                     bool with_bias = true);
  Var forward(Tape& tape, Var x);
  void collect(ParameterRefs& refs);
};

struct BatchNormLayer {
  std::string name;
  Parameter gamma;
  Parameter beta;
  BatchNormStats stats;

  static BatchNormLayer create(const std::string& name, std::size_t channels);
  Var forward(Tape& tape, Var x, Mode mode);
  void collect(ParameterRefs& refs);
};

/// conv -> batch norm -> ReLU
struct ConvBnRelu {
  Conv2dLayer conv;
  BatchNormLayer bn;

  static ConvBnRelu create(const std::string& name, std::size_t in_channels,
                           std::size_t out_channels, std::size_t kernel, std::size_t padding,
                           std::uint64_t seed);
  Var forward(Tape& tape, Var x, Mode mode);
  void collect(ParameterRefs& refs);
};

}  // namespace gle
