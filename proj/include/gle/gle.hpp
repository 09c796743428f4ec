// SPDX-License-Identifier: Apache-2.0
//
// Global-local embedding: a non-local block with a residual projection,
// followed by two 3x3 conv-BN-ReLU layers that re-localize the globally mixed
// features. Modules preserve [N,C,H,W] and can be stacked.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gle/layers.hpp"

namespace gle {

/// Largest H*W accepted by the non-local block (the affinity is M x M).
inline constexpr std::size_t kMaxNonLocalPositions = 4096;

struct NonLocalOutput {
  Var output;    // [N,C,H,W]
  Var affinity;  // [N,M,M], row i holds the weights query i assigns to every position
};

/// theta, phi, g: 1x1 convs C -> C/2. w: 1x1 conv C/2 -> C, zero-initialized
/// so a fresh block is the identity map. phi carries no bias.
struct NonLocalBlock {
  std::size_t channels = 0;
  std::size_t embed_channels = 0;
  Conv2dLayer theta;
  Conv2dLayer phi;
  Conv2dLayer g;
  Conv2dLayer w;

  static NonLocalBlock create(const std::string& name, std::size_t channels, std::uint64_t seed);

  /// softmax over positions of theta(x)^T phi(x), applied to g(x), projected
  /// by w and added back onto x.
  NonLocalOutput forward_detailed(Tape& tape, Var x);
  Var forward(Tape& tape, Var x) { return forward_detailed(tape, x).output; }

  void collect(ParameterRefs& refs);
};

struct GLEModule {
  NonLocalBlock nonlocal;
  ConvBnRelu f1;
  ConvBnRelu f2;

  static GLEModule create(const std::string& name, std::size_t channels, std::uint64_t seed);
  Var forward(Tape& tape, Var x, Mode mode);
  void collect(ParameterRefs& refs);
};

struct GLEStack {
  std::vector<GLEModule> modules;

  /// Modules are named "<prefix>.<i>".
  static GLEStack create(const std::string& prefix, std::size_t channels, std::size_t k,
                         std::uint64_t seed);
  std::size_t depth() const { return modules.size(); }
  Var forward(Tape& tape, Var x, Mode mode);
  void collect(ParameterRefs& refs);
};

}  // namespace gle
