// SPDX-License-Identifier: Apache-2.0
#include "gle/gle.hpp"

namespace gle {

NonLocalBlock NonLocalBlock::create(const std::string& name, std::size_t channels,
                                    std::uint64_t seed) {
  if (channels < 2 || channels % 2 != 0) {
    fail(ErrorKind::precondition,
         "non-local block needs an even channel count >= 2, got " + std::to_string(channels));
  }
  NonLocalBlock b;
  b.channels = channels;
  b.embed_channels = channels / 2;
  b.theta = Conv2dLayer::create(name + ".theta", channels, b.embed_channels, 1, 1, 0, seed);
  b.phi = Conv2dLayer::create(name + ".phi", channels, b.embed_channels, 1, 1, 0, seed, false);
  b.g = Conv2dLayer::create(name + ".g", channels, b.embed_channels, 1, 1, 0, seed);
  b.w = Conv2dLayer::create(name + ".w", b.embed_channels, channels, 1, 1, 0, seed);
  b.w.weight.value.fill(0.0);
  return b;
}

NonLocalOutput NonLocalBlock::forward_detailed(Tape& tape, Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4) {
    fail(ErrorKind::shape, "non-local block: input must be [N,C,H,W], got " + shape_string(s));
  }
  if (s[1] != channels) {
    fail(ErrorKind::shape, "non-local block: input channels (axis 1) is " + std::to_string(s[1]) +
                               ", block expects " + std::to_string(channels));
  }
  const std::size_t n = s[0], h = s[2], wd = s[3], m = h * wd;
  if (m == 0) fail(ErrorKind::precondition, "non-local block: H*W must be at least 1");
  if (m > kMaxNonLocalPositions) {
    fail(ErrorKind::precondition, "non-local block: H*W = " + std::to_string(m) +
                                      " exceeds the affinity limit of " +
                                      std::to_string(kMaxNonLocalPositions));
  }
  const std::size_t e = embed_channels;

  Var queries = ops::transpose_last2(ops::reshape(theta.forward(tape, x), {n, e, m}));  // [N,M,E]
  Var keys = ops::reshape(phi.forward(tape, x), {n, e, m});                             // [N,E,M]
  Var values = ops::transpose_last2(ops::reshape(g.forward(tape, x), {n, e, m}));       // [N,M,E]

  Var affinity = ops::softmax_rows(ops::matmul_batched(queries, keys));  // [N,M,M]
  Var y = ops::matmul_batched(affinity, values);                         // [N,M,E]
  y = ops::reshape(ops::transpose_last2(y), {n, e, h, wd});
  return {ops::add(w.forward(tape, y), x), affinity};
}

void NonLocalBlock::collect(ParameterRefs& refs) {
  theta.collect(refs);
  phi.collect(refs);
  g.collect(refs);
  w.collect(refs);
}

GLEModule GLEModule::create(const std::string& name, std::size_t channels, std::uint64_t seed) {
  return GLEModule{NonLocalBlock::create(name + ".nonlocal", channels, seed),
                   ConvBnRelu::create(name + ".f1", channels, channels, 3, 1, seed),
                   ConvBnRelu::create(name + ".f2", channels, channels, 3, 1, seed)};
}

Var GLEModule::forward(Tape& tape, Var x, Mode mode) {
  Var z = nonlocal.forward(tape, x);
  z = f1.forward(tape, z, mode);
  return f2.forward(tape, z, mode);
}

void GLEModule::collect(ParameterRefs& refs) {
  nonlocal.collect(refs);
  f1.collect(refs);
  f2.collect(refs);
}

GLEStack GLEStack::create(const std::string& prefix, std::size_t channels, std::size_t k,
                          std::uint64_t seed) {
  if (k < 1) fail(ErrorKind::precondition, "GLE stack depth k must be at least 1");
  GLEStack stack;
  stack.modules.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    stack.modules.push_back(GLEModule::create(prefix + "." + std::to_string(i), channels, seed));
  }
  return stack;
}

Var GLEStack::forward(Tape& tape, Var x, Mode mode) {
  for (auto& m : modules) x = m.forward(tape, x, mode);
  return x;
}

void GLEStack::collect(ParameterRefs& refs) {
  for (auto& m : modules) m.collect(refs);
}

}  // namespace gle
