// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "gle/tape.hpp"

namespace gle {

enum class Mode { train, eval };

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, 1.0)) {}

  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

namespace ops {

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var reshape(Var a, Shape shape);
/// [B,M,N] -> [B,N,M]
Var transpose_last2(Var a);

/// Cross-correlation of the zero-padded input with weight[Cout,Cin,kh,kw].
Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding);

/// Adjoint of conv2d; weight layout is [Cin,Cout,kh,kw] and the output extent
/// is (H-1)*stride - 2*padding + kh.
Var conv_transpose2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding);

/// Train mode normalizes with batch statistics over (N,H,W) and updates the
/// running statistics; eval mode reads them.
Var batchnorm2d(Var input, Var gamma, Var beta, BatchNormStats& stats, Mode mode);

Var relu(Var input);

/// Max pooling without padding; ties resolve to the first element in
/// row-major window order.
Var max_pool2d(Var input, std::size_t kernel, std::size_t stride);

/// Softmax over the trailing axis with max subtraction.
Var softmax_rows(Var input);

/// [B,M,K] x [B,K,N] -> [B,M,N]
Var matmul_batched(Var a, Var b);

}  // namespace ops
}  // namespace gle
