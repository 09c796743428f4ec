// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels shared by the convolution ops. Loop orders are fixed so that
// results are bitwise reproducible.
#pragma once

#include <cstddef>

namespace gle::kernels {

/// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

/// c[m x n] += a[k x m]^T * b[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

/// dst[cols x rows] = src[rows x cols]^T
void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

struct PatchGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
};

/// col[(c,ki,kj) x (oh,ow)] gathered from a zero-padded image[c x h x w].
void im2col(const PatchGeometry& g, const double* image, double* col);

/// Adjoint of im2col: scatter-adds col back into image.
void col2im(const PatchGeometry& g, const double* col, double* image);

}  // namespace gle::kernels
