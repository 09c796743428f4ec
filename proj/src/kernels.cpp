// SPDX-License-Identifier: Apache-2.0
#include "kernels.hpp"

namespace gle::kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

void im2col(const PatchGeometry& g, const double* image, double* col) {
  const long h = static_cast<long>(g.height);
  const long w = static_cast<long>(g.width);
  const long pad = static_cast<long>(g.padding);
  const long stride = static_cast<long>(g.stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        double* dst = col + row * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(ki);
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(kj);
            *dst++ = (ih >= 0 && ih < h && iw >= 0 && iw < w) ? plane[ih * w + iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const PatchGeometry& g, const double* col, double* image) {
  const long h = static_cast<long>(g.height);
  const long w = static_cast<long>(g.width);
  const long pad = static_cast<long>(g.padding);
  const long stride = static_cast<long>(g.stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const double* src = col + row * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(ki);
          for (std::size_t ow = 0; ow < g.out_w; ++ow, ++src) {
            const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(kj);
            if (ih >= 0 && ih < h && iw >= 0 && iw < w) plane[ih * w + iw] += *src;
          }
        }
      }
    }
  }
}

}  // namespace gle::kernels
