// SPDX-License-Identifier: Apache-2.0
#include "gle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gle/parallel.hpp"
#include "kernels.hpp"

namespace gle::ops {
namespace {

std::string dims(const Shape& s) { return shape_string(s); }

void require_rank(const char* op, const char* what, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    fail(ErrorKind::shape, std::string(op) + ": " + what + " must have rank " +
                               std::to_string(rank) + ", got " + dims(t.shape()));
  }
}

void require_axis(const char* op, const std::string& axis, std::size_t got, std::size_t want) {
  if (got != want) {
    fail(ErrorKind::shape, std::string(op) + ": " + axis + " is " + std::to_string(got) +
                               ", expected " + std::to_string(want));
  }
}

void require_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) fail(ErrorKind::numeric, std::string(op) + ": non-finite input");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + dims(a.shape()) + " vs " +
                               dims(b.shape()));
  }
}

// Sums per-sample partial weight gradients in sample order.
void reduce_partials(const std::vector<std::vector<double>>& partials, Tensor& dst) {
  double* out = dst.mutable_ptr();
  for (const auto& part : partials) {
    for (std::size_t i = 0; i < part.size(); ++i) out[i] += part[i];
  }
}

void add_bias_grad(const Tensor& dy, Tensor& db) {
  const std::size_t n = dy.dim(0), c = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* p = dy.ptr() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    db[ch] += s;
  }
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_inplace(b.value());
  return a.tape->emit("add", std::move(out), {a, b}, [](const BackwardPass& bp) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (Tensor* g = bp.in_grad(i)) g->add_inplace(bp.out_grad());
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape->emit("mul", std::move(out), {a, b}, [](const BackwardPass& bp) {
    const Tensor& dy = bp.out_grad();
    if (Tensor* g = bp.in_grad(0)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * bp.input(1)[i];
    }
    if (Tensor* g = bp.in_grad(1)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * bp.input(0)[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.mutable_data()) v *= factor;
  return a.tape->emit("scale", std::move(out), {a}, [factor](const BackwardPass& bp) {
    if (Tensor* g = bp.in_grad(0)) {
      const Tensor& dy = bp.out_grad();
      for (std::size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * factor;
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->emit("sum", Tensor::scalar(s), {a}, [](const BackwardPass& bp) {
    if (Tensor* g = bp.in_grad(0)) {
      const double d = bp.out_grad()[0];
      for (double& v : g->mutable_data()) v += d;
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->emit("reshape", std::move(out), {a}, [](const BackwardPass& bp) {
    if (Tensor* g = bp.in_grad(0)) {
      const Tensor& dy = bp.out_grad();
      for (std::size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i];
    }
  });
}

Var transpose_last2(Var a) {
  const Tensor& x = a.value();
  require_rank("transpose_last2", "input", x, 3);
  const std::size_t b = x.dim(0), m = x.dim(1), n = x.dim(2);
  Tensor out({b, n, m});
  for (std::size_t i = 0; i < b; ++i) {
    kernels::transpose(m, n, x.ptr() + i * m * n, out.mutable_ptr() + i * m * n);
  }
  return a.tape->emit("transpose_last2", std::move(out), {a}, [b, m, n](const BackwardPass& bp) {
    Tensor* g = bp.in_grad(0);
    if (!g) return;
    std::vector<double> tmp(m * n);
    for (std::size_t i = 0; i < b; ++i) {
      kernels::transpose(n, m, bp.out_grad().ptr() + i * m * n, tmp.data());
      double* dst = g->mutable_ptr() + i * m * n;
      for (std::size_t j = 0; j < m * n; ++j) dst[j] += tmp[j];
    }
  });
}

Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  check_same_tape(input, weight);
  check_same_tape(input, bias);
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank("conv2d", "input", x, 4);
  require_rank("conv2d", "weight", w, 4);
  require_rank("conv2d", "bias", b, 1);
  if (stride == 0) fail(ErrorKind::precondition, "conv2d: stride must be positive");
  require_axis("conv2d", "input channels (axis 1)", x.dim(1), w.dim(1));
  require_axis("conv2d", "bias length (axis 0)", b.dim(0), w.dim(0));
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (kh > h + 2 * padding) {
    fail(ErrorKind::shape, "conv2d: kernel height (axis 2) " + std::to_string(kh) +
                               " exceeds padded input height " + std::to_string(h + 2 * padding));
  }
  if (kw > wd + 2 * padding) {
    fail(ErrorKind::shape, "conv2d: kernel width (axis 3) " + std::to_string(kw) +
                               " exceeds padded input width " + std::to_string(wd + 2 * padding));
  }
  require_finite("conv2d", x);
  require_finite("conv2d", w);
  require_finite("conv2d", b);

  const kernels::PatchGeometry geo{cin, h, wd, kh, kw, stride, padding,
                                   (h + 2 * padding - kh) / stride + 1,
                                   (wd + 2 * padding - kw) / stride + 1};
  const std::size_t k = geo.patch_size(), pos = geo.positions();
  Tensor out({n, cout, geo.out_h, geo.out_w});
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> col(k * pos);
    kernels::im2col(geo, x.ptr() + i * cin * h * wd, col.data());
    double* y = out.mutable_ptr() + i * cout * pos;
    for (std::size_t c = 0; c < cout; ++c) std::fill(y + c * pos, y + (c + 1) * pos, b[c]);
    kernels::gemm_nn(cout, pos, k, w.ptr(), col.data(), y);
  });

  return input.tape->emit("conv2d", std::move(out), {input, weight, bias},
                          [geo, n, cout](const BackwardPass& bp) {
    const Tensor& x = bp.input(0);
    const Tensor& w = bp.input(1);
    const Tensor& dy = bp.out_grad();
    const std::size_t k = geo.patch_size(), pos = geo.positions();
    const std::size_t in_size = geo.channels * geo.height * geo.width;
    Tensor* dx = bp.in_grad(0);
    Tensor* dw = bp.in_grad(1);
    std::vector<std::vector<double>> partial(dw ? n : 0);
    parallel_for(n, [&](std::size_t i) {
      const double* dyi = dy.ptr() + i * cout * pos;
      if (dw) {
        std::vector<double> col(k * pos), col_t(pos * k);
        kernels::im2col(geo, x.ptr() + i * in_size, col.data());
        kernels::transpose(k, pos, col.data(), col_t.data());
        partial[i].assign(cout * k, 0.0);
        kernels::gemm_nn(cout, k, pos, dyi, col_t.data(), partial[i].data());
      }
      if (dx) {
        std::vector<double> dcol(k * pos, 0.0);
        kernels::gemm_tn(k, pos, cout, w.ptr(), dyi, dcol.data());
        kernels::col2im(geo, dcol.data(), dx->mutable_ptr() + i * in_size);
      }
    });
    if (dw) reduce_partials(partial, *dw);
    if (Tensor* db = bp.in_grad(2)) add_bias_grad(dy, *db);
  });
}

Var conv_transpose2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  check_same_tape(input, weight);
  check_same_tape(input, bias);
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank("conv_transpose2d", "input", x, 4);
  require_rank("conv_transpose2d", "weight", w, 4);
  require_rank("conv_transpose2d", "bias", b, 1);
  if (stride == 0) fail(ErrorKind::precondition, "conv_transpose2d: stride must be positive");
  require_axis("conv_transpose2d", "input channels (axis 1)", x.dim(1), w.dim(0));
  require_axis("conv_transpose2d", "bias length (axis 0)", b.dim(0), w.dim(1));
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (h == 0 || wd == 0) fail(ErrorKind::shape, "conv_transpose2d: empty spatial input");
  const long oh = static_cast<long>((h - 1) * stride + kh) - 2 * static_cast<long>(padding);
  const long ow = static_cast<long>((wd - 1) * stride + kw) - 2 * static_cast<long>(padding);
  if (oh < 1) fail(ErrorKind::shape, "conv_transpose2d: output height (axis 2) would be empty");
  if (ow < 1) fail(ErrorKind::shape, "conv_transpose2d: output width (axis 3) would be empty");
  require_finite("conv_transpose2d", x);
  require_finite("conv_transpose2d", w);
  require_finite("conv_transpose2d", b);

  // Geometry of the forward convolution this op is the adjoint of.
  const kernels::PatchGeometry geo{cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow),
                                   kh, kw, stride, padding, h, wd};
  const std::size_t k = geo.patch_size(), pos = geo.positions();
  const std::size_t out_plane = geo.height * geo.width;
  Tensor out({n, cout, geo.height, geo.width});
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> col(k * pos, 0.0);
    kernels::gemm_tn(k, pos, cin, w.ptr(), x.ptr() + i * cin * pos, col.data());
    double* y = out.mutable_ptr() + i * cout * out_plane;
    kernels::col2im(geo, col.data(), y);
    for (std::size_t c = 0; c < cout; ++c) {
      for (std::size_t j = 0; j < out_plane; ++j) y[c * out_plane + j] += b[c];
    }
  });

  return input.tape->emit("conv_transpose2d", std::move(out), {input, weight, bias},
                          [geo, n, cin, cout](const BackwardPass& bp) {
    const Tensor& x = bp.input(0);
    const Tensor& w = bp.input(1);
    const Tensor& dy = bp.out_grad();
    const std::size_t k = geo.patch_size(), pos = geo.positions();
    const std::size_t out_size = cout * geo.height * geo.width;
    Tensor* dx = bp.in_grad(0);
    Tensor* dw = bp.in_grad(1);
    std::vector<std::vector<double>> partial(dw ? n : 0);
    parallel_for(n, [&](std::size_t i) {
      std::vector<double> dcol(k * pos);
      kernels::im2col(geo, dy.ptr() + i * out_size, dcol.data());
      if (dx) kernels::gemm_nn(cin, pos, k, w.ptr(), dcol.data(), dx->mutable_ptr() + i * cin * pos);
      if (dw) {
        std::vector<double> dcol_t(pos * k);
        kernels::transpose(k, pos, dcol.data(), dcol_t.data());
        partial[i].assign(cin * k, 0.0);
        kernels::gemm_nn(cin, k, pos, x.ptr() + i * cin * pos, dcol_t.data(), partial[i].data());
      }
    });
    if (dw) reduce_partials(partial, *dw);
    if (Tensor* db = bp.in_grad(2)) add_bias_grad(dy, *db);
  });
}

Var batchnorm2d(Var input, Var gamma, Var beta, BatchNormStats& stats, Mode mode) {
  check_same_tape(input, gamma);
  check_same_tape(input, beta);
  const Tensor& x = input.value();
  require_rank("batchnorm2d", "input", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require_axis("batchnorm2d", "gamma length vs input channels (axis 1)", gamma.value().numel(), c);
  require_axis("batchnorm2d", "beta length vs input channels (axis 1)", beta.value().numel(), c);
  require_axis("batchnorm2d", "running mean length vs input channels (axis 1)",
               stats.running_mean.numel(), c);
  require_axis("batchnorm2d", "running var length vs input channels (axis 1)",
               stats.running_var.numel(), c);
  const std::size_t count = n * plane;
  if (count == 0) fail(ErrorKind::precondition, "batchnorm2d: N*H*W must be at least 1");
  if (!(stats.epsilon > 0.0)) fail(ErrorKind::precondition, "batchnorm2d: epsilon must be positive");
  const Tensor& g = gamma.value();
  const Tensor& bt = beta.value();

  auto channel = [&](const Tensor& t, std::size_t b, std::size_t ch) {
    return t.ptr() + (b * c + ch) * plane;
  };

  if (mode == Mode::eval) {
    Tensor out(x.shape());
    Tensor inv_std({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + stats.epsilon);
      const double mu = stats.running_mean[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = channel(x, b, ch);
        double* dst = out.mutable_ptr() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = g[ch] * ((src[i] - mu) * inv_std[ch]) + bt[ch];
      }
    }
    Tensor mean = stats.running_mean;
    return input.tape->emit("batchnorm2d", std::move(out), {input, gamma, beta},
                            [inv_std, mean, n, c, plane](const BackwardPass& bp) {
      const Tensor& x = bp.input(0);
      const Tensor& g = bp.input(1);
      const Tensor& dy = bp.out_grad();
      Tensor* dx = bp.in_grad(0);
      Tensor* dg = bp.in_grad(1);
      Tensor* db = bp.in_grad(2);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sg = 0.0, sb = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = dy[off + i];
            sg += d * (x[off + i] - mean[ch]) * inv_std[ch];
            sb += d;
            if (dx) (*dx)[off + i] += d * g[ch] * inv_std[ch];
          }
        }
        if (dg) (*dg)[ch] += sg;
        if (db) (*db)[ch] += sb;
      }
    });
  }

  Tensor xhat(x.shape());
  Tensor inv_std({c});
  Tensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = channel(x, b, ch);
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = channel(x, b, ch);
      for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
    }
    var /= static_cast<double>(count);
    inv_std[ch] = 1.0 / std::sqrt(var + stats.epsilon);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (x[off + i] - mean) * inv_std[ch];
        out[off + i] = g[ch] * xhat[off + i] + bt[ch];
      }
    }
    // Running variance tracks the unbiased estimate.
    const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
    stats.running_mean[ch] = (1.0 - stats.momentum) * stats.running_mean[ch] + stats.momentum * mean;
    stats.running_var[ch] = (1.0 - stats.momentum) * stats.running_var[ch] + stats.momentum * unbiased;
  }

  return input.tape->emit("batchnorm2d", std::move(out), {input, gamma, beta},
                          [xhat = std::move(xhat), inv_std, n, c, plane, count](const BackwardPass& bp) {
    const Tensor& g = bp.input(1);
    const Tensor& dy = bp.out_grad();
    Tensor* dx = bp.in_grad(0);
    Tensor* dg = bp.in_grad(1);
    Tensor* db = bp.in_grad(2);
    const double inv_count = 1.0 / static_cast<double>(count);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[off + i];
          sum_dy_xhat += dy[off + i] * xhat[off + i];
        }
      }
      if (dg) (*dg)[ch] += sum_dy_xhat;
      if (db) (*db)[ch] += sum_dy;
      if (!dx) continue;
      const double k = g[ch] * inv_std[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          (*dx)[off + i] += k * (dy[off + i] - inv_count * sum_dy - xhat[off + i] * inv_count * sum_dy_xhat);
        }
      }
    }
  });
}

Var relu(Var input) {
  Tensor out = input.value();
  for (double& v : out.mutable_data()) v = v > 0.0 ? v : 0.0;
  return input.tape->emit("relu", std::move(out), {input}, [](const BackwardPass& bp) {
    Tensor* g = bp.in_grad(0);
    if (!g) return;
    const Tensor& x = bp.input(0);
    const Tensor& dy = bp.out_grad();
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      if (x[i] > 0.0) (*g)[i] += dy[i];
    }
  });
}

Var max_pool2d(Var input, std::size_t kernel, std::size_t stride) {
  const Tensor& x = input.value();
  require_rank("max_pool2d", "input", x, 4);
  if (kernel == 0 || stride == 0) fail(ErrorKind::precondition, "max_pool2d: kernel and stride must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h) fail(ErrorKind::shape, "max_pool2d: kernel exceeds input height (axis 2)");
  if (kernel > w) fail(ErrorKind::shape, "max_pool2d: kernel exceeds input width (axis 3)");
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  std::vector<std::uint32_t> argmax(out.numel());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = x.ptr() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = (i * stride) * w + j * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = (i * stride + ki) * w + j * stride + kj;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        out[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  return input.tape->emit("max_pool2d", std::move(out), {input},
                          [argmax = std::move(argmax)](const BackwardPass& bp) {
    Tensor* g = bp.in_grad(0);
    if (!g) return;
    const Tensor& dy = bp.out_grad();
    for (std::size_t i = 0; i < dy.numel(); ++i) (*g)[argmax[i]] += dy[i];
  });
}

Var softmax_rows(Var input) {
  const Tensor& x = input.value();
  if (x.rank() == 0 || x.shape().back() == 0) {
    fail(ErrorKind::shape, "softmax_rows: trailing axis must have at least one element");
  }
  const std::size_t m = x.shape().back(), rows = x.numel() / m;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x.ptr() + r * m;
    double* dst = out.mutable_ptr() + r * m;
    const double mx = *std::max_element(src, src + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dst[j] = std::exp(src[j] - mx);
      s += dst[j];
    }
    for (std::size_t j = 0; j < m; ++j) dst[j] /= s;
  }
  return input.tape->emit("softmax_rows", std::move(out), {input}, [rows, m](const BackwardPass& bp) {
    Tensor* g = bp.in_grad(0);
    if (!g) return;
    const Tensor& y = bp.output();
    const Tensor& dy = bp.out_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * m;
      double inner = 0.0;
      for (std::size_t j = 0; j < m; ++j) inner += dy[off + j] * y[off + j];
      for (std::size_t j = 0; j < m; ++j) (*g)[off + j] += y[off + j] * (dy[off + j] - inner);
    }
  });
}

Var matmul_batched(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank("matmul_batched", "left operand", x, 3);
  require_rank("matmul_batched", "right operand", y, 3);
  require_axis("matmul_batched", "batch size (axis 0)", y.dim(0), x.dim(0));
  require_axis("matmul_batched", "inner dimension (right axis 1)", y.dim(1), x.dim(2));
  const std::size_t bs = x.dim(0), m = x.dim(1), k = x.dim(2), n = y.dim(2);
  Tensor out({bs, m, n});
  for (std::size_t i = 0; i < bs; ++i) {
    kernels::gemm_nn(m, n, k, x.ptr() + i * m * k, y.ptr() + i * k * n, out.mutable_ptr() + i * m * n);
  }
  return a.tape->emit("matmul_batched", std::move(out), {a, b}, [bs, m, k, n](const BackwardPass& bp) {
    const Tensor& x = bp.input(0);
    const Tensor& y = bp.input(1);
    const Tensor& dz = bp.out_grad();
    if (Tensor* dx = bp.in_grad(0)) {
      // dX = dZ * Y^T
      std::vector<double> yt(n * k);
      for (std::size_t i = 0; i < bs; ++i) {
        kernels::transpose(k, n, y.ptr() + i * k * n, yt.data());
        kernels::gemm_nn(m, k, n, dz.ptr() + i * m * n, yt.data(), dx->mutable_ptr() + i * m * k);
      }
    }
    if (Tensor* dy = bp.in_grad(1)) {
      // dY = X^T * dZ
      for (std::size_t i = 0; i < bs; ++i) {
        kernels::gemm_tn(k, n, m, x.ptr() + i * m * k, dz.ptr() + i * m * n, dy->mutable_ptr() + i * k * n);
      }
    }
  });
}

}  // namespace gle::ops
