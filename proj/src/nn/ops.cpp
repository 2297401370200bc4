// Copyright 2026 The histoseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "histoseg/nn/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "histoseg/errors.hpp"

namespace histoseg::nn {

namespace {

std::atomic<std::uint64_t> g_conv_macs{0};

// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + shape_string(s));
}

struct ConvGeometry {
  int n, c, h, w, o, k, stride, pad, oh, ow;
  int col_rows() const { return c * k * k; }
  int col_cols() const { return oh * ow; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int plane = g.oh * g.ow;
  for (int c = 0; c < g.c; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * plane;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const int plane = g.oh * g.ow;
  for (int c = 0; c < g.c; ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * plane;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.ow;
          T* dst = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::uint64_t conv_mac_count() { return g_conv_macs.load(); }
void reset_conv_mac_count() { g_conv_macs.store(0); }

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, int stride, int padding) {
  const auto& xs = input.shape();
  const auto& ws = weights.shape();
  require_rank4(xs, "conv2d");
  if (ws.size() != 4 || ws[2] != ws[3]) throw ShapeError("conv2d: weights must be OIkk, got " + shape_string(ws));
  if (ws[1] != xs[1])
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, weights expect " +
                     std::to_string(ws[1]));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, padding, 0, 0};
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  const bool pointwise = g.k == 1 && stride == 1 && padding == 0;
  const int kdim = g.col_rows();
  const int plane = g.col_cols();
  Tensor<T> out({g.n, g.o, g.oh, g.ow});
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
  const T* x = input.value().ptr();
  const T* w = weights.value().ptr();
  for (int n = 0; n < g.n; ++n) {
    const T* xn = x + static_cast<std::size_t>(n) * g.c * g.h * g.w;
    const T* b = xn;
    if (!pointwise) {
      im2col(xn, g, col.data());
      b = col.data();
    }
    gemm<T>(false, false, g.o, plane, kdim, T{1}, w, kdim, b, plane, T{0},
            out.ptr() + static_cast<std::size_t>(n) * g.o * plane, plane);
  }
  g_conv_macs.fetch_add(static_cast<std::uint64_t>(g.n) * g.o * plane * kdim);

  return make_result<T>(std::move(out), {input, weights}, [g, pointwise](Node<T>& self) {
    const int kdim = g.col_rows();
    const int plane = g.col_cols();
    auto& xin = *self.parents[0];
    auto& wn = *self.parents[1];
    const T* x = xin.value.ptr();
    const T* w = wn.value.ptr();
    const T* gout = self.grad.ptr();
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
    std::vector<T> dcol(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
    T* dw = wn.requires_grad ? wn.grad_buffer().ptr() : nullptr;
    T* dx = xin.requires_grad ? xin.grad_buffer().ptr() : nullptr;
    for (int n = 0; n < g.n; ++n) {
      const std::size_t xoff = static_cast<std::size_t>(n) * g.c * g.h * g.w;
      const T* gn = gout + static_cast<std::size_t>(n) * g.o * plane;
      if (dw) {
        const T* b = x + xoff;
        if (!pointwise) {
          im2col(x + xoff, g, col.data());
          b = col.data();
        }
        gemm<T>(false, true, g.o, kdim, plane, T{1}, gn, plane, b, plane, T{1}, dw, kdim);
      }
      if (dx) {
        if (pointwise) {
          gemm<T>(true, false, kdim, plane, g.o, T{1}, w, kdim, gn, plane, T{1}, dx + xoff, plane);
        } else {
          gemm<T>(true, false, kdim, plane, g.o, T{1}, w, kdim, gn, plane, T{0}, dcol.data(), plane);
          col2im_add(dcol.data(), g, dx + xoff);
        }
      }
    }
  });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& input, const Var<T>& bias) {
  const auto& s = input.shape();
  require_rank4(s, "add_channel_bias");
  if (bias.value().size() != static_cast<std::size_t>(s[1])) throw ShapeError("add_channel_bias: bias size");
  Tensor<T> out = input.value();
  const int plane = s[2] * s[3];
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      T* p = out.ptr() + (static_cast<std::size_t>(n) * s[1] + c) * plane;
      const T b = bias.value()[c];
      for (int i = 0; i < plane; ++i) p[i] += b;
    }
  return make_result<T>(std::move(out), {input, bias}, [s, plane](Node<T>& self) {
    auto& xin = *self.parents[0];
    auto& bn = *self.parents[1];
    if (xin.requires_grad) xin.accumulate(self.grad);
    if (bn.requires_grad) {
      T* db = bn.grad_buffer().ptr();
      for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c) {
          const T* g = self.grad.ptr() + (static_cast<std::size_t>(n) * s[1] + c) * plane;
          T acc = 0;
          for (int i = 0; i < plane; ++i) acc += g[i];
          db[c] += acc;
        }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, NormMode mode, double momentum, double eps) {
  const auto& s = input.shape();
  require_rank4(s, "batch_norm");
  const int nb = s[0], nc = s[1], plane = s[2] * s[3];
  if (gamma.value().size() != static_cast<std::size_t>(nc) || beta.value().size() != static_cast<std::size_t>(nc) ||
      running_mean.size() != static_cast<std::size_t>(nc) || running_var.size() != static_cast<std::size_t>(nc))
    throw ShapeError("batch_norm: per-channel parameter size does not match " + shape_string(s));
  const std::size_t count = static_cast<std::size_t>(nb) * plane;
  if (count == 0) throw ShapeError("batch_norm: empty batch");

  const T* x = input.value().ptr();
  std::vector<T> mean(nc), inv_std(nc);
  for (int c = 0; c < nc; ++c) {
    if (mode == NormMode::Train) {
      double acc = 0.0;
      for (int n = 0; n < nb; ++n) {
        const T* p = x + (static_cast<std::size_t>(n) * nc + c) * plane;
        for (int i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < nb; ++n) {
        const T* p = x + (static_cast<std::size_t>(n) * nc + c) * plane;
        for (int i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }

  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < nc; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * nc + c) * plane;
      const T g = gamma.value()[c], b = beta.value()[c];
      for (int i = 0; i < plane; ++i) {
        const T h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = g * h + b;
      }
    }

  const bool train = mode == NormMode::Train;
  return make_result<T>(
      std::move(out), {input, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), nb, nc, plane, count, train](Node<T>& self) {
        auto& xin = *self.parents[0];
        auto& gn = *self.parents[1];
        auto& bn = *self.parents[2];
        const T* gy = self.grad.ptr();
        for (int c = 0; c < nc; ++c) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (int n = 0; n < nb; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * nc + c) * plane;
            for (int i = 0; i < plane; ++i) {
              sum_g += gy[off + i];
              sum_gh += static_cast<double>(gy[off + i]) * xhat[off + i];
            }
          }
          if (gn.requires_grad) gn.grad_buffer()[c] += static_cast<T>(sum_gh);
          if (bn.requires_grad) bn.grad_buffer()[c] += static_cast<T>(sum_g);
          if (xin.requires_grad) {
            T* dx = xin.grad_buffer().ptr();
            const T scale = gn.value[c] * inv_std[c];
            const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
            const T mean_gh = static_cast<T>(sum_gh / static_cast<double>(count));
            for (int n = 0; n < nb; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * nc + c) * plane;
              for (int i = 0; i < plane; ++i) {
                dx[off + i] += train ? scale * (gy[off + i] - mean_g - xhat[off + i] * mean_gh)
                                     : scale * gy[off + i];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> out = input.value();
  for (auto& v : out.vec()) v = v > T{0} ? v : T{0};
  return make_result<T>(std::move(out), {input}, [](Node<T>& self) {
    auto& xin = *self.parents[0];
    T* dx = xin.grad_buffer().ptr();
    const T* x = xin.value.ptr();
    const T* g = self.grad.ptr();
    for (std::size_t i = 0; i < xin.value.size(); ++i)
      if (x[i] > T{0}) dx[i] += g[i];
  });
}

template <typename T>
Var<T> max_pool(const Var<T>& input, int kernel, int stride, int padding) {
  const auto& s = input.shape();
  require_rank4(s, "max_pool");
  const int nb = s[0], nc = s[1], h = s[2], w = s[3];
  const int oh = (h + 2 * padding - kernel) / stride + 1;
  const int ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("max_pool: window larger than padded input");
  Tensor<T> out({nb, nc, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* x = input.value().ptr();
  std::size_t o = 0;
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < nc; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * nc + c) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          bool found = false;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(iy) * w + ix;
              if (!found || x[idx] > best) {
                best = x[idx];
                best_idx = idx;
                found = true;
              }
            }
          }
          out[o] = best;
          argmax[o] = best_idx;
        }
    }
  return make_result<T>(std::move(out), {input}, [argmax = std::move(argmax)](Node<T>& self) {
    T* dx = self.parents[0]->grad_buffer().ptr();
    const T* g = self.grad.ptr();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[i];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require_rank4(sa, "concat_channels");
  require_rank4(sb, "concat_channels");
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: " + shape_string(sa) + " vs " + shape_string(sb));
  const int nb = sa[0], ca = sa[1], cb = sb[1];
  const std::size_t plane = static_cast<std::size_t>(sa[2]) * sa[3];
  Tensor<T> out({nb, ca + cb, sa[2], sa[3]});
  for (int n = 0; n < nb; ++n) {
    std::copy_n(a.value().ptr() + n * ca * plane, ca * plane, out.ptr() + n * (ca + cb) * plane);
    std::copy_n(b.value().ptr() + n * cb * plane, cb * plane, out.ptr() + (n * (ca + cb) + ca) * plane);
  }
  return make_result<T>(std::move(out), {a, b}, [nb, ca, cb, plane](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    const T* g = self.grad.ptr();
    for (int n = 0; n < nb; ++n) {
      if (an.requires_grad) {
        T* da = an.grad_buffer().ptr() + n * ca * plane;
        const T* src = g + n * (ca + cb) * plane;
        for (std::size_t i = 0; i < ca * plane; ++i) da[i] += src[i];
      }
      if (bn.requires_grad) {
        T* db = bn.grad_buffer().ptr() + n * cb * plane;
        const T* src = g + (n * (ca + cb) + ca) * plane;
        for (std::size_t i = 0; i < cb * plane; ++i) db[i] += src[i];
      }
    }
  });
}

namespace {

struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;  // weight of `hi`
};

AxisTaps bilinear_taps(int in, int out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - lo;
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear(const Var<T>& input, int out_height, int out_width) {
  const auto& s = input.shape();
  require_rank4(s, "upsample_bilinear");
  const int nb = s[0], nc = s[1], h = s[2], w = s[3];
  if (out_height < 1 || out_width < 1) throw ShapeError("upsample_bilinear: empty target");
  if (out_height == h && out_width == w) {
    return make_result<T>(input.value(), {input}, [](Node<T>& self) { self.parents[0]->accumulate(self.grad); });
  }
  auto ty = bilinear_taps(h, out_height);
  auto tx = bilinear_taps(w, out_width);
  Tensor<T> out({nb, nc, out_height, out_width});
  const T* x = input.value().ptr();
  for (int p = 0; p < nb * nc; ++p) {
    const T* src = x + static_cast<std::size_t>(p) * h * w;
    T* dst = out.ptr() + static_cast<std::size_t>(p) * out_height * out_width;
    for (int oy = 0; oy < out_height; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = src + static_cast<std::size_t>(ty.lo[oy]) * w;
      const T* r1 = src + static_cast<std::size_t>(ty.hi[oy]) * w;
      for (int ox = 0; ox < out_width; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T top = r0[tx.lo[ox]] * (T{1} - fx) + r0[tx.hi[ox]] * fx;
        const T bot = r1[tx.lo[ox]] * (T{1} - fx) + r1[tx.hi[ox]] * fx;
        dst[static_cast<std::size_t>(oy) * out_width + ox] = top * (T{1} - fy) + bot * fy;
      }
    }
  }
  return make_result<T>(std::move(out), {input},
                        [ty = std::move(ty), tx = std::move(tx), nb, nc, h, w, out_height, out_width](Node<T>& self) {
                          T* dx = self.parents[0]->grad_buffer().ptr();
                          const T* g = self.grad.ptr();
                          for (int p = 0; p < nb * nc; ++p) {
                            T* d = dx + static_cast<std::size_t>(p) * h * w;
                            const T* gp = g + static_cast<std::size_t>(p) * out_height * out_width;
                            for (int oy = 0; oy < out_height; ++oy) {
                              const T fy = static_cast<T>(ty.frac[oy]);
                              T* r0 = d + static_cast<std::size_t>(ty.lo[oy]) * w;
                              T* r1 = d + static_cast<std::size_t>(ty.hi[oy]) * w;
                              for (int ox = 0; ox < out_width; ++ox) {
                                const T fx = static_cast<T>(tx.frac[ox]);
                                const T v = gp[static_cast<std::size_t>(oy) * out_width + ox];
                                r0[tx.lo[ox]] += v * (T{1} - fy) * (T{1} - fx);
                                r0[tx.hi[ox]] += v * (T{1} - fy) * fx;
                                r1[tx.lo[ox]] += v * fy * (T{1} - fx);
                                r1[tx.hi[ox]] += v * fy * fx;
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& input) {
  const auto& s = input.shape();
  require_rank4(s, "softmax_channels");
  const int nb = s[0], nc = s[1];
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  Tensor<T> out(s);
  const T* x = input.value().ptr();
  for (int n = 0; n < nb; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * nc * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T mx = x[base + i];
      for (int c = 1; c < nc; ++c) mx = std::max(mx, x[base + c * plane + i]);
      T total = 0;
      for (int c = 0; c < nc; ++c) {
        const T e = std::exp(x[base + c * plane + i] - mx);
        out[base + c * plane + i] = e;
        total += e;
      }
      for (int c = 0; c < nc; ++c) out[base + c * plane + i] /= total;
    }
  }
  return make_result<T>(std::move(out), {input}, [nb, nc, plane](Node<T>& self) {
    T* dx = self.parents[0]->grad_buffer().ptr();
    const T* g = self.grad.ptr();
    const T* p = self.value.ptr();
    for (int n = 0; n < nb; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * nc * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        T dot = 0;
        for (int c = 0; c < nc; ++c) dot += g[base + c * plane + i] * p[base + c * plane + i];
        for (int c = 0; c < nc; ++c) {
          const std::size_t k = base + c * plane + i;
          dx[k] += p[k] * (g[k] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    const T* g = self.grad.ptr();
    if (an.requires_grad) {
      T* d = an.grad_buffer().ptr();
      for (std::size_t i = 0; i < an.value.size(); ++i) d[i] += g[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      T* d = bn.grad_buffer().ptr();
      for (std::size_t i = 0; i < bn.value.size(); ++i) d[i] += g[i] * an.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
  Tensor<T> out = a.value();
  const T f = static_cast<T>(factor);
  for (auto& v : out.vec()) v *= f;
  return make_result<T>(std::move(out), {a}, [f](Node<T>& self) {
    T* d = self.parents[0]->grad_buffer().ptr();
    const T* g = self.grad.ptr();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += f * g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().vec()) acc += v;
  return make_result<T>(Tensor<T>({1}, static_cast<T>(acc)), {a}, [](Node<T>& self) {
    auto& an = *self.parents[0];
    T* d = an.grad_buffer().ptr();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < an.value.size(); ++i) d[i] += g;
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const Var<T>& w) {
  if (xs.empty()) throw ShapeError("weighted_sum: no inputs");
  if (w.value().size() != xs.size())
    throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " inputs but " +
                     std::to_string(w.value().size()) + " weights");
  const Shape& s = xs[0].shape();
  for (const auto& x : xs)
    if (x.shape() != s) throw ShapeError("weighted_sum: mismatched input shapes");
  Tensor<T> out(s);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T wk = w.value()[k];
    const T* x = xs[k].value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * x[i];
  }
  std::vector<Var<T>> parents = xs;
  parents.push_back(w);
  const std::size_t count = xs.size();
  return make_result<T>(std::move(out), std::move(parents), [count](Node<T>& self) {
    auto& wn = *self.parents[count];
    const T* g = self.grad.ptr();
    for (std::size_t k = 0; k < count; ++k) {
      auto& xn = *self.parents[k];
      if (xn.requires_grad) {
        T* d = xn.grad_buffer().ptr();
        const T wk = wn.value[k];
        for (std::size_t i = 0; i < xn.value.size(); ++i) d[i] += wk * g[i];
      }
      if (wn.requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < xn.value.size(); ++i) acc += static_cast<double>(g[i]) * xn.value[i];
        wn.grad_buffer()[k] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var<T> focal_loss(const Var<T>& probs, const Tensor<T>& target, double gamma) {
  const auto& s = probs.shape();
  require_rank4(s, "focal_loss");
  if (target.shape() != s)
    throw ShapeError("focal_loss: target " + shape_string(target.shape()) + " vs probs " + shape_string(s));
  const int nb = s[0], nc = s[1];
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  const std::size_t pixels = static_cast<std::size_t>(nb) * plane;
  const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  const T* p = probs.value().ptr();
  const T* t = target.ptr();
  std::vector<T> dloss_dpt(pixels);
  double acc = 0.0;
  for (int n = 0; n < nb; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * nc * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double pt = 0.0;
      for (int c = 0; c < nc; ++c) pt += static_cast<double>(t[base + c * plane + i]) * p[base + c * plane + i];
      const bool clamped = pt < lo || pt > hi;
      pt = std::clamp(pt, lo, hi);
      const double one_minus = 1.0 - pt;
      const double weight = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
      const double logp = std::log(pt);
      acc += -weight * logp;
      double d = 0.0;
      if (!clamped) {
        d = -weight / pt;
        if (gamma != 0.0) d += gamma * std::pow(one_minus, gamma - 1.0) * logp;
      }
      dloss_dpt[n * plane + i] = static_cast<T>(d / static_cast<double>(pixels));
    }
  }
  const T value = static_cast<T>(acc / static_cast<double>(pixels));
  return make_result<T>(Tensor<T>({1}, value), {probs},
                        [target, dloss_dpt = std::move(dloss_dpt), nb, nc, plane](Node<T>& self) {
                          T* dp = self.parents[0]->grad_buffer().ptr();
                          const T g = self.grad[0];
                          const T* t = target.ptr();
                          for (int n = 0; n < nb; ++n) {
                            const std::size_t base = static_cast<std::size_t>(n) * nc * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                              const T d = g * dloss_dpt[n * plane + i];
                              for (int c = 0; c < nc; ++c) dp[base + c * plane + i] += d * t[base + c * plane + i];
                            }
                          }
                        });
}

#define HISTOSEG_INSTANTIATE_OPS(T)                                                                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, int, int);                                          \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                          \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, NormMode, \
                             double, double);                                                              \
  template Var<T> relu(const Var<T>&);                                                                     \
  template Var<T> max_pool(const Var<T>&, int, int, int);                                                  \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                           \
  template Var<T> upsample_bilinear(const Var<T>&, int, int);                                              \
  template Var<T> softmax_channels(const Var<T>&);                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> scale(const Var<T>&, double);                                                            \
  template Var<T> sum(const Var<T>&);                                                                      \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const Var<T>&);                                 \
  template Var<T> focal_loss(const Var<T>&, const Tensor<T>&, double);

HISTOSEG_INSTANTIATE_OPS(float)
HISTOSEG_INSTANTIATE_OPS(double)

}  // namespace histoseg::nn
