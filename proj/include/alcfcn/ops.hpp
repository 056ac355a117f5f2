#pragma once

// Differentiable primitives used by the model, the affinity math and the losses.

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "alcfcn/errors.hpp"
#include "alcfcn/tensor.hpp"

namespace alcfcn {

inline constexpr double kLogClamp = 1e-7;

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
  }
}

// C[m,n] += A[m,k] * B[k,n], all row-major.
template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A^T * B where A is [m,k] and B is [m,n].
template <typename T>
void gemm_at_b_accumulate(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      if (av == T(0)) continue;
      T* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* src, int rows, int cols) {
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
  }
  return out;
}

template <typename T, typename Forward, typename Derivative>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, Forward f, Derivative dfdx) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [dfdx](TensorNode<T>& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * dfdx(xin[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

// Subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// log(max(x, eps)); zero gradient where the clamp is active.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, double eps = kLogClamp) {
  const T e = static_cast<T>(eps);
  return detail::unary<T>(
      "log_clamped", x, [e](T v) { return std::log(v > e ? v : e); },
      [e](T v, T) { return v > e ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T a = static_cast<T>(factor);
  return detail::unary<T>(
      "scale", x, [a](T v) { return a * v; }, [a](T, T) { return a; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double offset) {
  const T b = static_cast<T>(offset);
  return detail::unary<T>(
      "add_scalar", x, [b](T v) { return v + b; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, -1.0);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_result<T>("div", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    const auto& bv = self.parents[1]->data;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i] * self.data[i] / bv[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and indexing

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>("sum", {}, {total}, {x}, [](TensorNode<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

// Sum of w[i] * x[i] with constant weights.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights) {
  if (weights.size() != x.numel()) throw DimensionError("weighted_sum: weight count does not match tensor");
  T total = T(0);
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * x[i];
  return make_result<T>("weighted_sum", {}, {total}, {x}, [w = std::move(weights)](TensorNode<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += self.grad[0] * w[i];
    }
  });
}

// Maximum over all entries; the subgradient goes to the first maximum in
// row-major order.
template <typename T>
Tensor<T> max_all(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("max_all on an empty tensor");
  std::size_t best = 0;
  auto v = x.data();
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return make_result<T>("max_all", {}, {v[best]}, {x}, [best](TensorNode<T>& self) {
    if (auto* g = parent_grad(self, 0)) (*g)[best] += self.grad[0];
  });
}

// Flat-index gather into a 1-D tensor; repeated indices accumulate gradient.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> indices) {
  std::vector<T> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.numel()) throw DimensionError("gather: index out of range");
    out[i] = x[indices[i]];
  }
  const int n = static_cast<int>(indices.size());
  return make_result<T>("gather", {n}, std::move(out), {x}, [idx = std::move(indices)](TensorNode<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[idx[i]] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> select_channel(const Tensor<T>& x, int channel) {
  detail::require_rank(x, 3, "select_channel");
  if (channel < 0 || channel >= x.dim(0)) throw DimensionError("select_channel: channel out of range");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<std::size_t> idx(plane);
  std::iota(idx.begin(), idx.end(), plane * channel);
  auto flat = gather(x, std::move(idx));
  // Reshape view: gather already produced a fresh node, relabel its shape.
  flat.node()->shape = {x.dim(1), x.dim(2)};
  return flat;
}

// Concatenation along dimension 0 of rank-3 tensors with equal spatial size.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int channels = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w) throw DimensionError("concat_channels: spatial size mismatch");
    channels += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(channels) * h * w);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>("concat_channels", {channels, h, w}, std::move(out), parts, [](TensorNode<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t n = self.parents[p]->data.size();
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

// Top-left crop of a [C,H,W] tensor.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, int height, int width) {
  detail::require_rank(x, 3, "crop");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (height > h || width > w || height <= 0 || width <= 0) throw DimensionError("crop: target larger than input");
  if (height == h && width == w) return x;
  std::vector<std::size_t> idx;
  idx.reserve(static_cast<std::size_t>(c) * height * width);
  for (int k = 0; k < c; ++k) {
    for (int y = 0; y < height; ++y) {
      for (int xx = 0; xx < width; ++xx) idx.push_back((static_cast<std::size_t>(k) * h + y) * w + xx);
    }
  }
  auto out = gather(x, std::move(idx));
  out.node()->shape = {c, height, width};
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

// input [C_in,H,W], kernel [C_out,C_in,kh,kw], no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int padding = 0) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                         std::to_string(cin));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ContractError("conv2d: kernel extents must be odd");
  if (stride < 1 || padding < 0) throw ContractError("conv2d: stride must be >= 1 and padding >= 0");
  const int hout = (h + 2 * padding - kh) / stride + 1;
  const int wout = (w + 2 * padding - kw) / stride + 1;
  if (h + 2 * padding < kh || w + 2 * padding < kw) throw DimensionError("conv2d: kernel larger than padded input");

  const int ck = cin * kh * kw;
  const int npix = hout * wout;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  auto im2col = [=](const std::vector<T>& x) {
    std::vector<T> cols(static_cast<std::size_t>(ck) * npix, T(0));
    for (int c = 0; c < cin; ++c) {
      for (int ki = 0; ki < kh; ++ki) {
        for (int kj = 0; kj < kw; ++kj) {
          T* row = cols.data() + static_cast<std::size_t>((c * kh + ki) * kw + kj) * npix;
          for (int oy = 0; oy < hout; ++oy) {
            const int iy = oy * stride - padding + ki;
            if (iy < 0 || iy >= h) continue;
            const T* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
            for (int ox = 0; ox < wout; ++ox) {
              const int ix = ox * stride - padding + kj;
              if (ix >= 0 && ix < w) row[oy * wout + ox] = src[ix];
            }
          }
        }
      }
    }
    return cols;
  };

  std::shared_ptr<std::vector<T>> cols;
  const T* colsp = input.data().data();
  if (!pointwise) {
    cols = std::make_shared<std::vector<T>>(im2col(input.node()->data));
    colsp = cols->data();
  }
  std::vector<T> out(static_cast<std::size_t>(cout) * npix, T(0));
  detail::gemm_accumulate(cout, npix, ck, kernel.data().data(), colsp, out.data());

  return make_result<T>(
      "conv2d", {cout, hout, wout}, std::move(out), {input, kernel},
      [=](TensorNode<T>& self) {
        const auto& xin = self.parents[0]->data;
        const auto& kern = self.parents[1]->data;
        const T* cp = pointwise ? xin.data() : cols->data();
        if (auto* gk = parent_grad(self, 1)) {
          // gK[cout,ck] += gY[cout,npix] * cols^T
          auto cols_t = detail::transpose(cp, ck, npix);
          detail::gemm_accumulate(cout, ck, npix, self.grad.data(), cols_t.data(), gk->data());
        }
        if (auto* gx = parent_grad(self, 0)) {
          if (pointwise) {
            detail::gemm_at_b_accumulate(cout, npix, ck, kern.data(), self.grad.data(), gx->data());
            return;
          }
          std::vector<T> gcols(static_cast<std::size_t>(ck) * npix, T(0));
          detail::gemm_at_b_accumulate(cout, npix, ck, kern.data(), self.grad.data(), gcols.data());
          for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < kh; ++ki) {
              for (int kj = 0; kj < kw; ++kj) {
                const T* row = gcols.data() + static_cast<std::size_t>((c * kh + ki) * kw + kj) * npix;
                for (int oy = 0; oy < hout; ++oy) {
                  const int iy = oy * stride - padding + ki;
                  if (iy < 0 || iy >= h) continue;
                  T* dst = gx->data() + (static_cast<std::size_t>(c) * h + iy) * w;
                  for (int ox = 0; ox < wout; ++ox) {
                    const int ix = ox * stride - padding + kj;
                    if (ix >= 0 && ix < w) dst[ix] += row[oy * wout + ox];
                  }
                }
              }
            }
          }
        }
      });
}

// x [C,H,W] + bias [C] broadcast over pixels.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank(x, 3, "add_channel_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(0)) throw DimensionError("add_channel_bias: bias length mismatch");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<T> out(x.numel());
  for (int k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < plane; ++i) out[k * plane + i] = x[k * plane + i] + bias[k];
  }
  return make_result<T>("add_channel_bias", x.shape(), std::move(out), {x, bias}, [c, plane](TensorNode<T>& self) {
    if (auto* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (int k = 0; k < c; ++k) {
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += self.grad[k * plane + i];
        (*gb)[k] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Resampling and normalization

namespace detail {
struct LinearTap {
  int lo, hi;
  double frac;
};

// Half-pixel-centre source taps: s = (d + 0.5) * in/out - 0.5, clamped.
inline std::vector<LinearTap> bilinear_taps(int in, int out) {
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double s = (d + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(s));
    taps[d] = {lo, std::min(lo + 1, in - 1), s - lo};
  }
  return taps;
}
}  // namespace detail

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int out_h, int out_w) {
  detail::require_rank(x, 3, "bilinear_upsample");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h <= 0 || out_w <= 0 || h <= 0 || w <= 0) throw DimensionError("bilinear_upsample: zero-sized extent");
  if (out_h < h || out_w < w) throw ContractError("bilinear_upsample: target smaller than input");
  if (out_h == h && out_w == w) return x;
  auto ty = detail::bilinear_taps(h, out_h);
  auto tx = detail::bilinear_taps(w, out_w);
  std::vector<T> out(static_cast<std::size_t>(c) * out_h * out_w);
  auto in = x.data();
  for (int k = 0; k < c; ++k) {
    const T* src = in.data() + static_cast<std::size_t>(k) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(k) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty[y].frac);
      const T* r0 = src + static_cast<std::size_t>(ty[y].lo) * w;
      const T* r1 = src + static_cast<std::size_t>(ty[y].hi) * w;
      for (int xx = 0; xx < out_w; ++xx) {
        const T fx = static_cast<T>(tx[xx].frac);
        const T top = (T(1) - fx) * r0[tx[xx].lo] + fx * r0[tx[xx].hi];
        const T bot = (T(1) - fx) * r1[tx[xx].lo] + fx * r1[tx[xx].hi];
        dst[static_cast<std::size_t>(y) * out_w + xx] = (T(1) - fy) * top + fy * bot;
      }
    }
  }
  return make_result<T>(
      "bilinear_upsample", {c, out_h, out_w}, std::move(out), {x},
      [=, ty = std::move(ty), tx = std::move(tx)](TensorNode<T>& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        for (int k = 0; k < c; ++k) {
          T* g = gx->data() + static_cast<std::size_t>(k) * h * w;
          const T* gy = self.grad.data() + static_cast<std::size_t>(k) * out_h * out_w;
          for (int y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty[y].frac);
            T* r0 = g + static_cast<std::size_t>(ty[y].lo) * w;
            T* r1 = g + static_cast<std::size_t>(ty[y].hi) * w;
            for (int xx = 0; xx < out_w; ++xx) {
              const T fx = static_cast<T>(tx[xx].frac);
              const T v = gy[static_cast<std::size_t>(y) * out_w + xx];
              r0[tx[xx].lo] += (T(1) - fy) * (T(1) - fx) * v;
              r0[tx[xx].hi] += (T(1) - fy) * fx * v;
              r1[tx[xx].lo] += fy * (T(1) - fx) * v;
              r1[tx[xx].hi] += fy * fx * v;
            }
          }
        }
      });
}

// Softmax over dimension 0 of a [K,H,W] tensor, max-subtracted.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  detail::require_rank(logits, 3, "softmax_channels");
  const int k = logits.dim(0);
  if (k < 2) throw ContractError("softmax_channels: need at least two channels");
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  std::vector<T> out(logits.numel());
  auto in = logits.data();
  for (std::size_t p = 0; p < plane; ++p) {
    T m = in[p];
    for (int c = 1; c < k; ++c) m = std::max(m, in[c * plane + p]);
    T z = T(0);
    for (int c = 0; c < k; ++c) {
      out[c * plane + p] = std::exp(in[c * plane + p] - m);
      z += out[c * plane + p];
    }
    for (int c = 0; c < k; ++c) out[c * plane + p] /= z;
  }
  return make_result<T>("softmax_channels", logits.shape(), std::move(out), {logits}, [k, plane](TensorNode<T>& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t p = 0; p < plane; ++p) {
      T dot = T(0);
      for (int c = 0; c < k; ++c) dot += self.grad[c * plane + p] * self.data[c * plane + p];
      for (int c = 0; c < k; ++c) {
        (*gx)[c * plane + p] += self.data[c * plane + p] * (self.grad[c * plane + p] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Sparse matrix times dense map

// Compressed-row sparsity pattern; entries of a row are in ascending column order.
struct SparsePattern {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col_idx;
  std::size_t nnz() const { return col_idx.size(); }
};

// Y[k,:] = M * X[k,:] for every leading slice k, where M has the given
// pattern and `values` (length nnz). Each row accumulates in column order.
template <typename T>
Tensor<T> sparse_matmul(std::shared_ptr<const SparsePattern> pattern, const Tensor<T>& values, const Tensor<T>& x) {
  const auto& pat = *pattern;
  if (values.numel() != pat.nnz()) throw DimensionError("sparse_matmul: value count does not match pattern");
  if (x.rank() < 2) throw DimensionError("sparse_matmul: dense operand needs a leading slice dimension");
  const int slices = x.dim(0);
  const std::size_t n = x.numel() / static_cast<std::size_t>(slices);
  if (n != static_cast<std::size_t>(pat.cols)) {
    throw DimensionError("sparse_matmul: dense operand has " + std::to_string(n) + " columns per slice, matrix has " +
                         std::to_string(pat.cols));
  }
  Shape out_shape = pat.rows == pat.cols ? x.shape() : Shape{slices, pat.rows};
  std::vector<T> out(static_cast<std::size_t>(slices) * pat.rows);
  auto vals = values.data();
  auto in = x.data();
  for (int s = 0; s < slices; ++s) {
    const T* xs = in.data() + static_cast<std::size_t>(s) * pat.cols;
    T* ys = out.data() + static_cast<std::size_t>(s) * pat.rows;
    for (int r = 0; r < pat.rows; ++r) {
      T acc = T(0);
      for (int e = pat.row_ptr[r]; e < pat.row_ptr[r + 1]; ++e) acc += vals[e] * xs[pat.col_idx[e]];
      ys[r] = acc;
    }
  }
  return make_result<T>(
      "sparse_matmul", std::move(out_shape), std::move(out), {values, x},
      [pattern = std::move(pattern), slices](TensorNode<T>& self) {
        const auto& pat = *pattern;
        const auto& vals = self.parents[0]->data;
        const auto& xin = self.parents[1]->data;
        auto* gv = parent_grad(self, 0);
        auto* gx = parent_grad(self, 1);
        for (int s = 0; s < slices; ++s) {
          const T* gy = self.grad.data() + static_cast<std::size_t>(s) * pat.rows;
          const T* xs = xin.data() + static_cast<std::size_t>(s) * pat.cols;
          for (int r = 0; r < pat.rows; ++r) {
            const T g = gy[r];
            for (int e = pat.row_ptr[r]; e < pat.row_ptr[r + 1]; ++e) {
              const int c = pat.col_idx[e];
              if (gv) (*gv)[e] += g * xs[c];
              if (gx) (*gx)[static_cast<std::size_t>(s) * pat.cols + c] += g * vals[e];
            }
          }
        }
      });
}

}  // namespace alcfcn
