#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "caer/tensor.hpp"

namespace caer {

enum class Mode { kTrain, kEval };

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Convolution (stride 1, zero padding), via im2col + matrix multiply.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParams {
  Tensor<T> weight;                       // (out_c, in_c, kt, kh, kw); rank 4 drops kt
  Tensor<T> bias;                         // (out_c)
  std::array<std::int64_t, 3> pad{0, 0, 0};  // (pt, ph, pw)
};

template <typename T>
struct ConvGrad {
  Tensor<T> d_input;
  Tensor<T> d_weight;
  Tensor<T> d_bias;
};

namespace detail {

struct ConvGeom {
  std::int64_t n, c, t, h, w;        // input
  std::int64_t oc, kt, kh, kw;       // kernel
  std::int64_t pt, ph, pw;           // padding
  std::int64_t ot, oh, ow;           // output
  std::int64_t patch() const { return ot * oh * ow; }
  std::int64_t k() const { return c * kt * kh * kw; }
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const ConvParams<T>& p) {
  const int xr = x.rank();
  const int wr = p.weight.rank();
  if ((xr != 4 && xr != 5) || wr != xr)
    throw ShapeError("conv: input rank " + std::to_string(xr) + " and weight rank " +
                     std::to_string(wr) + " must both be 4 or 5");
  ConvGeom g{};
  if (xr == 5) {
    g = {x.extent(0), x.extent(1), x.extent(2), x.extent(3), x.extent(4),
         p.weight.extent(0), p.weight.extent(2), p.weight.extent(3), p.weight.extent(4),
         p.pad[0], p.pad[1], p.pad[2], 0, 0, 0};
    if (p.weight.extent(1) != g.c)
      throw ShapeError("conv: input has " + std::to_string(g.c) + " channels, kernel expects " +
                       std::to_string(p.weight.extent(1)));
  } else {
    g = {x.extent(0), x.extent(1), 1, x.extent(2), x.extent(3),
         p.weight.extent(0), 1, p.weight.extent(2), p.weight.extent(3),
         0, p.pad[1], p.pad[2], 0, 0, 0};
    if (p.weight.extent(1) != g.c)
      throw ShapeError("conv: input has " + std::to_string(g.c) + " channels, kernel expects " +
                       std::to_string(p.weight.extent(1)));
  }
  if (p.bias.rank() != 1 || p.bias.extent(0) != g.oc)
    throw ShapeError("conv: bias must have shape (" + std::to_string(g.oc) + ")");
  g.ot = g.t + 2 * g.pt - g.kt + 1;
  g.oh = g.h + 2 * g.ph - g.kh + 1;
  g.ow = g.w + 2 * g.pw - g.kw + 1;
  if (g.ot < 1 || g.oh < 1 || g.ow < 1)
    throw ShapeError("conv: kernel exceeds padded input extents");
  return g;
}

// One sample's receptive fields laid out as a (k x patch) row-major matrix.
template <typename T>
void im2col(const T* xs, const ConvGeom& g, T* col) {
  const std::int64_t patch = g.patch();
  std::int64_t row = 0;
  for (std::int64_t ic = 0; ic < g.c; ++ic)
    for (std::int64_t dt = 0; dt < g.kt; ++dt)
      for (std::int64_t dh = 0; dh < g.kh; ++dh)
        for (std::int64_t dw = 0; dw < g.kw; ++dw, ++row) {
          T* dst = col + row * patch;
          for (std::int64_t to = 0; to < g.ot; ++to) {
            const std::int64_t ti = to + dt - g.pt;
            if (ti < 0 || ti >= g.t) {
              std::fill_n(dst, g.oh * g.ow, T(0));
              dst += g.oh * g.ow;
              continue;
            }
            for (std::int64_t ho = 0; ho < g.oh; ++ho, dst += g.ow) {
              const std::int64_t hi = ho + dh - g.ph;
              if (hi < 0 || hi >= g.h) {
                std::fill_n(dst, g.ow, T(0));
                continue;
              }
              const T* src = xs + ((ic * g.t + ti) * g.h + hi) * g.w + (dw - g.pw);
              const std::int64_t a = std::clamp<std::int64_t>(g.pw - dw, 0, g.ow);
              const std::int64_t b = std::clamp<std::int64_t>(g.w + g.pw - dw, a, g.ow);
              std::fill(dst, dst + a, T(0));
              if (b > a) std::copy(src + a, src + b, dst + a);
              std::fill(dst + b, dst + g.ow, T(0));
            }
          }
        }
}

// Scatter-add of a column matrix back onto one sample, inverse of im2col.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* xs) {
  const std::int64_t patch = g.patch();
  std::int64_t row = 0;
  for (std::int64_t ic = 0; ic < g.c; ++ic)
    for (std::int64_t dt = 0; dt < g.kt; ++dt)
      for (std::int64_t dh = 0; dh < g.kh; ++dh)
        for (std::int64_t dw = 0; dw < g.kw; ++dw, ++row) {
          const T* src = col + row * patch;
          for (std::int64_t to = 0; to < g.ot; ++to) {
            const std::int64_t ti = to + dt - g.pt;
            if (ti < 0 || ti >= g.t) {
              src += g.oh * g.ow;
              continue;
            }
            for (std::int64_t ho = 0; ho < g.oh; ++ho, src += g.ow) {
              const std::int64_t hi = ho + dh - g.ph;
              if (hi < 0 || hi >= g.h) continue;
              T* dst = xs + ((ic * g.t + ti) * g.h + hi) * g.w + (dw - g.pw);
              const std::int64_t a = std::clamp<std::int64_t>(g.pw - dw, 0, g.ow);
              const std::int64_t b = std::clamp<std::int64_t>(g.w + g.pw - dw, a, g.ow);
              for (std::int64_t wo = a; wo < b; ++wo) dst[wo] += src[wo];
            }
          }
        }
}

template <typename T>
Shape conv_out_shape(const Tensor<T>& x, const ConvGeom& g) {
  if (x.rank() == 5) return Shape{g.n, g.oc, g.ot, g.oh, g.ow};
  return Shape{g.n, g.oc, g.oh, g.ow};
}

}  // namespace detail

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvParams<T>& p) {
  const auto g = detail::conv_geometry(x, p);
  Tensor<T> out(detail::conv_out_shape(x, g));
  const std::int64_t k = g.k(), patch = g.patch();
  AlignedVec<T> col(static_cast<std::size_t>(k * patch));
  Eigen::Map<const MatRM<T>> wm(p.weight.data(), g.oc, k);
  const std::int64_t in_stride = g.c * g.t * g.h * g.w;
  const std::int64_t out_stride = g.oc * patch;
  for (std::int64_t s = 0; s < g.n; ++s) {
    detail::im2col(x.data() + s * in_stride, g, col.data());
    Eigen::Map<const MatRM<T>> cm(col.data(), k, patch);
    Eigen::Map<MatRM<T>> om(out.data() + s * out_stride, g.oc, patch);
    om.noalias() = wm * cm;
    for (std::int64_t o = 0; o < g.oc; ++o) om.row(o).array() += p.bias[o];
  }
  return out;
}

template <typename T>
ConvGrad<T> conv_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& d_out) {
  const auto g = detail::conv_geometry(x, p);
  if (d_out.shape() != detail::conv_out_shape(x, g))
    throw ShapeError("conv_backward: upstream gradient shape " + d_out.shape().str() +
                     " does not match forward output " + detail::conv_out_shape(x, g).str());
  ConvGrad<T> grad{Tensor<T>(x.shape()), Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  const std::int64_t k = g.k(), patch = g.patch();
  AlignedVec<T> col(static_cast<std::size_t>(k * patch));
  AlignedVec<T> dcol(static_cast<std::size_t>(k * patch));
  Eigen::Map<const MatRM<T>> wm(p.weight.data(), g.oc, k);
  Eigen::Map<MatRM<T>> dwm(grad.d_weight.data(), g.oc, k);
  const std::int64_t in_stride = g.c * g.t * g.h * g.w;
  const std::int64_t out_stride = g.oc * patch;
  for (std::int64_t s = 0; s < g.n; ++s) {
    detail::im2col(x.data() + s * in_stride, g, col.data());
    Eigen::Map<const MatRM<T>> cm(col.data(), k, patch);
    Eigen::Map<const MatRM<T>> dom(d_out.data() + s * out_stride, g.oc, patch);
    dwm.noalias() += dom * cm.transpose();
    for (std::int64_t o = 0; o < g.oc; ++o) grad.d_bias[o] += dom.row(o).sum();
    Eigen::Map<MatRM<T>> dcm(dcol.data(), k, patch);
    dcm.noalias() = wm.transpose() * dom;
    detail::col2im(dcol.data(), g, grad.d_input.data() + s * in_stride);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Max pooling. Kernel equals stride throughout the architecture, but the
// implementation accepts any window that tiles the input.
// ---------------------------------------------------------------------------

struct MaxPoolAux {
  Shape in_shape;
  Shape out_shape;
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  // Winner position per output element, flat within its (n, c) sub-volume.
  std::vector<std::int32_t> argmax;
};

template <typename T>
std::pair<Tensor<T>, MaxPoolAux> maxpool_forward(const Tensor<T>& x,
                                                 std::array<std::int64_t, 3> kernel,
                                                 std::array<std::int64_t, 3> stride) {
  if (x.rank() != 5) throw ShapeError("maxpool: expected rank-5 input, got " + x.shape().str());
  const std::int64_t ext[3] = {x.extent(2), x.extent(3), x.extent(4)};
  std::int64_t out_ext[3];
  for (int i = 0; i < 3; ++i) {
    if (kernel[static_cast<std::size_t>(i)] < 1 || stride[static_cast<std::size_t>(i)] < 1)
      throw PoolGeometryError("maxpool: kernel and stride must be >= 1");
    const std::int64_t k = kernel[static_cast<std::size_t>(i)], s = stride[static_cast<std::size_t>(i)];
    if (k > ext[i] || (ext[i] - k) % s != 0)
      throw PoolGeometryError("maxpool: window " + std::to_string(k) + "/" + std::to_string(s) +
                              " does not tile extent " + std::to_string(ext[i]));
    out_ext[i] = (ext[i] - k) / s + 1;
  }
  const std::int64_t n = x.extent(0), c = x.extent(1);
  const std::int64_t t = ext[0], h = ext[1], w = ext[2];
  Tensor<T> out(Shape{n, c, out_ext[0], out_ext[1], out_ext[2]});
  MaxPoolAux aux{x.shape(), out.shape(), kernel, stride, {}};
  aux.argmax.resize(static_cast<std::size_t>(out.numel()));
  std::int64_t oi = 0;
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* slice = x.data() + (nb * c + ch) * t * h * w;
      for (std::int64_t to = 0; to < out_ext[0]; ++to)
        for (std::int64_t ho = 0; ho < out_ext[1]; ++ho)
          for (std::int64_t wo = 0; wo < out_ext[2]; ++wo, ++oi) {
            T best{};
            std::int32_t best_idx = -1;
            for (std::int64_t dt = 0; dt < kernel[0]; ++dt)
              for (std::int64_t dh = 0; dh < kernel[1]; ++dh)
                for (std::int64_t dw = 0; dw < kernel[2]; ++dw) {
                  const std::int64_t idx = ((to * stride[0] + dt) * h + ho * stride[1] + dh) * w +
                                           wo * stride[2] + dw;
                  const T v = slice[idx];
                  if (best_idx < 0 || v > best) {  // ties keep the lowest flat index
                    best = v;
                    best_idx = static_cast<std::int32_t>(idx);
                  }
                }
            out[oi] = best;
            aux.argmax[static_cast<std::size_t>(oi)] = best_idx;
          }
    }
  return {std::move(out), std::move(aux)};
}

template <typename T>
Tensor<T> maxpool_backward(const MaxPoolAux& aux, const Tensor<T>& d_out) {
  if (d_out.shape() != aux.out_shape)
    throw ShapeError("maxpool_backward: gradient shape " + d_out.shape().str() +
                     " does not match pooled output " + aux.out_shape.str());
  Tensor<T> dx(aux.in_shape);
  const std::int64_t n = aux.in_shape[0], c = aux.in_shape[1];
  const std::int64_t slice = aux.in_shape[2] * aux.in_shape[3] * aux.in_shape[4];
  const std::int64_t per_slice = d_out.numel() / (n * c);
  std::int64_t oi = 0;
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* dst = dx.data() + (nb * c + ch) * slice;
      for (std::int64_t i = 0; i < per_slice; ++i, ++oi) {
        const std::int32_t idx = aux.argmax[static_cast<std::size_t>(oi)];
        if (idx < 0 || idx >= slice)
          throw CorruptedStateError("maxpool_backward: argmax index out of range");
        dst[idx] += d_out[oi];
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over all non-channel axes.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;               // (c)
  Tensor<T> running_mean, running_var; // (c)
  T momentum = T(0.1);
  T epsilon = T(1e-5);
};

template <typename T>
struct BNCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;   // per channel
  Mode mode = Mode::kTrain;
};

namespace detail {

template <typename T>
void bn_extents(const Tensor<T>& x, std::int64_t& n, std::int64_t& c, std::int64_t& inner) {
  if (x.rank() < 2) throw ShapeError("batchnorm: input rank must be >= 2");
  n = x.extent(0);
  c = x.extent(1);
  inner = 1;
  for (int ax = 2; ax < x.rank(); ++ax) inner *= x.extent(ax);
}

}  // namespace detail

/// Train mode normalizes with batch statistics (population variance) and
/// updates running stats as (1-m)*old + m*batch; eval mode uses running stats.
template <typename T>
std::pair<Tensor<T>, BNCache<T>> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& s,
                                                   Mode mode) {
  std::int64_t n, c, inner;
  detail::bn_extents(x, n, c, inner);
  if (s.gamma.numel() != c)
    throw ShapeError("batchnorm: state has " + std::to_string(s.gamma.numel()) +
                     " channels, input has " + std::to_string(c));
  const std::int64_t count = n * inner;
  if (mode == Mode::kTrain && count < 2)
    throw DegenerateBatchError("batchnorm: train mode needs >= 2 values per channel");

  BNCache<T> cache;
  cache.mode = mode;
  cache.xhat = Tensor<T>(x.shape());
  cache.inv_std.resize(static_cast<std::size_t>(c));
  Tensor<T> out(x.shape());

  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t nb = 0; nb < n; ++nb) {
        const T* p = x.data() + (nb * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) {
          sum += static_cast<double>(p[i]);
          sq += static_cast<double>(p[i]) * static_cast<double>(p[i]);
        }
      }
      mean = sum / static_cast<double>(count);
      var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
      s.running_mean[ch] = (T(1) - s.momentum) * s.running_mean[ch] + s.momentum * static_cast<T>(mean);
      s.running_var[ch] = (T(1) - s.momentum) * s.running_var[ch] + s.momentum * static_cast<T>(var);
    } else {
      mean = static_cast<double>(s.running_mean[ch]);
      var = static_cast<double>(s.running_var[ch]);
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(s.epsilon)));
    cache.inv_std[static_cast<std::size_t>(ch)] = istd;
    const T m = static_cast<T>(mean), g = s.gamma[ch], b = s.beta[ch];
    for (std::int64_t nb = 0; nb < n; ++nb) {
      const T* p = x.data() + (nb * c + ch) * inner;
      T* ph = cache.xhat.data() + (nb * c + ch) * inner;
      T* po = out.data() + (nb * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        ph[i] = (p[i] - m) * istd;
        po[i] = g * ph[i] + b;
      }
    }
  }
  return {std::move(out), std::move(cache)};
}

template <typename T>
struct BNGrad {
  Tensor<T> d_input, d_gamma, d_beta;
};

template <typename T>
BNGrad<T> batchnorm_backward(const BNCache<T>& cache, const BatchNormState<T>& s,
                             const Tensor<T>& d_out) {
  if (d_out.shape() != cache.xhat.shape())
    throw ShapeError("batchnorm_backward: gradient shape mismatch");
  std::int64_t n, c, inner;
  detail::bn_extents(d_out, n, c, inner);
  BNGrad<T> grad{Tensor<T>(d_out.shape()), Tensor<T>(s.gamma.shape()), Tensor<T>(s.beta.shape())};
  const std::int64_t count = n * inner;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::int64_t nb = 0; nb < n; ++nb) {
      const T* pd = d_out.data() + (nb * c + ch) * inner;
      const T* ph = cache.xhat.data() + (nb * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        sum_d += static_cast<double>(pd[i]);
        sum_dx += static_cast<double>(pd[i]) * static_cast<double>(ph[i]);
      }
    }
    grad.d_gamma[ch] = static_cast<T>(sum_dx);
    grad.d_beta[ch] = static_cast<T>(sum_d);
    const T istd = cache.inv_std[static_cast<std::size_t>(ch)];
    if (cache.mode == Mode::kTrain) {
      const double coef = static_cast<double>(s.gamma[ch]) * static_cast<double>(istd) /
                          static_cast<double>(count);
      for (std::int64_t nb = 0; nb < n; ++nb) {
        const T* pd = d_out.data() + (nb * c + ch) * inner;
        const T* ph = cache.xhat.data() + (nb * c + ch) * inner;
        T* pg = grad.d_input.data() + (nb * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i)
          pg[i] = static_cast<T>(coef * (static_cast<double>(count) * static_cast<double>(pd[i]) -
                                         sum_d - static_cast<double>(ph[i]) * sum_dx));
      }
    } else {
      const T k = s.gamma[ch] * istd;
      for (std::int64_t nb = 0; nb < n; ++nb) {
        const T* pd = d_out.data() + (nb * c + ch) * inner;
        T* pg = grad.d_input.data() + (nb * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) pg[i] = pd[i] * k;
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// ReLU. The gradient at exactly 0 is 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& d_out) {
  if (x.shape() != d_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? d_out[i] : T(0);
  return dx;
}

/// ReLU backward where the ReLU input was a batch-norm output; the gate is
/// recomputed from the cached xhat instead of a stored activation.
template <typename T>
Tensor<T> relu_backward_bn(const BNCache<T>& cache, const BatchNormState<T>& s,
                           const Tensor<T>& d_out) {
  if (d_out.shape() != cache.xhat.shape()) throw ShapeError("relu_backward_bn: shape mismatch");
  std::int64_t n, c, inner;
  detail::bn_extents(d_out, n, c, inner);
  Tensor<T> dx(d_out.shape());
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T g = s.gamma[ch], b = s.beta[ch];
      const T* ph = cache.xhat.data() + (nb * c + ch) * inner;
      const T* pd = d_out.data() + (nb * c + ch) * inner;
      T* pg = dx.data() + (nb * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) pg[i] = (g * ph[i] + b) > T(0) ? pd[i] : T(0);
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Spatial softmax (Eq. 3): normalizes each (sample, temporal slice) over its
// h*w positions; the temporal axis is never mixed.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> spatial_softmax(const Tensor<T>& a) {
  if (a.rank() != 5 || a.extent(1) != 1)
    throw ShapeError("spatial_softmax: expected shape (n,1,t,h,w), got " + a.shape().str());
  const std::int64_t n = a.extent(0), t = a.extent(2), hw = a.extent(3) * a.extent(4);
  Tensor<T> out(a.shape());
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ts = 0; ts < t; ++ts) {
      const T* src = a.data() + (nb * t + ts) * hw;
      T* dst = out.data() + (nb * t + ts) * hw;
      T mx = src[0];
      for (std::int64_t i = 0; i < hw; ++i) {
        if (!std::isfinite(static_cast<double>(src[i])))
          throw InvalidValueError("spatial_softmax: non-finite attention value");
        mx = std::max(mx, src[i]);
      }
      T sum = T(0);
      for (std::int64_t i = 0; i < hw; ++i) {
        dst[i] = std::exp(src[i] - mx);
        sum += dst[i];
      }
      for (std::int64_t i = 0; i < hw; ++i) dst[i] /= sum;
    }
  return out;
}

template <typename T>
Tensor<T> spatial_softmax_backward(const Tensor<T>& ahat, const Tensor<T>& d_out) {
  if (ahat.shape() != d_out.shape()) throw ShapeError("spatial_softmax_backward: shape mismatch");
  const std::int64_t n = ahat.extent(0), t = ahat.extent(2), hw = ahat.extent(3) * ahat.extent(4);
  Tensor<T> dx(ahat.shape());
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ts = 0; ts < t; ++ts) {
      const T* pa = ahat.data() + (nb * t + ts) * hw;
      const T* pd = d_out.data() + (nb * t + ts) * hw;
      T* pg = dx.data() + (nb * t + ts) * hw;
      T dot = T(0);
      for (std::int64_t i = 0; i < hw; ++i) dot += pa[i] * pd[i];
      for (std::int64_t i = 0; i < hw; ++i) pg[i] = pa[i] * (pd[i] - dot);
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Global average pooling over (t, h, w).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 5) throw ShapeError("global_avg_pool: expected rank-5 input");
  const std::int64_t n = x.extent(0), c = x.extent(1);
  const std::int64_t inner = x.extent(2) * x.extent(3) * x.extent(4);
  Tensor<T> out(Shape{n, c});
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (nb * c + ch) * inner;
      double sum = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) sum += static_cast<double>(p[i]);
      out[nb * c + ch] = static_cast<T>(sum / static_cast<double>(inner));
    }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& in_shape, const Tensor<T>& d_out) {
  if (in_shape.rank() != 5 || d_out.rank() != 2 || d_out.extent(0) != in_shape[0] ||
      d_out.extent(1) != in_shape[1])
    throw ShapeError("global_avg_pool_backward: shape mismatch");
  const std::int64_t n = in_shape[0], c = in_shape[1];
  const std::int64_t inner = in_shape[2] * in_shape[3] * in_shape[4];
  Tensor<T> dx(in_shape);
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T v = d_out[nb * c + ch] / static_cast<T>(inner);
      T* p = dx.data() + (nb * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] = v;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors are scaled at train time so eval is identity.
// ---------------------------------------------------------------------------

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate); empty when the pass was an identity
  bool identity = true;
};

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::mt19937& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw InvalidConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  DropoutResult<T> res;
  if (mode == Mode::kEval || rate == 0.0) {
    res.output = x;
    return res;
  }
  res.identity = false;
  res.mask = Tensor<T>(x.shape());
  res.output = Tensor<T>(x.shape());
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T m = dist(rng) < rate ? T(0) : scale;
    res.mask[i] = m;
    res.output[i] = x[i] * m;
  }
  return res;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutResult<T>& res, const Tensor<T>& d_out) {
  if (res.identity) return d_out;
  return elementwise_mul(d_out, res.mask);
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, mean over the batch.
// ---------------------------------------------------------------------------

template <typename T>
struct CrossEntropyResult {
  T loss = T(0);
  Tensor<T> d_logits;
};

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits,
                                            const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be (n,K)");
  const std::int64_t n = logits.extent(0), k = logits.extent(1);
  if (k < 2) throw InvalidConfigError("softmax_cross_entropy: need K >= 2 classes");
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  CrossEntropyResult<T> res;
  res.d_logits = Tensor<T>(logits.shape());
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k)
      throw InvalidLabelError("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside [0," + std::to_string(k) + ")");
    const T* row = logits.data() + r * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    loss += -(static_cast<double>(row[y] - mx) - std::log(sum));
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(row[j] - mx)) / sum;
      res.d_logits[r * k + j] =
          static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  res.loss = static_cast<T>(loss / static_cast<double>(n));
  return res;
}

// ---------------------------------------------------------------------------
// Fully connected layer; the fusion network's 1x1 convolutions act on pooled
// (n, c) features, which makes them plain linear maps.
// ---------------------------------------------------------------------------

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out)
};

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const LinearParams<T>& p) {
  if (x.rank() != 2 || p.weight.rank() != 2 || x.extent(1) != p.weight.extent(1))
    throw ShapeError("linear: input " + x.shape().str() + " incompatible with weight " +
                     p.weight.shape().str());
  const std::int64_t n = x.extent(0), in = x.extent(1), out = p.weight.extent(0);
  Tensor<T> y(Shape{n, out});
  Eigen::Map<const MatRM<T>> xm(x.data(), n, in);
  Eigen::Map<const MatRM<T>> wm(p.weight.data(), out, in);
  Eigen::Map<MatRM<T>> ym(y.data(), n, out);
  ym.noalias() = xm * wm.transpose();
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t o = 0; o < out; ++o) y[r * out + o] += p.bias[o];
  return y;
}

template <typename T>
struct LinearGrad {
  Tensor<T> d_input, d_weight, d_bias;
};

template <typename T>
LinearGrad<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p,
                              const Tensor<T>& d_out) {
  const std::int64_t n = x.extent(0), in = x.extent(1), out = p.weight.extent(0);
  if (d_out.rank() != 2 || d_out.extent(0) != n || d_out.extent(1) != out)
    throw ShapeError("linear_backward: gradient shape mismatch");
  LinearGrad<T> g{Tensor<T>(x.shape()), Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  Eigen::Map<const MatRM<T>> xm(x.data(), n, in);
  Eigen::Map<const MatRM<T>> wm(p.weight.data(), out, in);
  Eigen::Map<const MatRM<T>> dym(d_out.data(), n, out);
  Eigen::Map<MatRM<T>> dxm(g.d_input.data(), n, in);
  Eigen::Map<MatRM<T>> dwm(g.d_weight.data(), out, in);
  dwm.noalias() = dym.transpose() * xm;
  dxm.noalias() = dym * wm;
  for (std::int64_t o = 0; o < out; ++o) g.d_bias[o] = dym.col(o).sum();
  return g;
}

}  // namespace caer
