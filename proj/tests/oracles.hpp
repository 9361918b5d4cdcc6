// Independent reference implementations used as test oracles. Everything here
// is deliberately naive and kept apart from the library's implementation
// paths.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "caer/layers.hpp"
#include "caer/tensor.hpp"

namespace oracle {

/// Direct nested-loop cross-correlation with zero padding, stride 1.
template <typename T>
caer::Tensor<T> naive_conv(const caer::Tensor<T>& x, const caer::ConvParams<T>& p) {
  const bool rank5 = x.rank() == 5;
  const std::int64_t n = x.extent(0), c = x.extent(1);
  const std::int64_t t = rank5 ? x.extent(2) : 1;
  const std::int64_t h = x.extent(rank5 ? 3 : 2), w = x.extent(rank5 ? 4 : 3);
  const std::int64_t oc = p.weight.extent(0);
  const std::int64_t kt = rank5 ? p.weight.extent(2) : 1;
  const std::int64_t kh = p.weight.extent(rank5 ? 3 : 2), kw = p.weight.extent(rank5 ? 4 : 3);
  const std::int64_t pt = rank5 ? p.pad[0] : 0, ph = p.pad[1], pw = p.pad[2];
  const std::int64_t ot = t + 2 * pt - kt + 1;
  const std::int64_t oh = h + 2 * ph - kh + 1;
  const std::int64_t ow = w + 2 * pw - kw + 1;
  caer::Tensor<T> out(rank5 ? caer::Shape{n, oc, ot, oh, ow} : caer::Shape{n, oc, oh, ow});
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t o = 0; o < oc; ++o)
      for (std::int64_t to = 0; to < ot; ++to)
        for (std::int64_t ho = 0; ho < oh; ++ho)
          for (std::int64_t wo = 0; wo < ow; ++wo) {
            double acc = static_cast<double>(p.bias[o]);
            for (std::int64_t ic = 0; ic < c; ++ic)
              for (std::int64_t dt = 0; dt < kt; ++dt)
                for (std::int64_t dh = 0; dh < kh; ++dh)
                  for (std::int64_t dw = 0; dw < kw; ++dw) {
                    const std::int64_t ti = to + dt - pt;
                    const std::int64_t hi = ho + dh - ph;
                    const std::int64_t wi = wo + dw - pw;
                    if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                    const T xv = x[((nb * c + ic) * t + ti) * h * w + hi * w + wi];
                    const T wv = p.weight[((o * c + ic) * kt + dt) * kh * kw + dh * kw + dw];
                    acc += static_cast<double>(xv) * static_cast<double>(wv);
                  }
            out[((nb * oc + o) * ot + to) * oh * ow + ho * ow + wo] = static_cast<T>(acc);
          }
  return out;
}

/// Central finite differences of a scalar function of `x`.
template <typename LossFn>
caer::Tensor<double> fd_gradient(caer::Tensor<double>& x, LossFn loss, double h = 1e-5) {
  caer::Tensor<double> g(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double lp = loss();
    x[i] = saved - h;
    const double lm = loss();
    x[i] = saved;
    g[i] = (lp - lm) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(const caer::Tensor<double>& a, const caer::Tensor<double>& b,
                          double floor = 1e-4) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

template <typename T>
double max_abs_diff(const caer::Tensor<T>& a, const caer::Tensor<T>& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return worst;
}

/// Per-channel batch moments (population variance), straight double loops.
template <typename T>
std::pair<double, double> channel_moments(const caer::Tensor<T>& x, std::int64_t channel) {
  const std::int64_t n = x.extent(0), c = x.extent(1);
  std::int64_t inner = 1;
  for (int ax = 2; ax < x.rank(); ++ax) inner *= x.extent(ax);
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t i = 0; i < inner; ++i, ++count)
      sum += static_cast<double>(x[(nb * c + channel) * inner + i]);
  const double mean = sum / static_cast<double>(count);
  double var = 0.0;
  for (std::int64_t nb = 0; nb < n; ++nb)
    for (std::int64_t i = 0; i < inner; ++i) {
      const double d = static_cast<double>(x[(nb * c + channel) * inner + i]) - mean;
      var += d * d;
    }
  return {mean, var / static_cast<double>(count)};
}

/// Keep/drop/label rule for three annotator votes, written from the rules
/// directly: keep iff two votes agree and the mean confidence is >= 0.5.
struct AnnotationOracle {
  bool keep = false;
  int label = -1;
};

inline AnnotationOracle annotation_oracle(const std::array<int, 3>& cats,
                                          const std::array<double, 3>& confs) {
  AnnotationOracle out;
  int majority = -1;
  if (cats[0] == cats[1] || cats[0] == cats[2])
    majority = cats[0];
  else if (cats[1] == cats[2])
    majority = cats[1];
  const double mean = (confs[0] + confs[1] + confs[2]) / 3.0;
  out.label = majority;
  out.keep = majority >= 0 && mean >= 0.5;
  return out;
}

}  // namespace oracle
