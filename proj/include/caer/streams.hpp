#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "caer/layers.hpp"
#include "caer/tensor.hpp"

namespace caer {

enum class Variant : std::uint8_t { kStatic = 0, kDynamic = 1 };

/// Kernel and pooling geometry shared by both encoding streams. The static
/// model is the dynamic code run with a temporal extent of 1 and kt = 1.
struct StreamGeometry {
  std::array<std::int64_t, 3> conv_kernel;             // (kt, kh, kw)
  std::array<std::int64_t, 3> conv_pad;                // (pt, ph, pw)
  std::array<std::array<std::int64_t, 3>, 4> pool;     // kernel == stride
};

inline StreamGeometry stream_geometry(Variant v) {
  if (v == Variant::kDynamic)
    return {{3, 3, 3}, {1, 1, 1}, {{{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}}}};
  return {{1, 3, 3}, {0, 1, 1}, {{{1, 2, 2}, {1, 2, 2}, {1, 2, 2}, {1, 2, 2}}}};
}

/// Shape plan for one encoding stream.
struct StreamConfig {
  Variant variant = Variant::kDynamic;
  std::array<std::int64_t, 5> channels{32, 64, 128, 256, 256};
  Shape5 input;  // (n free; c = 3)

  StreamGeometry geometry() const { return stream_geometry(variant); }
};

template <typename T>
struct ConvBlockParams {
  ConvParams<T> conv;
  BatchNormState<T> bn;
};

template <typename T>
struct EncoderParams {
  std::array<ConvBlockParams<T>, 5> blocks;
};

/// Attention inference module: conv(C->hidden)+BN+ReLU, conv(hidden->1).
/// The second conv has no activation so the raw map A is unbounded.
template <typename T>
struct AttentionParams {
  ConvParams<T> conv1;
  BatchNormState<T> bn1;
  ConvParams<T> conv2;
};

/// Raw attention A and its per-slice spatial-softmax normalization.
template <typename T>
struct AttentionMap {
  Tensor<T> raw;         // (n, 1, t, H, W); empty when attention is disabled
  Tensor<T> normalized;  // (n, 1, t, H, W)
};

template <typename T>
struct EncoderActs {
  std::vector<Tensor<T>> block_in;  // conv input per block (block_in[0] = clip)
  std::vector<BNCache<T>> bn;
  std::vector<MaxPoolAux> pool;
  Tensor<T> conv5_out;              // relu output of block 5
};

template <typename T>
EncoderActs<T> encoder_forward(const Tensor<T>& input, EncoderParams<T>& p,
                               const StreamGeometry& g, Mode mode) {
  EncoderActs<T> acts;
  acts.block_in.reserve(5);
  Tensor<T> x = input;
  for (int i = 0; i < 5; ++i) {
    acts.block_in.push_back(std::move(x));
    Tensor<T> y = conv_forward(acts.block_in.back(), p.blocks[static_cast<std::size_t>(i)].conv);
    auto [ybn, cache] = batchnorm_forward(y, p.blocks[static_cast<std::size_t>(i)].bn, mode);
    y = Tensor<T>();
    Tensor<T> yr = relu(ybn);
    ybn = Tensor<T>();
    acts.bn.push_back(std::move(cache));
    if (i < 4) {
      auto [pooled, aux] = maxpool_forward(yr, g.pool[static_cast<std::size_t>(i)],
                                           g.pool[static_cast<std::size_t>(i)]);
      acts.pool.push_back(std::move(aux));
      x = std::move(pooled);
    } else {
      acts.conv5_out = std::move(yr);
    }
  }
  return acts;
}

template <typename T>
struct BlockGrad {
  Tensor<T> d_weight, d_bias, d_gamma, d_beta;
};

template <typename T>
struct EncoderGrads {
  std::array<BlockGrad<T>, 5> blocks;
  Tensor<T> d_input;
};

/// Exact gradients through the five conv/BN/ReLU(/pool) blocks given the
/// gradient at the block-5 ReLU output.
template <typename T>
EncoderGrads<T> encoder_backward(const EncoderActs<T>& acts, const EncoderParams<T>& p,
                                 Tensor<T> d) {
  if (acts.block_in.size() != 5 || acts.bn.size() != 5 || acts.pool.size() != 4)
    throw CorruptedStateError("encoder_backward: activations do not match a forward pass");
  EncoderGrads<T> g;
  for (int i = 4; i >= 0; --i) {
    const auto& blk = p.blocks[static_cast<std::size_t>(i)];
    d = relu_backward_bn(acts.bn[static_cast<std::size_t>(i)], blk.bn, d);
    auto bn_grad = batchnorm_backward(acts.bn[static_cast<std::size_t>(i)], blk.bn, d);
    auto conv_grad = conv_backward(acts.block_in[static_cast<std::size_t>(i)], blk.conv,
                                   bn_grad.d_input);
    g.blocks[static_cast<std::size_t>(i)] =
        BlockGrad<T>{std::move(conv_grad.d_weight), std::move(conv_grad.d_bias),
                     std::move(bn_grad.d_gamma), std::move(bn_grad.d_beta)};
    d = std::move(conv_grad.d_input);
    if (i > 0) d = maxpool_backward(acts.pool[static_cast<std::size_t>(i - 1)], d);
  }
  g.d_input = std::move(d);
  return g;
}

// ---------------------------------------------------------------------------
// Face encoding stream: encoder + global average pool -> X_F of width 256.
// ---------------------------------------------------------------------------

template <typename T>
struct FaceActs {
  EncoderActs<T> enc;
  Tensor<T> feature;  // (n, C)
};

template <typename T>
FaceActs<T> face_stream_forward(const Tensor<T>& v_f, EncoderParams<T>& p,
                                const StreamGeometry& g, Mode mode) {
  FaceActs<T> acts;
  acts.enc = encoder_forward(v_f, p, g, mode);
  acts.feature = global_avg_pool(acts.enc.conv5_out);
  return acts;
}

template <typename T>
EncoderGrads<T> face_stream_backward(const FaceActs<T>& acts, const EncoderParams<T>& p,
                                     const Tensor<T>& d_feature) {
  Tensor<T> d = global_avg_pool_backward(acts.enc.conv5_out.shape(), d_feature);
  return encoder_backward(acts.enc, p, std::move(d));
}

// ---------------------------------------------------------------------------
// Context encoding stream: encoder -> X_C, attention inference -> A / A_hat,
// attention-boosted feature X_bar = A_hat (.) X_C, pooled to width 256.
// ---------------------------------------------------------------------------

template <typename T>
struct ContextActs {
  EncoderActs<T> enc;       // enc.conv5_out is X_C
  bool attention = true;
  BNCache<T> attn_bn;
  Tensor<T> attn_relu;      // hidden attention feature after BN+ReLU
  Tensor<T> raw_a;          // (n, 1, t, H, W)
  Tensor<T> ahat;           // normalized attention
  Tensor<T> feature;        // (n, C)
};

/// With `use_attention` false, A_hat is replaced by the uniform map 1/(H*W)
/// (the Table-3 "without cA" variant) and the attention convs are skipped.
///
/// The pooled feature is the temporal mean of the attention-weighted spatial
/// sum of X_C (the attended expectation over positions), so a uniform map
/// degrades exactly to plain average pooling and both streams' features share
/// one scale.
template <typename T>
ContextActs<T> context_stream_forward(const Tensor<T>& v_c, EncoderParams<T>& enc_p,
                                      AttentionParams<T>* attn_p, const StreamGeometry& g,
                                      Mode mode, bool use_attention) {
  ContextActs<T> acts;
  acts.attention = use_attention;
  acts.enc = encoder_forward(v_c, enc_p, g, mode);
  const Tensor<T>& xc = acts.enc.conv5_out;
  const Shape map_shape{xc.extent(0), 1, xc.extent(2), xc.extent(3), xc.extent(4)};
  if (use_attention) {
    if (attn_p == nullptr)
      throw InvalidConfigError("context stream: attention enabled but no attention parameters");
    Tensor<T> y1 = conv_forward(xc, attn_p->conv1);
    auto [y1bn, cache] = batchnorm_forward(y1, attn_p->bn1, mode);
    y1 = Tensor<T>();
    acts.attn_bn = std::move(cache);
    acts.attn_relu = relu(y1bn);
    acts.raw_a = conv_forward(acts.attn_relu, attn_p->conv2);
    acts.ahat = spatial_softmax(acts.raw_a);
  } else {
    acts.ahat = Tensor<T>::full(map_shape, T(1) / static_cast<T>(map_shape[3] * map_shape[4]));
  }
  Tensor<T> xbar = elementwise_mul(xc, acts.ahat);
  acts.feature = global_avg_pool(xbar);
  const T spatial = static_cast<T>(map_shape[3] * map_shape[4]);
  for (std::int64_t i = 0; i < acts.feature.numel(); ++i) acts.feature[i] *= spatial;
  return acts;
}

template <typename T>
struct ContextGrads {
  EncoderGrads<T> enc;
  // Attention module gradients; empty tensors when attention was disabled.
  Tensor<T> d_attn_w1, d_attn_b1, d_attn_gamma, d_attn_beta, d_attn_w2, d_attn_b2;
};

template <typename T>
ContextGrads<T> context_stream_backward(const ContextActs<T>& acts, const EncoderParams<T>& enc_p,
                                        const AttentionParams<T>* attn_p,
                                        const Tensor<T>& d_feature) {
  const Tensor<T>& xc = acts.enc.conv5_out;
  Tensor<T> d_scaled = d_feature;
  const T spatial = static_cast<T>(xc.extent(3) * xc.extent(4));
  for (std::int64_t i = 0; i < d_scaled.numel(); ++i) d_scaled[i] *= spatial;
  Tensor<T> d_xbar = global_avg_pool_backward(xc.shape(), d_scaled);
  // X_bar = A_hat (.) X_C with A_hat broadcast over channels.
  Tensor<T> d_xc = elementwise_mul(d_xbar, acts.ahat);
  ContextGrads<T> g;
  if (acts.attention) {
    if (attn_p == nullptr)
      throw CorruptedStateError("context_stream_backward: missing attention parameters");
    // d A_hat = sum over channels of d_xbar (.) X_C
    Tensor<T> d_ahat(acts.ahat.shape());
    const std::int64_t n = xc.extent(0), c = xc.extent(1);
    const std::int64_t inner = xc.extent(2) * xc.extent(3) * xc.extent(4);
    for (std::int64_t nb = 0; nb < n; ++nb) {
      T* da = d_ahat.data() + nb * inner;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* pdx = d_xbar.data() + (nb * c + ch) * inner;
        const T* pxc = xc.data() + (nb * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) da[i] += pdx[i] * pxc[i];
      }
    }
    Tensor<T> d_raw = spatial_softmax_backward(acts.ahat, d_ahat);
    auto cg2 = conv_backward(acts.attn_relu, attn_p->conv2, d_raw);
    g.d_attn_w2 = std::move(cg2.d_weight);
    g.d_attn_b2 = std::move(cg2.d_bias);
    Tensor<T> d_hidden = relu_backward_bn(acts.attn_bn, attn_p->bn1, cg2.d_input);
    auto bn_grad = batchnorm_backward(acts.attn_bn, attn_p->bn1, d_hidden);
    g.d_attn_gamma = std::move(bn_grad.d_gamma);
    g.d_attn_beta = std::move(bn_grad.d_beta);
    auto cg1 = conv_backward(xc, attn_p->conv1, bn_grad.d_input);
    g.d_attn_w1 = std::move(cg1.d_weight);
    g.d_attn_b1 = std::move(cg1.d_bias);
    add_inplace(d_xc, cg1.d_input);
  }
  g.enc = encoder_backward(acts.enc, enc_p, std::move(d_xc));
  return g;
}

}  // namespace caer
