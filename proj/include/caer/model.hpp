#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "caer/streams.hpp"

namespace caer {

/// Table-3 ablation switches: face stream, context stream, context attention
/// (vs uniform), fusion attention (vs fixed 0.5 gates).
struct AblationFlags {
  bool face = true;
  bool context = true;
  bool context_attention = true;
  bool fusion_attention = true;

  bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
  Variant variant = Variant::kDynamic;
  std::int64_t K = 7;
  std::array<std::int64_t, 5> channels{32, 64, 128, 256, 256};
  std::int64_t attn_hidden = 128;
  std::int64_t gate_hidden = 128;
  std::int64_t cls_hidden = 128;
  std::int64_t temporal = 16;   // frames per clip fed to the network; 1 for static
  std::int64_t face_hw = 96;    // face input edge length
  std::int64_t ctx_h = 112, ctx_w = 112;
  double dropout_rate = 0.5;
  AblationFlags flags;

  static ModelConfig production(Variant v, std::int64_t k = 7) {
    ModelConfig c;
    c.variant = v;
    c.K = k;
    if (v == Variant::kDynamic) {
      c.temporal = 16;
      c.face_hw = 96;
      c.ctx_h = c.ctx_w = 112;
    } else {
      c.temporal = 1;
      c.face_hw = 224;
      c.ctx_h = c.ctx_w = 224;
    }
    return c;
  }

  /// Shrunken architecture used by the finite-difference harness; topology
  /// matches production, only widths and extents are reduced.
  static ModelConfig tiny(Variant v, std::int64_t k = 3) {
    ModelConfig c;
    c.variant = v;
    c.K = k;
    c.channels = {2, 2, 2, 2, 2};
    c.attn_hidden = 2;
    c.gate_hidden = 2;
    c.cls_hidden = 4;
    c.temporal = v == Variant::kDynamic ? 8 : 1;
    c.face_hw = 32;
    c.ctx_h = c.ctx_w = 32;
    c.dropout_rate = 0.0;
    return c;
  }

  std::int64_t feature_dim() const { return channels[4]; }
  std::int64_t classifier_in() const {
    return flags.face && flags.context ? 2 * feature_dim() : feature_dim();
  }
  Shape face_input(std::int64_t n) const { return Shape{n, 3, temporal, face_hw, face_hw}; }
  Shape context_input(std::int64_t n) const { return Shape{n, 3, temporal, ctx_h, ctx_w}; }

  void validate() const {
    if (!flags.face && !flags.context)
      throw InvalidConfigError("model config: at least one stream must be enabled");
    if (K < 2) throw InvalidConfigError("model config: K must be >= 2");
    if ((variant == Variant::kStatic) != (temporal == 1))
      throw InvalidConfigError("model config: temporal extent must be 1 exactly for the static model");
    for (auto c : channels)
      if (c < 1) throw InvalidConfigError("model config: channel counts must be >= 1");
    const std::int64_t spatial_div = 16;  // four halving pools
    if (face_hw % spatial_div || ctx_h % spatial_div || ctx_w % spatial_div)
      throw InvalidConfigError("model config: input extents must divide by 16");
    if (variant == Variant::kDynamic && temporal % 8)
      throw InvalidConfigError("model config: dynamic temporal extent must divide by 8");
  }
};

template <typename T>
struct GateParams {
  LinearParams<T> fc1, fc2;  // C -> hidden -> 1, ReLU between
};

template <typename T>
struct FusionParams {
  GateParams<T> face_gate, context_gate;  // W_D, W_E; absent without fusion attention
  LinearParams<T> cls1, cls2;             // W_G: classifier_in -> hidden -> K
};

/// Every learnable tensor plus batch-norm running statistics. The same
/// structure doubles as the gradient carrier (running-stat slots stay zero).
template <typename T>
struct ModelParams {
  ModelConfig cfg;
  EncoderParams<T> face;
  EncoderParams<T> context;
  AttentionParams<T> attention;
  FusionParams<T> fusion;
  std::int64_t step = 0;
};

namespace detail {

inline std::uint32_t fnv1a(const std::string& s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 16777619u;
  }
  return h;
}

template <typename T>
ConvParams<T> make_conv(std::int64_t oc, std::int64_t ic, std::array<std::int64_t, 3> k,
                        std::array<std::int64_t, 3> pad) {
  ConvParams<T> p;
  p.weight = Tensor<T>(Shape{oc, ic, k[0], k[1], k[2]});
  p.bias = Tensor<T>(Shape{oc});
  p.pad = pad;
  return p;
}

template <typename T>
BatchNormState<T> make_bn(std::int64_t c) {
  BatchNormState<T> s;
  s.gamma = Tensor<T>(Shape{c});
  s.beta = Tensor<T>(Shape{c});
  s.running_mean = Tensor<T>(Shape{c});
  s.running_var = Tensor<T>(Shape{c});
  return s;
}

template <typename T>
LinearParams<T> make_linear(std::int64_t out, std::int64_t in) {
  return LinearParams<T>{Tensor<T>(Shape{out, in}), Tensor<T>(Shape{out})};
}

}  // namespace detail

/// Architecture with all tensors allocated and zeroed (gradient carrier).
template <typename T>
ModelParams<T> make_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> m;
  m.cfg = cfg;
  const auto g = stream_geometry(cfg.variant);
  auto build_encoder = [&](EncoderParams<T>& e) {
    std::int64_t in = 3;
    for (int i = 0; i < 5; ++i) {
      const std::int64_t out = cfg.channels[static_cast<std::size_t>(i)];
      e.blocks[static_cast<std::size_t>(i)].conv =
          detail::make_conv<T>(out, in, g.conv_kernel, g.conv_pad);
      e.blocks[static_cast<std::size_t>(i)].bn = detail::make_bn<T>(out);
      in = out;
    }
  };
  if (cfg.flags.face) build_encoder(m.face);
  if (cfg.flags.context) {
    build_encoder(m.context);
    if (cfg.flags.context_attention) {
      m.attention.conv1 =
          detail::make_conv<T>(cfg.attn_hidden, cfg.feature_dim(), g.conv_kernel, g.conv_pad);
      m.attention.bn1 = detail::make_bn<T>(cfg.attn_hidden);
      m.attention.conv2 = detail::make_conv<T>(1, cfg.attn_hidden, g.conv_kernel, g.conv_pad);
    }
  }
  if (cfg.flags.face && cfg.flags.context && cfg.flags.fusion_attention) {
    m.fusion.face_gate = {detail::make_linear<T>(cfg.gate_hidden, cfg.feature_dim()),
                          detail::make_linear<T>(1, cfg.gate_hidden)};
    m.fusion.context_gate = {detail::make_linear<T>(cfg.gate_hidden, cfg.feature_dim()),
                             detail::make_linear<T>(1, cfg.gate_hidden)};
  }
  m.fusion.cls1 = detail::make_linear<T>(cfg.cls_hidden, cfg.classifier_in());
  m.fusion.cls2 = detail::make_linear<T>(cfg.K, cfg.cls_hidden);
  return m;
}

/// Visits every named parameter tensor in a fixed canonical order.
/// `learnable` is false for batch-norm running statistics.
template <typename MP, typename F>
void for_each_param(MP& m, F f) {
  auto visit_bn = [&](const std::string& prefix, auto& bn) {
    f(prefix + ".gamma", bn.gamma, true);
    f(prefix + ".beta", bn.beta, true);
    f(prefix + ".running_mean", bn.running_mean, false);
    f(prefix + ".running_var", bn.running_var, false);
  };
  auto visit_encoder = [&](const std::string& prefix, auto& e) {
    for (int i = 0; i < 5; ++i) {
      const std::string n = std::to_string(i + 1);
      f(prefix + ".conv" + n + ".weight", e.blocks[static_cast<std::size_t>(i)].conv.weight, true);
      f(prefix + ".conv" + n + ".bias", e.blocks[static_cast<std::size_t>(i)].conv.bias, true);
      visit_bn(prefix + ".bn" + n, e.blocks[static_cast<std::size_t>(i)].bn);
    }
  };
  const auto& flags = m.cfg.flags;
  if (flags.face) visit_encoder("face", m.face);
  if (flags.context) {
    visit_encoder("context", m.context);
    if (flags.context_attention) {
      f("context.attn.conv1.weight", m.attention.conv1.weight, true);
      f("context.attn.conv1.bias", m.attention.conv1.bias, true);
      visit_bn("context.attn.bn1", m.attention.bn1);
      f("context.attn.conv2.weight", m.attention.conv2.weight, true);
      f("context.attn.conv2.bias", m.attention.conv2.bias, true);
    }
  }
  if (flags.face && flags.context && flags.fusion_attention) {
    auto visit_gate = [&](const std::string& prefix, auto& gate) {
      f(prefix + ".fc1.weight", gate.fc1.weight, true);
      f(prefix + ".fc1.bias", gate.fc1.bias, true);
      f(prefix + ".fc2.weight", gate.fc2.weight, true);
      f(prefix + ".fc2.bias", gate.fc2.bias, true);
    };
    visit_gate("fusion.face_gate", m.fusion.face_gate);
    visit_gate("fusion.context_gate", m.fusion.context_gate);
  }
  f("fusion.cls1.weight", m.fusion.cls1.weight, true);
  f("fusion.cls1.bias", m.fusion.cls1.bias, true);
  f("fusion.cls2.weight", m.fusion.cls2.weight, true);
  f("fusion.cls2.bias", m.fusion.cls2.bias, true);
}

/// He-initialized parameters: weights ~ N(0, sqrt(2/fan_in)), biases and
/// beta 0, gamma 1, running stats (0, 1). Each tensor is seeded from
/// (seed, name) so shared tensors match across ablation variants.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint32_t seed) {
  ModelParams<T> m = make_params<T>(cfg);
  for_each_param(m, [&](const std::string& name, Tensor<T>& t, bool) {
    const auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".weight")) {
      std::seed_seq seq{seed, detail::fnv1a(name)};
      std::mt19937 rng(seq);
      const std::int64_t fan_in = t.numel() / t.extent(0);
      fill_normal(t, rng, static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in))));
    } else if (ends_with(".gamma") || ends_with(".running_var")) {
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(1);
    }  // biases, beta, running_mean stay zero
  });
  return m;
}

// ---------------------------------------------------------------------------
// Adaptive fusion (Eq. 5-6).
// ---------------------------------------------------------------------------

template <typename T>
struct FusionWeights {
  std::vector<T> lambda_f, lambda_c;  // per sample; empty for single-stream models
};

template <typename T>
struct GateActs {
  Tensor<T> z1, a1, s;  // pre-ReLU, post-ReLU, scalar score (n, 1)
};

template <typename T>
struct FusionActs {
  Tensor<T> x_f, x_c;  // pooled stream features (n, C); unused streams empty
  GateActs<T> gate_f, gate_c;
  FusionWeights<T> lambdas;
  Tensor<T> xa;        // classifier input
  Tensor<T> z1;        // cls1 pre-activation
  DropoutResult<T> drop;
  Tensor<T> logits;
};

namespace detail {

template <typename T>
GateActs<T> gate_forward(const Tensor<T>& x, const GateParams<T>& p) {
  GateActs<T> a;
  a.z1 = linear_forward(x, p.fc1);
  a.a1 = relu(a.z1);
  a.s = linear_forward(a.a1, p.fc2);
  return a;
}

template <typename T>
Tensor<T> gate_backward(const Tensor<T>& x, const GateActs<T>& a, const GateParams<T>& p,
                        const Tensor<T>& d_s, GateParams<T>& g) {
  auto l2 = linear_backward(a.a1, p.fc2, d_s);
  g.fc2.weight = std::move(l2.d_weight);
  g.fc2.bias = std::move(l2.d_bias);
  Tensor<T> d_a1 = relu_backward(a.z1, l2.d_input);
  auto l1 = linear_backward(x, p.fc1, d_a1);
  g.fc1.weight = std::move(l1.d_weight);
  g.fc1.bias = std::move(l1.d_bias);
  return std::move(l1.d_input);
}

}  // namespace detail

/// Gates each pooled stream feature by a learned scalar, softmax-normalized so
/// lambda_F + lambda_C = 1, concatenates, and classifies. Single-stream
/// variants feed the surviving feature straight to the classifier.
template <typename T>
FusionActs<T> fuse_forward(Tensor<T> x_f, Tensor<T> x_c, const FusionParams<T>& p,
                           const ModelConfig& cfg, Mode mode, std::mt19937& rng) {
  FusionActs<T> acts;
  const auto& flags = cfg.flags;
  if (flags.face && flags.context) {
    if (x_f.rank() != 2 || x_c.rank() != 2 || x_f.shape() != x_c.shape() ||
        x_f.extent(1) != cfg.feature_dim())
      throw ShapeError("fuse: stream features must both be (n," +
                       std::to_string(cfg.feature_dim()) + ")");
    acts.x_f = std::move(x_f);
    acts.x_c = std::move(x_c);
    const std::int64_t n = acts.x_f.extent(0), c = acts.x_f.extent(1);
    acts.lambdas.lambda_f.resize(static_cast<std::size_t>(n));
    acts.lambdas.lambda_c.resize(static_cast<std::size_t>(n));
    if (flags.fusion_attention) {
      acts.gate_f = detail::gate_forward(acts.x_f, p.face_gate);
      acts.gate_c = detail::gate_forward(acts.x_c, p.context_gate);
      for (std::int64_t i = 0; i < n; ++i) {
        const T sf = acts.gate_f.s[i], sc = acts.gate_c.s[i];
        const T mx = std::max(sf, sc);
        const T ef = std::exp(sf - mx), ec = std::exp(sc - mx);
        acts.lambdas.lambda_f[static_cast<std::size_t>(i)] = ef / (ef + ec);
        acts.lambdas.lambda_c[static_cast<std::size_t>(i)] = ec / (ef + ec);
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        acts.lambdas.lambda_f[static_cast<std::size_t>(i)] = T(0.5);
        acts.lambdas.lambda_c[static_cast<std::size_t>(i)] = T(0.5);
      }
    }
    acts.xa = Tensor<T>(Shape{n, 2 * c});
    for (std::int64_t i = 0; i < n; ++i) {
      const T lf = acts.lambdas.lambda_f[static_cast<std::size_t>(i)];
      const T lc = acts.lambdas.lambda_c[static_cast<std::size_t>(i)];
      T* dst = acts.xa.data() + i * 2 * c;
      const T* pf = acts.x_f.data() + i * c;
      const T* pc = acts.x_c.data() + i * c;
      for (std::int64_t j = 0; j < c; ++j) dst[j] = pf[j] * lf;
      for (std::int64_t j = 0; j < c; ++j) dst[c + j] = pc[j] * lc;
    }
  } else {
    acts.xa = flags.face ? std::move(x_f) : std::move(x_c);
    if (acts.xa.rank() != 2 || acts.xa.extent(1) != cfg.feature_dim())
      throw ShapeError("fuse: stream feature must be (n," + std::to_string(cfg.feature_dim()) +
                       ")");
    if (flags.face)
      acts.x_f = acts.xa;
    else
      acts.x_c = acts.xa;
  }
  acts.z1 = linear_forward(acts.xa, p.cls1);
  Tensor<T> a = relu(acts.z1);
  acts.drop = dropout(a, cfg.dropout_rate, mode, rng);
  acts.logits = linear_forward(acts.drop.output, p.cls2);
  return acts;
}

template <typename T>
struct StreamFeatureGrads {
  Tensor<T> d_face, d_context;  // (n, C); empty for disabled streams
};

template <typename T>
StreamFeatureGrads<T> fuse_backward(const FusionActs<T>& acts, const FusionParams<T>& p,
                                    const ModelConfig& cfg, const Tensor<T>& d_logits,
                                    FusionParams<T>& grads) {
  const auto& flags = cfg.flags;
  auto l2 = linear_backward(acts.drop.output, p.cls2, d_logits);
  grads.cls2.weight = std::move(l2.d_weight);
  grads.cls2.bias = std::move(l2.d_bias);
  Tensor<T> d_a = dropout_backward(acts.drop, l2.d_input);
  Tensor<T> d_z1 = relu_backward(acts.z1, d_a);
  auto l1 = linear_backward(acts.xa, p.cls1, d_z1);
  grads.cls1.weight = std::move(l1.d_weight);
  grads.cls1.bias = std::move(l1.d_bias);
  StreamFeatureGrads<T> out;
  if (flags.face && flags.context) {
    const std::int64_t n = acts.x_f.extent(0), c = acts.x_f.extent(1);
    out.d_face = Tensor<T>(acts.x_f.shape());
    out.d_context = Tensor<T>(acts.x_c.shape());
    Tensor<T> d_lambda_f(Shape{n, 1}), d_lambda_c(Shape{n, 1});
    for (std::int64_t i = 0; i < n; ++i) {
      const T lf = acts.lambdas.lambda_f[static_cast<std::size_t>(i)];
      const T lc = acts.lambdas.lambda_c[static_cast<std::size_t>(i)];
      const T* dxa = l1.d_input.data() + i * 2 * c;
      const T* pf = acts.x_f.data() + i * c;
      const T* pc = acts.x_c.data() + i * c;
      T dlf = T(0), dlc = T(0);
      for (std::int64_t j = 0; j < c; ++j) {
        out.d_face[i * c + j] = dxa[j] * lf;
        out.d_context[i * c + j] = dxa[c + j] * lc;
        dlf += dxa[j] * pf[j];
        dlc += dxa[c + j] * pc[j];
      }
      d_lambda_f[i] = dlf;
      d_lambda_c[i] = dlc;
    }
    if (flags.fusion_attention) {
      // Two-way softmax Jacobian: ds_f = lf*lc*(dlf - dlc), ds_c = -ds_f.
      Tensor<T> d_sf(Shape{n, 1}), d_sc(Shape{n, 1});
      for (std::int64_t i = 0; i < n; ++i) {
        const T lf = acts.lambdas.lambda_f[static_cast<std::size_t>(i)];
        const T lc = acts.lambdas.lambda_c[static_cast<std::size_t>(i)];
        const T d = lf * lc * (d_lambda_f[i] - d_lambda_c[i]);
        d_sf[i] = d;
        d_sc[i] = -d;
      }
      Tensor<T> gf = detail::gate_backward(acts.x_f, acts.gate_f, p.face_gate, d_sf,
                                           grads.face_gate);
      Tensor<T> gc = detail::gate_backward(acts.x_c, acts.gate_c, p.context_gate, d_sc,
                                           grads.context_gate);
      add_inplace(out.d_face, gf);
      add_inplace(out.d_context, gc);
    }
  } else if (flags.face) {
    out.d_face = std::move(l1.d_input);
  } else {
    out.d_context = std::move(l1.d_input);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-model forward and backward.
// ---------------------------------------------------------------------------

template <typename T>
struct ModelOutput {
  Tensor<T> logits;
  AttentionMap<T> attention;
  FusionWeights<T> lambdas;
  FaceActs<T> face;
  ContextActs<T> context;
  FusionActs<T> fusion;
};

template <typename T>
ModelOutput<T> model_forward(const Tensor<T>& v_f, const Tensor<T>& v_c, ModelParams<T>& m,
                             Mode mode, std::mt19937& rng) {
  const ModelConfig& cfg = m.cfg;
  cfg.validate();
  const auto g = stream_geometry(cfg.variant);
  std::int64_t n = cfg.flags.face ? v_f.extent(0) : v_c.extent(0);
  if (cfg.flags.face && v_f.shape() != cfg.face_input(n))
    throw ShapeError("model_forward: face input " + v_f.shape().str() + ", expected " +
                     cfg.face_input(n).str());
  if (cfg.flags.context && v_c.shape() != cfg.context_input(n))
    throw ShapeError("model_forward: context input " + v_c.shape().str() + ", expected " +
                     cfg.context_input(n).str());
  ModelOutput<T> out;
  Tensor<T> x_f, x_c;
  if (cfg.flags.face) {
    out.face = face_stream_forward(v_f, m.face, g, mode);
    x_f = out.face.feature;
  }
  if (cfg.flags.context) {
    out.context = context_stream_forward(v_c, m.context,
                                         cfg.flags.context_attention ? &m.attention : nullptr, g,
                                         mode, cfg.flags.context_attention);
    x_c = out.context.feature;
    out.attention.raw = out.context.raw_a;
    out.attention.normalized = out.context.ahat;
  }
  out.fusion = fuse_forward(std::move(x_f), std::move(x_c), m.fusion, cfg, mode, rng);
  out.logits = out.fusion.logits;
  out.lambdas = out.fusion.lambdas;
  return out;
}

template <typename T>
ModelParams<T> model_backward(const ModelOutput<T>& out, const ModelParams<T>& m,
                              const Tensor<T>& d_logits) {
  const ModelConfig& cfg = m.cfg;
  ModelParams<T> grads = make_params<T>(cfg);
  StreamFeatureGrads<T> ds = fuse_backward(out.fusion, m.fusion, cfg, d_logits, grads.fusion);
  auto store_blocks = [](EncoderGrads<T>& src, EncoderParams<T>& dst) {
    for (int i = 0; i < 5; ++i) {
      auto& b = dst.blocks[static_cast<std::size_t>(i)];
      auto& s = src.blocks[static_cast<std::size_t>(i)];
      b.conv.weight = std::move(s.d_weight);
      b.conv.bias = std::move(s.d_bias);
      b.bn.gamma = std::move(s.d_gamma);
      b.bn.beta = std::move(s.d_beta);
    }
  };
  if (cfg.flags.face) {
    auto eg = face_stream_backward(out.face, m.face, ds.d_face);
    store_blocks(eg, grads.face);
  }
  if (cfg.flags.context) {
    auto cg = context_stream_backward(out.context, m.context,
                                      cfg.flags.context_attention ? &m.attention : nullptr,
                                      ds.d_context);
    store_blocks(cg.enc, grads.context);
    if (cfg.flags.context_attention) {
      grads.attention.conv1.weight = std::move(cg.d_attn_w1);
      grads.attention.conv1.bias = std::move(cg.d_attn_b1);
      grads.attention.bn1.gamma = std::move(cg.d_attn_gamma);
      grads.attention.bn1.beta = std::move(cg.d_attn_beta);
      grads.attention.conv2.weight = std::move(cg.d_attn_w2);
      grads.attention.conv2.bias = std::move(cg.d_attn_b2);
    }
  }
  return grads;
}

/// Config for an ablated variant of `base`; validates the flag set.
inline ModelConfig ablation_config(ModelConfig base, AblationFlags flags) {
  base.flags = flags;
  base.validate();
  return base;
}

}  // namespace caer
