#pragma once

#include <optional>
#include <string>
#include <vector>

#include "offnadir/ops.hpp"
#include "offnadir/optim.hpp"

namespace offnadir {

enum class UncertaintyMode { none = 0, aleatoric = 1, epistemic = 2, both = 3 };
enum class InjectionMode { none = 0, metacat = 1, metaacm = 2 };

inline const char* to_string(UncertaintyMode m) {
  switch (m) {
    case UncertaintyMode::none: return "none";
    case UncertaintyMode::aleatoric: return "aleatoric";
    case UncertaintyMode::epistemic: return "epistemic";
    case UncertaintyMode::both: return "both";
  }
  return "?";
}

inline const char* to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::none: return "none";
    case InjectionMode::metacat: return "metacat";
    case InjectionMode::metaacm: return "metaacm";
  }
  return "?";
}

inline UncertaintyMode parse_uncertainty(const std::string& s) {
  if (s == "none") return UncertaintyMode::none;
  if (s == "aleatoric") return UncertaintyMode::aleatoric;
  if (s == "epistemic") return UncertaintyMode::epistemic;
  if (s == "both") return UncertaintyMode::both;
  throw std::invalid_argument("unknown uncertainty mode: " + s);
}

inline InjectionMode parse_injection(const std::string& s) {
  if (s == "none") return InjectionMode::none;
  if (s == "metacat") return InjectionMode::metacat;
  if (s == "metaacm") return InjectionMode::metaacm;
  throw std::invalid_argument("unknown injection mode: " + s);
}

struct ModelConfig {
  int input_channels = 4;
  int base_channels = 8;
  int encoder_depth = 4;
  float dropout_rate = 0.2f;
  UncertaintyMode uncertainty = UncertaintyMode::none;
  InjectionMode injection = InjectionMode::none;
  int metadata_dim = 2;
  int input_size = 64;

  bool has_log_var_head() const {
    return uncertainty == UncertaintyMode::aleatoric || uncertainty == UncertaintyMode::both;
  }
  bool has_dropout_layers() const {
    return uncertainty == UncertaintyMode::epistemic || uncertainty == UncertaintyMode::both;
  }
  void validate() const {
    if (input_channels < 1 || base_channels < 1 || encoder_depth < 1 || metadata_dim < 1)
      throw std::invalid_argument("model config: dims must be positive");
    if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
      throw std::invalid_argument("model config: dropout_rate in [0,1)");
    if (input_size % (1 << encoder_depth) != 0 || (input_size >> encoder_depth) < 1)
      throw std::invalid_argument("model config: input_size must be divisible by 2^depth");
  }
};

// ---- reusable blocks ----

template <typename T>
Var<T> meta_mlp_forward(Tape<T>&, Var<T> meta, Var<T> w1, Var<T> b1, Var<T> w2, Var<T> b2,
                        Var<T> w3, Var<T> b3, T slope = T(0.2)) {
  Var<T> x = leaky_relu(linear(meta, w1, b1), slope);
  x = leaky_relu(linear(x, w2, b2), slope);
  return leaky_relu(linear(x, w3, b3), slope);
}

// Concatenate broadcast metadata features onto a feature map and project back
// to the original channel count with a 1x1 convolution.
template <typename T>
Var<T> metacat_inject(Tape<T>&, Var<T> feats, Var<T> meta_feats, Var<T> proj_w, Var<T> proj_b) {
  const auto& fs = feats.val().shape();
  Var<T> hb = broadcast_spatial(meta_feats, fs[2], fs[3]);
  return conv2d(concat_channels(feats, hb), proj_w, proj_b, 1, 0);
}

template <typename T>
struct AcmOut {
  Var<T> out;
  Var<T> product;  // h (x) W(v), kept for map export
};

// Adaptive conditional modulation: out = h (x) W(v) + b(v), with W and b 3x3
// convolutions of v. When h's channel count differs from v's, h first passes
// through a 1x1 adapter.
template <typename T>
AcmOut<T> acm_inject(Tape<T>&, Var<T> v, Var<T> h, Var<T> w_w, Var<T> w_b, Var<T> b_w,
                     Var<T> b_b, Var<T> adapter_w = {}, Var<T> adapter_b = {}) {
  Var<T> hh = h;
  if (adapter_w.valid()) hh = conv2d(h, adapter_w, adapter_b, 1, 0);
  if (hh.val().shape() != v.val().shape())
    throw std::invalid_argument("acm_inject: h and v shapes must agree after adapter");
  Var<T> wv = conv2d(v, w_w, w_b, 1, 1);
  Var<T> bv = conv2d(v, b_w, b_b, 1, 1);
  Var<T> prod = mul(hh, wv);
  return {add(prod, bv), prod};
}

// ---- the segmentation model ----

struct ForwardOutput {
  Var<float> logits;
  Var<float> log_var;                  // invalid unless the log-variance head exists
  std::vector<Var<float>> acm_products;  // coarse to fine; empty unless metaacm
  std::vector<Var<float>> param_vars;  // leaves aligned with ParameterStore order
};

// Optional capture of internals for inspection and tests.
struct ForwardProbe {
  int active_dropout_layers = 0;
  std::vector<Tensor> upsampled;  // per decoder block: up(x) before skip concat
  std::vector<Tensor> acm_h;      // raw h fed to each injection site
  std::vector<Tensor> acm_v;      // raw v (skip / bottleneck) fed to each site
  Tensor meta_features;
  Tensor bottleneck;  // encoder output before injection
  Tensor injected;    // bottleneck after injection
};

struct Model {
  ModelConfig config;
  ParameterStore params;
  ParameterStore buffers;  // batch-norm running statistics

  int stage_width(int i) const {  // i in 1..depth
    return config.base_channels << (i - 1);
  }
  int bottleneck_channels() const { return stage_width(config.encoder_depth); }
  // Skip source for decoder block i (1-based): stage depth-i output, stem for i==depth.
  int skip_width(int i) const {
    int s = config.encoder_depth - i;
    return s == 0 ? config.base_channels : stage_width(s);
  }
  int decoder_blocks() const { return config.encoder_depth + 1; }
  bool block_has_dropout(int i) const {  // 1-based decoder block index
    return config.has_dropout_layers() && i <= 3 && i <= config.encoder_depth;
  }

  ForwardOutput forward(Tape<float>& tape, const Tensor& image, const Tensor* metadata,
                        Rng& rng, bool dropout_active, bool bn_training,
                        ForwardProbe* probe = nullptr);
};

Model build_model(const ModelConfig& config, Rng& rng);

namespace modeldetail {

inline void he_normal(Tensor& w, size_t fan_in, RngStream s) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<float>(std * s.gaussian_at(i));
}

// Declares one conv weight (+ optional bias) with He-normal init.
inline void add_conv(ParameterStore& ps, Rng& rng, const std::string& prefix, int out_ch,
                     int in_ch, int k, bool bias) {
  Tensor w({out_ch, in_ch, k, k});
  he_normal(w, static_cast<size_t>(in_ch) * k * k, rng.next_stream());
  ps.add(prefix + ".w", std::move(w), true);
  if (bias) ps.add(prefix + ".b", Tensor::zeros({out_ch}), false);
}

inline void add_linear(ParameterStore& ps, Rng& rng, const std::string& prefix, int out_d,
                       int in_d) {
  Tensor w({out_d, in_d});
  he_normal(w, static_cast<size_t>(in_d), rng.next_stream());
  ps.add(prefix + ".w", std::move(w), true);
  ps.add(prefix + ".b", Tensor::zeros({out_d}), false);
}

inline void add_bn(ParameterStore& ps, ParameterStore& bufs, const std::string& prefix, int ch) {
  ps.add(prefix + ".gamma", Tensor::full({ch}, 1.0f), false);
  ps.add(prefix + ".beta", Tensor::zeros({ch}), false);
  bufs.add(prefix + ".running_mean", Tensor::zeros({ch}), false);
  bufs.add(prefix + ".running_var", Tensor::full({ch}, 1.0f), false);
}

}  // namespace modeldetail

inline Model build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  using namespace modeldetail;
  Model m;
  m.config = config;
  ParameterStore& ps = m.params;
  ParameterStore& bufs = m.buffers;
  int b = config.base_channels, d = config.encoder_depth;

  add_conv(ps, rng, "stem.conv", b, config.input_channels, 3, false);
  add_bn(ps, bufs, "stem.bn", b);

  for (int i = 1; i <= d; ++i) {
    int prev = i == 1 ? b : m.stage_width(i - 1);
    int w = m.stage_width(i);
    std::string p = "enc" + std::to_string(i);
    add_conv(ps, rng, p + ".conv1", w, prev, 4, false);  // stride-2 entry
    add_bn(ps, bufs, p + ".bn1", w);
    add_conv(ps, rng, p + ".conv2", w, w, 3, false);
    add_bn(ps, bufs, p + ".bn2", w);
    add_conv(ps, rng, p + ".skip", w, prev, 2, false);  // stride-2 projection
    add_bn(ps, bufs, p + ".bnskip", w);
  }

  int D = m.bottleneck_channels();
  if (config.injection != InjectionMode::none) {
    add_linear(ps, rng, "meta.mlp1", D, config.metadata_dim);
    add_linear(ps, rng, "meta.mlp2", D, D);
    add_linear(ps, rng, "meta.mlp3", D, D);
  }
  if (config.injection == InjectionMode::metacat)
    add_conv(ps, rng, "metacat.proj", D, 2 * D, 1, true);
  if (config.injection == InjectionMode::metaacm) {
    for (int k = 1; k <= m.decoder_blocks(); ++k) {
      int cv = k == 1 ? D : m.skip_width(k - 1);
      int chh = k == 1 ? D : (k == 2 ? D : m.skip_width(k - 2));
      std::string p = "acm" + std::to_string(k);
      add_conv(ps, rng, p + ".w", cv, cv, 3, true);
      add_conv(ps, rng, p + ".b", cv, cv, 3, true);
      if (chh != cv) add_conv(ps, rng, p + ".adapter", cv, chh, 1, true);
    }
  }

  for (int i = 1; i <= d; ++i) {
    int up_ch = i == 1 ? D : m.skip_width(i - 1);
    int out = m.skip_width(i);
    std::string p = "dec" + std::to_string(i);
    add_conv(ps, rng, p + ".conv", out, up_ch + out, 3, false);
    add_bn(ps, bufs, p + ".bn", out);
  }
  {
    std::string p = "dec" + std::to_string(d + 1);
    add_conv(ps, rng, p + ".conv", b, b, 3, false);
    add_bn(ps, bufs, p + ".bn", b);
  }

  add_conv(ps, rng, "head.logits", 1, b, 3, true);
  if (config.has_log_var_head()) add_conv(ps, rng, "head.log_var", 1, b, 3, true);
  return m;
}

inline ForwardOutput Model::forward(Tape<float>& tape, const Tensor& image,
                                    const Tensor* metadata, Rng& rng, bool dropout_active,
                                    bool bn_training, ForwardProbe* probe) {
  config.validate();
  if (image.rank() != 4 || image.dim(1) != config.input_channels)
    throw std::invalid_argument("forward: image must be [N," +
                                std::to_string(config.input_channels) + ",S,S], got " +
                                shape_str(image.shape()));
  if (image.dim(2) != config.input_size || image.dim(3) != config.input_size)
    throw std::invalid_argument("forward: spatial size must be " +
                                std::to_string(config.input_size) + ", got " +
                                shape_str(image.shape()));
  int N = image.dim(0);
  bool need_meta = config.injection != InjectionMode::none;
  if (need_meta) {
    if (!metadata)
      throw std::invalid_argument("forward: metadata required for injection mode " +
                                  std::string(to_string(config.injection)));
    check_shape(*metadata, {N, config.metadata_dim}, "forward metadata");
  }

  ForwardOutput out;
  out.param_vars.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    out.param_vars[i] = tape.leaf(params.entry(i).value, true);
  auto P = [&](const std::string& name) { return out.param_vars[params.index_of(name)]; };
  auto PB = [&](const std::string& name) -> Var<float> {
    return params.contains(name) ? P(name) : Var<float>{};
  };
  auto bn = [&](Var<float> x, const std::string& prefix) {
    return batch_norm(x, P(prefix + ".gamma"), P(prefix + ".beta"),
                      &buffers.at(prefix + ".running_mean"),
                      &buffers.at(prefix + ".running_var"), bn_training);
  };

  Var<float> x = tape.constant(image);
  x = relu(bn(conv2d(x, P("stem.conv.w"), Var<float>{}, 1, 1), "stem.bn"));
  std::vector<Var<float>> skips{x};
  int d = config.encoder_depth;
  for (int i = 1; i <= d; ++i) {
    std::string p = "enc" + std::to_string(i);
    Var<float> h = relu(bn(conv2d(x, P(p + ".conv1.w"), Var<float>{}, 2, 1), p + ".bn1"));
    h = bn(conv2d(h, P(p + ".conv2.w"), Var<float>{}, 1, 1), p + ".bn2");
    Var<float> s = bn(conv2d(x, P(p + ".skip.w"), Var<float>{}, 2, 0), p + ".bnskip");
    x = relu(add(h, s));
    if (i < d) skips.push_back(x);
  }
  if (probe) probe->bottleneck = x.val();

  Var<float> meta_feats;
  if (need_meta) {
    Var<float> mv = tape.constant(*metadata);
    meta_feats = meta_mlp_forward(tape, mv, P("meta.mlp1.w"), P("meta.mlp1.b"),
                                  P("meta.mlp2.w"), P("meta.mlp2.b"), P("meta.mlp3.w"),
                                  P("meta.mlp3.b"));
    if (probe) probe->meta_features = meta_feats.val();
  }

  if (config.injection == InjectionMode::metacat)
    x = metacat_inject(tape, x, meta_feats, P("metacat.proj.w"), P("metacat.proj.b"));
  if (config.injection == InjectionMode::metaacm) {
    const auto& xs = x.val().shape();
    Var<float> h = broadcast_spatial(meta_feats, xs[2], xs[3]);
    if (probe) {
      probe->acm_h.push_back(h.val());
      probe->acm_v.push_back(x.val());
    }
    AcmOut<float> a = acm_inject(tape, x, h, P("acm1.w.w"), P("acm1.w.b"), P("acm1.b.w"),
                                 P("acm1.b.b"), PB("acm1.adapter.w"), PB("acm1.adapter.b"));
    out.acm_products.push_back(a.product);
    x = a.out;
  }
  if (probe) probe->injected = x.val();

  for (int i = 1; i <= d; ++i) {
    std::string p = "dec" + std::to_string(i);
    Var<float> u = bilinear_upsample(x, 2);
    if (probe) probe->upsampled.push_back(u.val());
    Var<float> s = skips[static_cast<size_t>(d - i)];
    if (config.injection == InjectionMode::metaacm) {
      std::string ap = "acm" + std::to_string(i + 1);
      if (probe) {
        probe->acm_h.push_back(u.val());
        probe->acm_v.push_back(s.val());
      }
      AcmOut<float> a = acm_inject(tape, s, u, P(ap + ".w.w"), P(ap + ".w.b"),
                                   P(ap + ".b.w"), P(ap + ".b.b"), PB(ap + ".adapter.w"),
                                   PB(ap + ".adapter.b"));
      out.acm_products.push_back(a.product);
      s = a.out;
    }
    Var<float> c = concat_channels(u, s);
    if (block_has_dropout(i)) {
      c = dropout(c, config.dropout_rate, rng.next_stream(), dropout_active);
      if (probe && dropout_active) probe->active_dropout_layers += 1;
    }
    x = relu(bn(conv2d(c, P(p + ".conv.w"), Var<float>{}, 1, 1), p + ".bn"));
  }
  {
    std::string p = "dec" + std::to_string(d + 1);
    x = relu(bn(conv2d(x, P(p + ".conv.w"), Var<float>{}, 1, 1), p + ".bn"));
  }

  out.logits = conv2d(x, P("head.logits.w"), P("head.logits.b"), 1, 1);
  if (config.has_log_var_head())
    out.log_var = clamp(conv2d(x, P("head.log_var.w"), P("head.log_var.b"), 1, 1),
                        -10.0f, 10.0f);
  return out;
}

// Scalar parameter count; used for reporting and sanity checks.
inline size_t parameter_count(const Model& m) { return m.params.scalar_count(); }

}  // namespace offnadir
