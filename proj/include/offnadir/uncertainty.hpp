#pragma once

#include "offnadir/model.hpp"

namespace offnadir {

struct McConfig {
  int num_samples = 50;
  uint64_t seed = 0;
  bool retain_samples = false;
};

struct PredictionResult {
  Tensor mean_prob;      // sigmoid of the mean logit, [H,W]
  Tensor epistemic_var;  // variance of logit samples, [H,W]
  Tensor mean_sigma;     // mean predicted aleatoric sigma, empty without that head
  std::vector<Tensor> logit_samples;  // retained raw samples when requested
};

// Classification loss for the configured uncertainty mode. Aleatoric modes
// corrupt the logits with predicted noise before the sigmoid; a fresh noise
// stream is drawn from rng.
inline Var<float> loss_for_mode(Tape<float>& tape, const ForwardOutput& out,
                                const Tensor& labels, Rng& rng, UncertaintyMode mode) {
  bool corrupt = mode == UncertaintyMode::aleatoric || mode == UncertaintyMode::both;
  Var<float> logits = out.logits;
  if (corrupt) {
    if (!out.log_var.valid())
      throw std::invalid_argument("loss_for_mode: mode needs a log-variance head");
    logits = aleatoric_corrupt(logits, out.log_var, rng.next_stream());
  }
  return bce_loss(sigmoid(logits), labels);
}

namespace mcdetail {

inline Tensor squeeze_map(const Tensor& t) {
  if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1) {
    Tensor out({t.dim(2), t.dim(3)});
    std::memcpy(out.data(), t.data(), sizeof(float) * t.size());
    return out;
  }
  if (t.rank() == 2) return t;
  throw std::invalid_argument("expected [1,1,H,W] map, got " + shape_str(t.shape()));
}

}  // namespace mcdetail

// Combine T stochastic forward passes. The mean probability applies the
// sigmoid after averaging logits; the epistemic map is the per-pixel
// population variance of the logit samples.
inline PredictionResult aggregate_mc_samples(const std::vector<Tensor>& logit_samples,
                                             const std::vector<Tensor>* log_var_samples,
                                             bool retain = false) {
  if (logit_samples.empty()) throw std::invalid_argument("aggregate: no samples");
  size_t n = logit_samples[0].size();
  int T = static_cast<int>(logit_samples.size());
  for (const auto& s : logit_samples)
    if (s.size() != n) throw std::invalid_argument("aggregate: sample shape mismatch");
  PredictionResult r;
  r.mean_prob = Tensor(logit_samples[0].shape());
  r.epistemic_var = Tensor(logit_samples[0].shape());
  for (size_t i = 0; i < n; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (const auto& s : logit_samples) {
      double v = s[i];
      s1 += v;
      s2 += v * v;
    }
    double mean = s1 / T;
    double var = s2 / T - mean * mean;
    if (var < 0.0) var = 0.0;
    r.mean_prob[i] = static_cast<float>(1.0 / (1.0 + std::exp(-mean)));
    r.epistemic_var[i] = static_cast<float>(var);
  }
  if (log_var_samples) {
    if (log_var_samples->size() != logit_samples.size())
      throw std::invalid_argument("aggregate: log-var sample count mismatch");
    r.mean_sigma = Tensor(logit_samples[0].shape());
    for (size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (const auto& s : *log_var_samples) acc += std::exp(static_cast<double>(s[i]) / 2.0);
      r.mean_sigma[i] = static_cast<float>(acc / T);
    }
  }
  if (retain) r.logit_samples = logit_samples;
  return r;
}

// Monte Carlo prediction for one image ([C,S,S] or [1,C,S,S]). Sample t uses
// an Rng derived only from (seed, t), so a longer run is a superset of a
// shorter one and samples may be computed in any order.
inline PredictionResult mc_predict(Model& model, const Tensor& image, const Tensor* meta_norm,
                                   const McConfig& mc, bool dropout_active = true) {
  if (mc.num_samples < 1) throw std::invalid_argument("mc_predict: num_samples >= 1");
  Tensor batch;
  if (image.rank() == 3) {
    batch = Tensor({1, image.dim(0), image.dim(1), image.dim(2)});
    std::memcpy(batch.data(), image.data(), sizeof(float) * image.size());
  } else if (image.rank() == 4 && image.dim(0) == 1) {
    batch = image;
  } else {
    throw std::invalid_argument("mc_predict: image must be a single sample");
  }
  std::vector<Tensor> logit_samples, log_var_samples;
  bool has_lv = model.config.has_log_var_head();
  Rng root(mc.seed);
  for (int t = 0; t < mc.num_samples; ++t) {
    Tape<float> tape(false);
    Rng r = root.fork(static_cast<uint64_t>(t));
    ForwardOutput out = model.forward(tape, batch, meta_norm, r, dropout_active, false);
    logit_samples.push_back(mcdetail::squeeze_map(out.logits.val()));
    if (has_lv) log_var_samples.push_back(mcdetail::squeeze_map(out.log_var.val()));
  }
  return aggregate_mc_samples(logit_samples, has_lv ? &log_var_samples : nullptr,
                              mc.retain_samples);
}

}  // namespace offnadir
