#include "offnadir/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "offnadir/tensor_io.hpp"
#include "offnadir/uncertainty.hpp"

namespace offnadir {

namespace {

struct LoadedSplit {
  std::vector<Tensor> images;  // [4,S,S]
  std::vector<Tensor> masks;   // [S,S]
  std::vector<Tensor> meta;    // normalized [2]
};

LoadedSplit load_split(const Manifest& man, Split split, const ModelConfig& mc,
                       const MetaStats& stats, bool need_meta) {
  LoadedSplit out;
  for (const auto& r : man.rows) {
    if (r.split != split) continue;
    Tensor img = read_tensor_f32(man.root / r.image_path);
    if (img.rank() != 3 || img.dim(0) != mc.input_channels || img.dim(1) != mc.input_size ||
        img.dim(2) != mc.input_size)
      throw std::runtime_error("sample " + r.sample_id + " has shape " +
                               shape_str(img.shape()) + ", model expects [" +
                               std::to_string(mc.input_channels) + "," +
                               std::to_string(mc.input_size) + "," +
                               std::to_string(mc.input_size) + "]");
    Tensor mask = read_tensor_f32(man.root / r.mask_path);
    if (mask.rank() != 2 || mask.dim(0) != mc.input_size || mask.dim(1) != mc.input_size)
      throw std::runtime_error("mask shape mismatch for " + r.sample_id);
    out.images.push_back(std::move(img));
    out.masks.push_back(std::move(mask));
    if (need_meta) out.meta.push_back(normalize_metadata(r.off_nadir_deg, r.gsd, stats));
  }
  return out;
}

}  // namespace

TrainResult train(const ModelConfig& model_config, const TrainConfig& cfg,
                  const Manifest& manifest, const std::filesystem::path& out_dir,
                  const Checkpoint* resume) {
  model_config.validate();
  if (cfg.iterations <= 0) throw std::invalid_argument("train: iterations > 0");
  if (cfg.batch_size < 2)
    throw std::invalid_argument("train: batch_size >= 2 (batch-norm statistics)");

  Checkpoint ck;
  int64_t start = 0;
  if (resume) {
    const ModelConfig& rc = resume->model.config;
    if (rc.input_channels != model_config.input_channels ||
        rc.base_channels != model_config.base_channels ||
        rc.encoder_depth != model_config.encoder_depth ||
        rc.metadata_dim != model_config.metadata_dim ||
        rc.input_size != model_config.input_size ||
        rc.uncertainty != model_config.uncertainty || rc.injection != model_config.injection)
      throw std::invalid_argument("train: resume checkpoint config mismatch");
    if (!resume->adam)
      throw std::invalid_argument("train: resume checkpoint lacks optimizer state");
    if (resume->iterations >= cfg.iterations)
      throw std::invalid_argument("train: checkpoint already at or past target iterations");
    ck = *resume;
    start = ck.iterations;
  } else {
    Rng init_rng = Rng(cfg.seed).fork(0xB01D);
    ck.model = build_model(model_config, init_rng);
    ck.stats = compute_meta_stats(manifest);
    ck.adam = init_adam(ck.model.params);
  }

  bool need_meta = model_config.injection != InjectionMode::none;
  LoadedSplit tr = load_split(manifest, Split::train, model_config, ck.stats, need_meta);
  if (tr.images.empty()) throw std::runtime_error("train: manifest has no train split samples");
  LoadedSplit va;
  if (cfg.eval_every > 0) va = load_split(manifest, Split::val, model_config, ck.stats, need_meta);

  std::filesystem::create_directories(out_dir);
  std::filesystem::path log_path = out_dir / "loss_log.tsv";
  bool fresh_log = !std::filesystem::exists(log_path) || !resume;
  std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot open loss log: " + log_path.string());
  if (fresh_log) log << "# iteration\tlr\tloss\n";
  std::ofstream val_log;
  if (cfg.eval_every > 0) {
    std::filesystem::path vp = out_dir / "val_log.tsv";
    bool fresh_val = !std::filesystem::exists(vp) || !resume;
    val_log.open(vp, fresh_val ? std::ios::trunc : std::ios::app);
    if (fresh_val) val_log << "# iteration\tval_loss\n";
  }

  int S = model_config.input_size;
  int B = cfg.batch_size;
  size_t n_train = tr.images.size();
  bool dropout_active = model_config.has_dropout_layers();
  char line[128];
  double last_loss = 0.0;

  for (int64_t t = start; t < cfg.iterations; ++t) {
    double lr = lr_at(cfg, t);
    // All randomness of iteration t is a pure function of (seed, t), so an
    // interrupted run resumes bit-exactly.
    Rng it_rng = Rng(cfg.seed).fork(0x17E4).fork(static_cast<uint64_t>(t));

    Tensor batch({B, model_config.input_channels, S, S});
    Tensor labels({B, 1, S, S});
    Tensor meta({B, model_config.metadata_dim > 0 ? model_config.metadata_dim : 1});
    size_t img_sz = tr.images[0].size(), mask_sz = tr.masks[0].size();
    for (int b = 0; b < B; ++b) {
      size_t idx = static_cast<size_t>(it_rng.uniform_index(n_train));
      std::memcpy(batch.data() + static_cast<size_t>(b) * img_sz, tr.images[idx].data(),
                  sizeof(float) * img_sz);
      std::memcpy(labels.data() + static_cast<size_t>(b) * mask_sz, tr.masks[idx].data(),
                  sizeof(float) * mask_sz);
      if (need_meta)
        std::memcpy(meta.data() + static_cast<size_t>(b) * tr.meta[idx].size(),
                    tr.meta[idx].data(), sizeof(float) * tr.meta[idx].size());
    }

    Tape<float> tape(true);
    ForwardOutput out = ck.model.forward(tape, batch, need_meta ? &meta : nullptr, it_rng,
                                         dropout_active, true);
    Var<float> loss = loss_for_mode(tape, out, labels, it_rng, model_config.uncertainty);
    double lv = static_cast<double>(loss.val()[0]);
    if (!std::isfinite(lv))
      throw std::runtime_error("non-finite training loss at iteration " + std::to_string(t));
    tape.backward(loss);
    std::vector<Tensor> grads(ck.model.params.size());
    for (size_t i = 0; i < grads.size(); ++i) grads[i] = tape.grad(out.param_vars[i]);
    adam_step(ck.model.params, grads, *ck.adam, lr, cfg.weight_decay);
    last_loss = lv;

    std::snprintf(line, sizeof(line), "%lld\t%.10g\t%.10g\n", static_cast<long long>(t), lr, lv);
    log << line;

    if (cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0 && !va.images.empty()) {
      // Deterministic validation loss: plain BCE on mean forward, dropout off.
      double acc = 0.0;
      size_t n_val = std::min<size_t>(va.images.size(), 64);
      for (size_t vi = 0; vi < n_val; ++vi) {
        Tape<float> vt(false);
        Tensor one({1, model_config.input_channels, S, S});
        std::memcpy(one.data(), va.images[vi].data(), sizeof(float) * img_sz);
        Tensor vl({1, 1, S, S});
        std::memcpy(vl.data(), va.masks[vi].data(), sizeof(float) * mask_sz);
        Tensor vm;
        if (need_meta) {
          vm = Tensor({1, model_config.metadata_dim});
          std::memcpy(vm.data(), va.meta[vi].data(), sizeof(float) * va.meta[vi].size());
        }
        Rng vr(cfg.seed, 0xEEF);
        ForwardOutput vo = ck.model.forward(vt, one, need_meta ? &vm : nullptr, vr, false, false);
        Var<float> vloss = bce_loss(sigmoid(vo.logits), vl);
        acc += static_cast<double>(vloss.val()[0]);
      }
      std::snprintf(line, sizeof(line), "%lld\t%.10g\n", static_cast<long long>(t + 1),
                    acc / static_cast<double>(n_val));
      val_log << line;
    }

    if (cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 &&
        t + 1 < cfg.iterations) {
      ck.iterations = t + 1;
      save_checkpoint(out_dir / ("checkpoint_it" + std::to_string(t + 1) + ".ckpt"), ck);
    }
  }

  ck.iterations = cfg.iterations;
  TrainResult res;
  res.checkpoint_path = out_dir / "checkpoint_final.ckpt";
  res.loss_log_path = log_path;
  res.iterations = cfg.iterations;
  res.final_loss = last_loss;
  save_checkpoint(res.checkpoint_path, ck);
  log.flush();
  if (!log) throw std::runtime_error("loss log write failed");
  return res;
}

}  // namespace offnadir
