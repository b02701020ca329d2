#pragma once

#include <filesystem>

#include "offnadir/checkpoint.hpp"

namespace offnadir {

struct TrainConfig {
  int64_t iterations = 20000;
  int batch_size = 16;
  double lr0 = 1e-4;
  double weight_decay = 1e-4;
  int64_t eval_every = 0;        // 0: no periodic validation pass
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  uint64_t seed = 1;
};

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path loss_log_path;
  int64_t iterations = 0;
  double final_loss = 0.0;
};

inline double lr_at(const TrainConfig& c, int64_t t) {
  return c.lr0 * (1.0 - static_cast<double>(t) / static_cast<double>(c.iterations));
}

// Runs the optimization loop and writes checkpoint_final.ckpt plus
// loss_log.tsv under out_dir. When resume is given, continues that run (same
// out_dir appends to the existing loss log).
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const Manifest& manifest, const std::filesystem::path& out_dir,
                  const Checkpoint* resume = nullptr);

}  // namespace offnadir
