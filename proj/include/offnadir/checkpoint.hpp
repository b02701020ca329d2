#pragma once

#include <filesystem>
#include <optional>

#include "offnadir/data.hpp"
#include "offnadir/model.hpp"
#include "offnadir/optim.hpp"

namespace offnadir {

// Everything needed to resume training or run inference: the model (config,
// parameters, batch-norm buffers), the metadata normalization statistics and
// the optimizer state.
struct Checkpoint {
  Model model;
  MetaStats stats;
  int64_t iterations = 0;
  std::optional<AdamState> adam;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace offnadir
