// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "baim/params.hpp"

namespace baim {

// Sidecar facts stored with the parameters. `config_hash` must match the
// hash of the model configuration the checkpoint is loaded into.
struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  int epoch = -1;
  std::string repr_mode;       // "baim" | "static"
  std::string backbone_kind;   // "recurrent" | "attention"
  std::string routing;         // "adaptive" | "fixed-stage-k" | "holistic"
  double valid_auc = 0.0;
};

// Single binary file: magic + version + config hash, then named float32
// tensors (column-major), then a JSON metadata trailer. Raw float bytes are
// copied verbatim, so save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const CheckpointMeta& meta);

std::pair<ParamStore<float>, CheckpointMeta> load_checkpoint(const std::string& path);

// Load and fail unless the stored config hash matches `expected_hash`.
std::pair<ParamStore<float>, CheckpointMeta> load_checkpoint_checked(
    const std::string& path, std::uint64_t expected_hash);

}  // namespace baim
