// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "baim/dump.hpp"
#include "baim/pca.hpp"

namespace baim {

enum class PoolStrategy { kGlobal, kFinalLayer, kHolistic };

PoolStrategy pool_strategy_from_string(const std::string& s);
std::string to_string(PoolStrategy s);

// Aligned per-item, per-stage vectors. Row layout: item * 4 + stage.
// Stored as float32 to match the on-disk format; the extraction pipeline
// computes in double and casts once at the end.
struct StageEmbeddingTable {
  int item_count = 0;
  int dim = 0;
  MatF matrix;  // (item_count * 4) x dim

  VecF row(int item, int stage) const {
    return matrix.row(item * kStageCount + stage).transpose();
  }
};

struct TableMetadata {
  std::string strategy;
  int target_dim = 0;
  int pca_components = 0;
  int pca_effective_rank = 0;
  std::vector<double> explained_variance;
};

// Mean over the stage's token span at every layer (computed in double).
std::vector<VecD> temporal_aggregate(const HiddenStateDump& dump, int stage);

// global: elementwise mean over layers; final_layer: last layer unchanged.
VecD layer_pool(const std::vector<VecD>& stage_layer_vectors,
                PoolStrategy strategy);

// Mean over all tokens in the union of the four spans, then over layers.
VecD holistic_pool(const HiddenStateDump& dump);

// Full pipeline: per-item/per-stage pooled vectors, one joint PCA over all
// of them, projected rows. With kHolistic the per-item pooled vector is
// replicated into all four stage slots before the joint fit. The table
// stores float32; `projected_out` exposes the pre-cast double rows so
// verification can compare against reference implementations at full
// precision.
StageEmbeddingTable build_table(const std::vector<HiddenStateDump>& dumps,
                                int target_dim, PoolStrategy strategy,
                                TableMetadata* metadata_out = nullptr,
                                PcaModel* pca_out = nullptr,
                                MatD* projected_out = nullptr);

// Binary table file: magic "BAIMTABL" | u16 version | u32 item_count |
// u32 stage_count | u32 dim | row-major float32 (item, stage, dim).
// The sidecar JSON (path + ".json") records strategy and PCA metadata.
void save_table(const std::string& path, const StageEmbeddingTable& table,
                const TableMetadata& metadata);
StageEmbeddingTable load_table(const std::string& path,
                               TableMetadata* metadata_out = nullptr);

}  // namespace baim
