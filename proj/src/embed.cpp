// SPDX-License-Identifier: Apache-2.0
#include "baim/embed.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

namespace baim {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'I', 'M', 'T', 'A', 'B', 'L'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

PoolStrategy pool_strategy_from_string(const std::string& s) {
  if (s == "global") return PoolStrategy::kGlobal;
  if (s == "final_layer") return PoolStrategy::kFinalLayer;
  if (s == "holistic") return PoolStrategy::kHolistic;
  throw ValidationError("unknown pooling strategy: " + s);
}

std::string to_string(PoolStrategy s) {
  switch (s) {
    case PoolStrategy::kGlobal: return "global";
    case PoolStrategy::kFinalLayer: return "final_layer";
    case PoolStrategy::kHolistic: return "holistic";
  }
  return "?";
}

std::vector<VecD> temporal_aggregate(const HiddenStateDump& dump, int stage) {
  if (stage < 0 || stage >= kStageCount) {
    throw ValidationError("stage index out of range");
  }
  auto [start, end] = dump.spans[stage];
  if (start < 0 || end < start || end >= dump.tokens) {
    throw ValidationError("stage " + std::to_string(stage) +
                          " span invalid for dump of item " +
                          std::to_string(dump.item_id));
  }
  const double count = static_cast<double>(end - start + 1);
  std::vector<VecD> out(dump.layers);
  for (int l = 0; l < dump.layers; ++l) {
    VecD acc = VecD::Zero(dump.width);
    for (int t = start; t <= end; ++t) {
      for (int d = 0; d < dump.width; ++d) {
        acc(d) += static_cast<double>(dump.value(l, t, d));
      }
    }
    out[l] = acc / count;
  }
  return out;
}

VecD layer_pool(const std::vector<VecD>& stage_layer_vectors,
                PoolStrategy strategy) {
  if (stage_layer_vectors.empty()) {
    throw ValidationError("layer_pool needs at least one layer vector");
  }
  if (strategy == PoolStrategy::kFinalLayer) {
    return stage_layer_vectors.back();
  }
  VecD acc = VecD::Zero(stage_layer_vectors.front().size());
  for (const auto& v : stage_layer_vectors) acc += v;
  return acc / static_cast<double>(stage_layer_vectors.size());
}

VecD holistic_pool(const HiddenStateDump& dump) {
  std::set<int> union_tokens;
  for (int p = 0; p < kStageCount; ++p) {
    auto [start, end] = dump.spans[p];
    if (start < 0 || end < start || end >= dump.tokens) {
      throw ValidationError("invalid span in dump of item " +
                            std::to_string(dump.item_id));
    }
    for (int t = start; t <= end; ++t) union_tokens.insert(t);
  }
  if (union_tokens.empty()) {
    throw ValidationError("empty span union in dump of item " +
                          std::to_string(dump.item_id));
  }
  VecD acc = VecD::Zero(dump.width);
  for (int l = 0; l < dump.layers; ++l) {
    for (int t : union_tokens) {
      for (int d = 0; d < dump.width; ++d) {
        acc(d) += static_cast<double>(dump.value(l, t, d));
      }
    }
  }
  return acc / (static_cast<double>(dump.layers) *
                static_cast<double>(union_tokens.size()));
}

StageEmbeddingTable build_table(const std::vector<HiddenStateDump>& dumps,
                                int target_dim, PoolStrategy strategy,
                                TableMetadata* metadata_out,
                                PcaModel* pca_out,
                                MatD* projected_out) {
  if (dumps.empty()) throw ValidationError("no dumps given");
  const int item_count = static_cast<int>(dumps.size());
  std::vector<const HiddenStateDump*> by_item(item_count, nullptr);
  for (const auto& d : dumps) {
    if (d.item_id < 0 || d.item_id >= item_count) {
      throw ValidationError("dump item id " + std::to_string(d.item_id) +
                            " outside dense range 0.." +
                            std::to_string(item_count - 1));
    }
    if (by_item[d.item_id]) {
      throw ValidationError("duplicate dump for item " +
                            std::to_string(d.item_id));
    }
    by_item[d.item_id] = &d;
  }

  const int width = by_item[0]->width;
  MatD pooled(item_count * kStageCount, width);
  for (int i = 0; i < item_count; ++i) {
    const HiddenStateDump& dump = *by_item[i];
    if (dump.width != width) {
      throw ValidationError("dump width mismatch for item " +
                            std::to_string(i));
    }
    if (strategy == PoolStrategy::kHolistic) {
      VecD v = holistic_pool(dump);
      for (int p = 0; p < kStageCount; ++p) {
        pooled.row(i * kStageCount + p) = v.transpose();
      }
    } else {
      for (int p = 0; p < kStageCount; ++p) {
        pooled.row(i * kStageCount + p) =
            layer_pool(temporal_aggregate(dump, p), strategy).transpose();
      }
    }
  }

  PcaModel pca = fit_pca(pooled, target_dim);

  StageEmbeddingTable table;
  table.item_count = item_count;
  table.dim = target_dim;
  table.matrix.resize(item_count * kStageCount, target_dim);
  if (projected_out) projected_out->resize(item_count * kStageCount, target_dim);
  for (int r = 0; r < pooled.rows(); ++r) {
    VecD projected = apply_pca(pca, pooled.row(r).transpose());
    if (projected_out) projected_out->row(r) = projected.transpose();
    table.matrix.row(r) = projected.cast<float>().transpose();
  }

  if (metadata_out) {
    metadata_out->strategy = to_string(strategy);
    metadata_out->target_dim = target_dim;
    metadata_out->pca_components = pca.k();
    metadata_out->pca_effective_rank = pca.effective_rank;
    metadata_out->explained_variance.assign(
        pca.explained_variance.data(),
        pca.explained_variance.data() + pca.k());
  }
  if (pca_out) *pca_out = pca;
  return table;
}

void save_table(const std::string& path, const StageEmbeddingTable& table,
                const TableMetadata& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write table file: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint16_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(table.item_count));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(kStageCount));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim));
  for (int r = 0; r < table.matrix.rows(); ++r) {
    for (int c = 0; c < table.dim; ++c) {
      write_pod<float>(out, table.matrix(r, c));
    }
  }
  if (!out) throw IoError("write failed: " + path);

  nlohmann::json j = {{"strategy", metadata.strategy},
                      {"target_dim", metadata.target_dim},
                      {"pca_components", metadata.pca_components},
                      {"pca_effective_rank", metadata.pca_effective_rank},
                      {"explained_variance", metadata.explained_variance}};
  std::ofstream side(path + ".json");
  if (!side) throw IoError("cannot write table sidecar: " + path + ".json");
  side << j.dump(2) << '\n';
}

StageEmbeddingTable load_table(const std::string& path,
                               TableMetadata* metadata_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open table file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a table file (bad magic): " + path);
  }
  std::uint16_t version = read_pod<std::uint16_t>(in);
  if (version != kVersion) {
    throw ValidationError("unsupported table version in " + path);
  }
  StageEmbeddingTable table;
  table.item_count = static_cast<int>(read_pod<std::uint32_t>(in));
  int stage_count = static_cast<int>(read_pod<std::uint32_t>(in));
  if (stage_count != kStageCount) {
    throw ValidationError("table stage count must be 4");
  }
  table.dim = static_cast<int>(read_pod<std::uint32_t>(in));
  table.matrix.resize(table.item_count * kStageCount, table.dim);
  for (int r = 0; r < table.matrix.rows(); ++r) {
    std::vector<float> row(table.dim);
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(table.dim * sizeof(float)));
    for (int c = 0; c < table.dim; ++c) table.matrix(r, c) = row[c];
  }
  if (!in) throw ValidationError("truncated table file: " + path);

  if (metadata_out) {
    std::ifstream side(path + ".json");
    if (side) {
      nlohmann::json j;
      side >> j;
      metadata_out->strategy = j.value("strategy", std::string());
      metadata_out->target_dim = j.value("target_dim", table.dim);
      metadata_out->pca_components = j.value("pca_components", 0);
      metadata_out->pca_effective_rank = j.value("pca_effective_rank", 0);
      metadata_out->explained_variance =
          j.value("explained_variance", std::vector<double>());
    }
  }
  return table;
}

}  // namespace baim
