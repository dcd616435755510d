// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "baim/data.hpp"
#include "baim/simulator.hpp"

namespace baim {

// Per-item latent trace of a solver run: an L x T x D tensor of float32
// hidden states plus one contiguous token span per problem-solving stage.
// Values are stored as float32; aggregation downstream runs in double.
struct HiddenStateDump {
  int item_id = 0;
  int layers = 0;    // L
  int tokens = 0;    // T
  int width = 0;     // D
  std::array<std::pair<int, int>, kStageCount> spans;  // inclusive [start,end]
  // Row-major, layer-major: value(l, t, d) = tensor[(l*T + t)*D + d].
  std::vector<float> tensor;

  float value(int l, int t, int d) const {
    return tensor[(static_cast<size_t>(l) * tokens + t) * width + d];
  }
  float& value(int l, int t, int d) {
    return tensor[(static_cast<size_t>(l) * tokens + t) * width + d];
  }
  void validate() const;
};

// Binary container, one file per item:
//   magic "BAIMDUMP" | u16 version | u32 item_id | u16 L | u32 T | u32 D |
//   4 x (u32 start, u32 end) | float32 tensor (layer, token, dim)
void save_dump(const std::string& path, const HiddenStateDump& dump);
HiddenStateDump load_dump(const std::string& path, std::uint64_t offset = 0);

struct DumpIndexEntry {
  int item_id = 0;
  std::string path;
  std::uint64_t offset = 0;
};

// JSON-lines index, one object per item: {"item_id": N, "path": "...",
// "offset": 0}. Paths are relative to the index file's directory.
void save_dump_index(const std::string& index_path,
                     const std::vector<DumpIndexEntry>& entries);
std::vector<DumpIndexEntry> load_dump_index(const std::string& index_path);

// Writes one dump per catalog item under dir and the index.jsonl next to
// them. Returns the index entries.
std::vector<DumpIndexEntry> write_dump_set(
    const std::string& dir, const std::vector<HiddenStateDump>& dumps);

// Loads every catalog item through the index, erroring on absent ids.
std::vector<HiddenStateDump> load_dump_set(const std::string& index_path,
                                           const ItemCatalog& catalog);

// Stand-in for solver output. Stage spans tile [0,T) into four contiguous
// blocks; token vectors at stage p are drawn around a per-item base vector
// shifted along a per-stage direction by the item's stage-profile weight,
// so the resulting embeddings carry a recoverable stage signal.
std::vector<HiddenStateDump> synth_dumps(
    const ItemCatalog& catalog,
    const std::vector<std::array<double, kStageCount>>& stage_profiles,
    int layers, int tokens, int width, std::uint64_t seed);

}  // namespace baim
