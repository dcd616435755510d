// SPDX-License-Identifier: Apache-2.0
#include "baim/dump.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace baim {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'I', 'M', 'D', 'U', 'M', 'P'};
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

void HiddenStateDump::validate() const {
  if (layers <= 0 || tokens <= 0 || width <= 0) {
    throw ValidationError("dump dimensions must be positive");
  }
  if (tensor.size() !=
      static_cast<size_t>(layers) * tokens * width) {
    throw ValidationError("dump tensor size does not match dimensions");
  }
  for (int p = 0; p < kStageCount; ++p) {
    auto [s, e] = spans[p];
    if (s < 0 || e < s || e >= tokens) {
      throw ValidationError("stage " + std::to_string(p) +
                            " span out of range");
    }
  }
  for (float v : tensor) {
    if (!std::isfinite(v)) {
      throw ValidationError("dump tensor contains non-finite values");
    }
  }
}

void save_dump(const std::string& path, const HiddenStateDump& dump) {
  dump.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dump file: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint16_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dump.item_id));
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(dump.layers));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dump.tokens));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dump.width));
  for (int p = 0; p < kStageCount; ++p) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dump.spans[p].first));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dump.spans[p].second));
  }
  out.write(reinterpret_cast<const char*>(dump.tensor.data()),
            static_cast<std::streamsize>(dump.tensor.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path);
}

HiddenStateDump load_dump(const std::string& path, std::uint64_t offset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dump file: " + path);
  in.seekg(static_cast<std::streamoff>(offset));
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a dump file (bad magic): " + path);
  }
  std::uint16_t version = read_pod<std::uint16_t>(in);
  if (version != kVersion) {
    throw ValidationError("unsupported dump version " +
                          std::to_string(version) + " in " + path);
  }
  HiddenStateDump dump;
  dump.item_id = static_cast<int>(read_pod<std::uint32_t>(in));
  dump.layers = static_cast<int>(read_pod<std::uint16_t>(in));
  dump.tokens = static_cast<int>(read_pod<std::uint32_t>(in));
  dump.width = static_cast<int>(read_pod<std::uint32_t>(in));
  for (int p = 0; p < kStageCount; ++p) {
    dump.spans[p].first = static_cast<int>(read_pod<std::uint32_t>(in));
    dump.spans[p].second = static_cast<int>(read_pod<std::uint32_t>(in));
  }
  if (!in) throw ValidationError("truncated dump header: " + path);
  size_t n = static_cast<size_t>(dump.layers) * dump.tokens * dump.width;
  dump.tensor.resize(n);
  in.read(reinterpret_cast<char*>(dump.tensor.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw ValidationError("truncated dump tensor: " + path);
  dump.validate();
  return dump;
}

void save_dump_index(const std::string& index_path,
                     const std::vector<DumpIndexEntry>& entries) {
  std::ofstream out(index_path);
  if (!out) throw IoError("cannot write dump index: " + index_path);
  for (const auto& e : entries) {
    nlohmann::json j = {{"item_id", e.item_id}, {"path", e.path},
                        {"offset", e.offset}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + index_path);
}

std::vector<DumpIndexEntry> load_dump_index(const std::string& index_path) {
  std::ifstream in(index_path);
  if (!in) throw IoError("cannot open dump index: " + index_path);
  std::vector<DumpIndexEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw ValidationError("dump index line " + std::to_string(line_no) +
                            ": " + e.what());
    }
    DumpIndexEntry entry;
    entry.item_id = j.at("item_id").get<int>();
    entry.path = j.at("path").get<std::string>();
    entry.offset = j.value("offset", std::uint64_t{0});
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<DumpIndexEntry> write_dump_set(
    const std::string& dir, const std::vector<HiddenStateDump>& dumps) {
  std::filesystem::create_directories(dir);
  std::vector<DumpIndexEntry> entries;
  for (const auto& dump : dumps) {
    char name[32];
    std::snprintf(name, sizeof(name), "item_%06d.dump", dump.item_id);
    save_dump((std::filesystem::path(dir) / name).string(), dump);
    entries.push_back({dump.item_id, name, 0});
  }
  save_dump_index((std::filesystem::path(dir) / "index.jsonl").string(),
                  entries);
  return entries;
}

std::vector<HiddenStateDump> load_dump_set(const std::string& index_path,
                                           const ItemCatalog& catalog) {
  auto entries = load_dump_index(index_path);
  auto base = std::filesystem::path(index_path).parent_path();
  std::set<int> seen;
  std::vector<HiddenStateDump> dumps;
  for (const auto& e : entries) {
    if (!seen.insert(e.item_id).second) {
      throw ValidationError("duplicate dump for item " +
                            std::to_string(e.item_id));
    }
    dumps.push_back(load_dump((base / e.path).string(), e.offset));
    if (dumps.back().item_id != e.item_id) {
      throw ValidationError("dump index item id mismatch for " + e.path);
    }
  }
  std::string missing;
  for (int i = 0; i < catalog.item_count; ++i) {
    if (!seen.count(i)) missing += (missing.empty() ? "" : ", ") + std::to_string(i);
  }
  if (!missing.empty()) {
    throw ValidationError("dumps missing for items: " + missing);
  }
  return dumps;
}

std::vector<HiddenStateDump> synth_dumps(
    const ItemCatalog& catalog,
    const std::vector<std::array<double, kStageCount>>& stage_profiles,
    int layers, int tokens, int width, std::uint64_t seed) {
  if (tokens < kStageCount) {
    throw ValidationError("synthetic dumps need at least 4 tokens");
  }
  if (layers < 1 || width < 1) {
    throw ValidationError("dump dimensions must be positive");
  }
  if (static_cast<int>(stage_profiles.size()) != catalog.item_count) {
    throw ValidationError("one stage profile per catalog item required");
  }
  Rng rng(seed);

  // Shared per-stage unit directions along which the profile weight shifts
  // the token distribution.
  std::vector<VecD> stage_dirs(kStageCount);
  for (int p = 0; p < kStageCount; ++p) {
    VecD dir(width);
    for (int d = 0; d < width; ++d) dir(d) = rng.normal(0.0, 1.0);
    stage_dirs[p] = dir / dir.norm();
  }

  const double item_std = 1.0;   // per-item identity spread
  const double token_std = 0.5;  // within-stage token noise

  std::vector<HiddenStateDump> dumps;
  for (int i = 0; i < catalog.item_count; ++i) {
    HiddenStateDump dump;
    dump.item_id = i;
    dump.layers = layers;
    dump.tokens = tokens;
    dump.width = width;
    // Tile [0, T) into 4 contiguous blocks.
    for (int p = 0; p < kStageCount; ++p) {
      int start = p * tokens / kStageCount;
      int end = (p + 1) * tokens / kStageCount - 1;
      dump.spans[p] = {start, end};
    }
    VecD item_base(width);
    for (int d = 0; d < width; ++d) {
      item_base(d) = rng.normal(0.0, item_std);
    }
    dump.tensor.resize(static_cast<size_t>(layers) * tokens * width);
    for (int l = 0; l < layers; ++l) {
      for (int p = 0; p < kStageCount; ++p) {
        VecD mean = item_base + stage_profiles[i][p] * stage_dirs[p];
        for (int t = dump.spans[p].first; t <= dump.spans[p].second; ++t) {
          for (int d = 0; d < width; ++d) {
            dump.value(l, t, d) =
                static_cast<float>(mean(d) + rng.normal(0.0, token_std));
          }
        }
      }
    }
    dumps.push_back(std::move(dump));
  }
  return dumps;
}

}  // namespace baim
