// SPDX-License-Identifier: Apache-2.0
#include "baim/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace baim {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'I', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint16_t>(out, kVersion);
  write_pod<std::uint64_t>(out, meta.config_hash);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const Parameter<float>& p = params.at(i);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    for (int c = 0; c < p.value.cols(); ++c) {
      for (int r = 0; r < p.value.rows(); ++r) {
        write_pod<float>(out, p.value(r, c));
      }
    }
  }
  nlohmann::json j;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  j["epoch"] = meta.epoch;
  j["repr_mode"] = meta.repr_mode;
  j["backbone_kind"] = meta.backbone_kind;
  j["routing"] = meta.routing;
  j["valid_auc"] = meta.valid_auc;
  const std::string trailer = j.dump();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(trailer.size()));
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

std::pair<ParamStore<float>, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a checkpoint file: " + path);
  }
  const auto version = read_pod<std::uint16_t>(in, "version");
  if (version != kVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointMeta meta;
  meta.config_hash = read_pod<std::uint64_t>(in, "config hash");
  const auto n_blobs = read_pod<std::uint32_t>(in, "blob count");
  ParamStore<float> params;
  for (std::uint32_t b = 0; b < n_blobs; ++b) {
    const auto name_len = read_pod<std::uint32_t>(in, "name length");
    if (name_len == 0 || name_len > 4096) {
      throw ValidationError("implausible parameter name length in checkpoint");
    }
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint truncated while reading a parameter name");
    const auto rows = read_pod<std::uint32_t>(in, "rows");
    const auto cols = read_pod<std::uint32_t>(in, "cols");
    if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1u << 28)) {
      throw ValidationError("implausible tensor shape in checkpoint for " + name);
    }
    Parameter<float>& p = params.add(name, static_cast<int>(rows), static_cast<int>(cols));
    for (std::uint32_t c = 0; c < cols; ++c) {
      for (std::uint32_t r = 0; r < rows; ++r) {
        p.value(static_cast<int>(r), static_cast<int>(c)) =
            read_pod<float>(in, "tensor data of " + name);
      }
    }
  }
  const auto trailer_len = read_pod<std::uint32_t>(in, "metadata length");
  std::string trailer(trailer_len, '\0');
  in.read(trailer.data(), trailer_len);
  if (!in) throw IoError("checkpoint truncated while reading metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(trailer);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid checkpoint metadata: ") + e.what());
  }
  if (j.value("config_hash", std::uint64_t{0}) != meta.config_hash) {
    throw ValidationError("checkpoint metadata disagrees with header config hash");
  }
  meta.seed = j.value("seed", std::uint64_t{0});
  meta.epoch = j.value("epoch", -1);
  meta.repr_mode = j.value("repr_mode", "");
  meta.backbone_kind = j.value("backbone_kind", "");
  meta.routing = j.value("routing", "");
  meta.valid_auc = j.value("valid_auc", 0.0);
  return {std::move(params), std::move(meta)};
}

std::pair<ParamStore<float>, CheckpointMeta> load_checkpoint_checked(
    const std::string& path, std::uint64_t expected_hash) {
  auto loaded = load_checkpoint(path);
  if (loaded.second.config_hash != expected_hash) {
    throw ValidationError(
        "checkpoint was produced by a different model configuration (hash mismatch)");
  }
  return loaded;
}

}  // namespace baim
