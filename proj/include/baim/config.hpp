// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "baim/data.hpp"
#include "baim/dump.hpp"
#include "baim/embed.hpp"
#include "baim/model.hpp"
#include "baim/simulator.hpp"
#include "baim/train.hpp"

namespace baim {

// Environment variable consulted for the default output root when neither
// the config file nor --out provides one.
constexpr const char* kOutRootEnvVar = "BAIM_OUT";

struct DumpGenConfig {
  int layers = 3;
  int tokens = 8;
  int width = 48;
  std::uint64_t seed = 7;

  void validate() const {
    if (layers <= 0 || tokens < kStageCount || width <= 0) {
      throw ValidationError("dump generation needs layers>0, tokens>=4, width>0");
    }
  }
};

struct ExtractConfig {
  PoolStrategy strategy = PoolStrategy::kGlobal;
  int target_dim = 32;

  void validate() const {
    if (target_dim <= 0) throw ValidationError("target_dim must be positive");
  }
};

struct SplitConfig {
  int folds = 5;
  std::vector<int> train_folds{0, 1, 2};
  std::vector<int> valid_folds{3};
  std::vector<int> test_folds{4};
  std::uint64_t seed = 1234;

  void validate() const;
};

struct PathsConfig {
  std::string out_dir;  // root; empty -> --out, then $BAIM_OUT, then ./baim-out
  std::string dataset;
  std::string catalog;
  std::string truth;
  std::string dumps_dir;
  std::string table;
  std::string checkpoint;
  std::string epoch_log;
  std::string metrics;
  std::string routing_csv;
  std::string routing_summary;
};

struct RunConfig {
  SimulatorConfig simulator;
  DumpGenConfig dumps;
  ExtractConfig extract;
  RouterConfig router;
  BackboneConfig backbone;
  RoutingStrategy routing;
  TrainConfig train;
  SplitConfig split;
  PathsConfig paths;

  // Desk-scale profile: small widths, fast optimizer settings, the default
  // synthetic population.
  static RunConfig synthetic_default();

  static RunConfig from_json_file(const std::string& path);
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  void validate() const;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.router = router;
    mc.backbone = backbone;
    mc.routing = routing;
    return mc;
  }

  // Fill empty path fields from out_dir (which must be set by then).
  void resolve_paths();
};

}  // namespace baim
