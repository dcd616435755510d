// SPDX-License-Identifier: Apache-2.0
#include "baim/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace baim {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::string& section,
                         const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ValidationError("config section '" + section + "' must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw ValidationError("unknown config key '" + key + "' in section '" + section + "'");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void read_folds(const json& j, const char* key, std::vector<int>& dst) {
  if (j.contains(key)) dst = j.at(key).get<std::vector<int>>();
}

}  // namespace

void SplitConfig::validate() const {
  if (folds < 2) throw ValidationError("split needs at least 2 folds");
  auto check = [&](const std::vector<int>& fs, const char* what) {
    if (fs.empty()) {
      throw ValidationError(std::string("split has no ") + what + " folds");
    }
    for (int f : fs) {
      if (f < 0 || f >= folds) {
        throw ValidationError(std::string(what) + " fold index out of range");
      }
    }
  };
  check(train_folds, "train");
  check(valid_folds, "valid");
  check(test_folds, "test");
  std::set<int> seen;
  for (const auto* group : {&train_folds, &valid_folds, &test_folds}) {
    for (int f : *group) {
      if (!seen.insert(f).second) {
        throw ValidationError("fold " + std::to_string(f) + " assigned to multiple splits");
      }
    }
  }
}

RunConfig RunConfig::synthetic_default() {
  RunConfig c;
  // A profile scale of 2 keeps item responses informative (neither coin flips
  // nor saturated) and gives the dump generator a stage direction strong
  // enough to survive PCA at desk scale.
  c.simulator.item_stage_profile_scale = 2.0;
  c.router.stage_dim = 32;
  c.router.model_dim = 16;
  c.router.context_dim = 16;
  c.backbone.kind = BackboneKind::kAttention;
  c.backbone.model_dim = 16;
  c.backbone.max_len = 50;
  c.extract.target_dim = 32;
  c.train.batch_size = 64;
  c.train.learning_rate = 3e-3;
  // The attention models climb in two phases at this data scale, with a long
  // validation plateau between them; ride the full budget and keep the best
  // checkpoint rather than stopping inside the plateau.
  c.train.epochs = 200;
  c.train.patience = 200;
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = synthetic_default();
  reject_unknown_keys(j, "<root>",
                      {"simulator", "dumps", "extract", "router", "backbone",
                       "routing_strategy", "train", "split", "paths"});

  if (j.contains("simulator")) {
    const json& s = j.at("simulator");
    reject_unknown_keys(s, "simulator",
                        {"learners", "items", "seq_len", "stage_count", "profile_scale",
                         "mastery_init_mean", "mastery_init_std",
                         "learning_rate_per_attempt", "seed"});
    read_field(s, "learners", c.simulator.n_learners);
    read_field(s, "items", c.simulator.n_items);
    read_field(s, "seq_len", c.simulator.seq_len);
    read_field(s, "stage_count", c.simulator.stage_count);
    read_field(s, "profile_scale", c.simulator.item_stage_profile_scale);
    read_field(s, "mastery_init_mean", c.simulator.mastery_init_mean);
    read_field(s, "mastery_init_std", c.simulator.learner_mastery_init_std);
    read_field(s, "learning_rate_per_attempt", c.simulator.learning_rate_per_attempt);
    read_field(s, "seed", c.simulator.seed);
  }
  if (j.contains("dumps")) {
    const json& s = j.at("dumps");
    reject_unknown_keys(s, "dumps", {"layers", "tokens", "width", "seed"});
    read_field(s, "layers", c.dumps.layers);
    read_field(s, "tokens", c.dumps.tokens);
    read_field(s, "width", c.dumps.width);
    read_field(s, "seed", c.dumps.seed);
  }
  if (j.contains("extract")) {
    const json& s = j.at("extract");
    reject_unknown_keys(s, "extract", {"strategy", "target_dim"});
    if (s.contains("strategy")) {
      c.extract.strategy = pool_strategy_from_string(s.at("strategy").get<std::string>());
    }
    read_field(s, "target_dim", c.extract.target_dim);
  }
  if (j.contains("router")) {
    const json& s = j.at("router");
    reject_unknown_keys(s, "router",
                        {"stage_dim", "model_dim", "context_dim", "dropout", "noise_std",
                         "scale_by_gate_prob"});
    read_field(s, "stage_dim", c.router.stage_dim);
    read_field(s, "model_dim", c.router.model_dim);
    read_field(s, "context_dim", c.router.context_dim);
    read_field(s, "dropout", c.router.dropout_rate);
    read_field(s, "noise_std", c.router.noise_std);
    read_field(s, "scale_by_gate_prob", c.router.scale_by_gate_prob);
  }
  if (j.contains("backbone")) {
    const json& s = j.at("backbone");
    reject_unknown_keys(s, "backbone",
                        {"kind", "model_dim", "heads", "attention_layers", "max_len",
                         "item_repr_mode"});
    if (s.contains("kind")) {
      c.backbone.kind = backbone_kind_from_string(s.at("kind").get<std::string>());
    }
    read_field(s, "model_dim", c.backbone.model_dim);
    read_field(s, "heads", c.backbone.heads);
    read_field(s, "attention_layers", c.backbone.attention_layers);
    read_field(s, "max_len", c.backbone.max_len);
    if (s.contains("item_repr_mode")) {
      c.backbone.item_repr_mode =
          item_repr_mode_from_string(s.at("item_repr_mode").get<std::string>());
    }
  }
  if (j.contains("routing_strategy")) {
    c.routing = RoutingStrategy::parse(j.at("routing_strategy").get<std::string>());
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    reject_unknown_keys(s, "train",
                        {"batch_size", "learning_rate", "epochs", "lambda_lb", "beta1",
                         "beta2", "adam_eps", "patience", "seed"});
    read_field(s, "batch_size", c.train.batch_size);
    read_field(s, "learning_rate", c.train.learning_rate);
    read_field(s, "epochs", c.train.epochs);
    read_field(s, "lambda_lb", c.train.lambda_lb);
    read_field(s, "beta1", c.train.beta1);
    read_field(s, "beta2", c.train.beta2);
    read_field(s, "adam_eps", c.train.adam_eps);
    read_field(s, "patience", c.train.patience);
    read_field(s, "seed", c.train.seed);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    reject_unknown_keys(s, "split",
                        {"folds", "train_folds", "valid_folds", "test_folds", "seed"});
    read_field(s, "folds", c.split.folds);
    read_folds(s, "train_folds", c.split.train_folds);
    read_folds(s, "valid_folds", c.split.valid_folds);
    read_folds(s, "test_folds", c.split.test_folds);
    read_field(s, "seed", c.split.seed);
  }
  if (j.contains("paths")) {
    const json& s = j.at("paths");
    reject_unknown_keys(s, "paths",
                        {"out_dir", "dataset", "catalog", "truth", "dumps_dir", "table",
                         "checkpoint", "epoch_log", "metrics", "routing_csv",
                         "routing_summary"});
    read_field(s, "out_dir", c.paths.out_dir);
    read_field(s, "dataset", c.paths.dataset);
    read_field(s, "catalog", c.paths.catalog);
    read_field(s, "truth", c.paths.truth);
    read_field(s, "dumps_dir", c.paths.dumps_dir);
    read_field(s, "table", c.paths.table);
    read_field(s, "checkpoint", c.paths.checkpoint);
    read_field(s, "epoch_log", c.paths.epoch_log);
    read_field(s, "metrics", c.paths.metrics);
    read_field(s, "routing_csv", c.paths.routing_csv);
    read_field(s, "routing_summary", c.paths.routing_summary);
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["simulator"] = {{"learners", simulator.n_learners},
                    {"items", simulator.n_items},
                    {"seq_len", simulator.seq_len},
                    {"stage_count", simulator.stage_count},
                    {"profile_scale", simulator.item_stage_profile_scale},
                    {"mastery_init_mean", simulator.mastery_init_mean},
                    {"mastery_init_std", simulator.learner_mastery_init_std},
                    {"learning_rate_per_attempt", simulator.learning_rate_per_attempt},
                    {"seed", simulator.seed}};
  j["dumps"] = {{"layers", dumps.layers},
                {"tokens", dumps.tokens},
                {"width", dumps.width},
                {"seed", dumps.seed}};
  j["extract"] = {{"strategy", to_string(extract.strategy)},
                  {"target_dim", extract.target_dim}};
  j["router"] = {{"stage_dim", router.stage_dim},
                 {"model_dim", router.model_dim},
                 {"context_dim", router.context_dim},
                 {"dropout", router.dropout_rate},
                 {"noise_std", router.noise_std},
                 {"scale_by_gate_prob", router.scale_by_gate_prob}};
  j["backbone"] = {{"kind", to_string(backbone.kind)},
                   {"model_dim", backbone.model_dim},
                   {"heads", backbone.heads},
                   {"attention_layers", backbone.attention_layers},
                   {"max_len", backbone.max_len},
                   {"item_repr_mode", to_string(backbone.item_repr_mode)}};
  j["routing_strategy"] = routing.str();
  j["train"] = {{"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"epochs", train.epochs},
                {"lambda_lb", train.lambda_lb},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"adam_eps", train.adam_eps},
                {"patience", train.patience},
                {"seed", train.seed}};
  j["split"] = {{"folds", split.folds},
                {"train_folds", split.train_folds},
                {"valid_folds", split.valid_folds},
                {"test_folds", split.test_folds},
                {"seed", split.seed}};
  j["paths"] = {{"out_dir", paths.out_dir},
                {"dataset", paths.dataset},
                {"catalog", paths.catalog},
                {"truth", paths.truth},
                {"dumps_dir", paths.dumps_dir},
                {"table", paths.table},
                {"checkpoint", paths.checkpoint},
                {"epoch_log", paths.epoch_log},
                {"metrics", paths.metrics},
                {"routing_csv", paths.routing_csv},
                {"routing_summary", paths.routing_summary}};
  return j;
}

void RunConfig::validate() const {
  simulator.validate();
  dumps.validate();
  extract.validate();
  model_config().validate();
  train.validate();
  split.validate();
}

void RunConfig::resolve_paths() {
  if (paths.out_dir.empty()) {
    throw ValidationError("output directory is not set (use --out, the config file, or " +
                          std::string(kOutRootEnvVar) + ")");
  }
  auto fill = [&](std::string& field, const std::string& leaf) {
    if (field.empty()) field = paths.out_dir + "/" + leaf;
  };
  fill(paths.dataset, "dataset.csv");
  fill(paths.catalog, "catalog.json");
  fill(paths.truth, "truth.json");
  fill(paths.dumps_dir, "dumps");
  fill(paths.table, "stage_table.bin");
  fill(paths.checkpoint, "model.ckpt");
  fill(paths.epoch_log, "epochs.jsonl");
  fill(paths.metrics, "metrics.json");
  fill(paths.routing_csv, "routing.csv");
  fill(paths.routing_summary, "routing_summary.json");
}

}  // namespace baim
