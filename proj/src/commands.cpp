// SPDX-License-Identifier: Apache-2.0
#include "baim/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "baim/checkpoint.hpp"
#include "baim/data.hpp"
#include "baim/dump.hpp"
#include "baim/embed.hpp"
#include "baim/gradcheck.hpp"
#include "baim/metrics.hpp"
#include "baim/model.hpp"
#include "baim/simulator.hpp"
#include "baim/train.hpp"

namespace baim {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) ensure_dir(p.parent_path().string());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// Shortest decimal form that round-trips, shared with the JSON outputs so
// CSV and JSON render the same number identically.
std::string num(double v) { return json(v).dump(); }

std::string dump_index_path(const RunConfig& cfg) {
  return (fs::path(cfg.paths.dumps_dir) / "index.jsonl").string();
}

struct SplitIndices {
  std::vector<int> train, valid, test;
};

SplitIndices split_dataset(const std::vector<LearnerSequence>& sequences,
                           const SplitConfig& split) {
  const FoldSplit folds = make_folds(sequences, split.folds, split.seed);
  const auto contains = [](const std::vector<int>& group, int fold) {
    return std::find(group.begin(), group.end(), fold) != group.end();
  };
  SplitIndices out;
  for (int i = 0; i < static_cast<int>(sequences.size()); ++i) {
    const int fold = folds.fold_of(sequences[i].learner_id);
    if (contains(split.train_folds, fold)) {
      out.train.push_back(i);
    } else if (contains(split.valid_folds, fold)) {
      out.valid.push_back(i);
    } else if (contains(split.test_folds, fold)) {
      out.test.push_back(i);
    }
  }
  if (out.train.empty() || out.valid.empty() || out.test.empty()) {
    throw ValidationError("a split group received no sequences; adjust the fold groups");
  }
  return out;
}

json metrics_to_json(const Metrics& m) {
  json j;
  j["auc"] = m.auc;
  j["bce"] = m.bce;
  j["has_routing"] = m.has_routing;
  j["routing_shares"] = m.routing_shares;
  j["repeated_attempts"] = m.repeated_attempts;
  j["stage_shifts"] = m.stage_shifts;
  j["learners_with_repeats"] = m.learners_with_repeats;
  j["learners_with_shifts"] = m.learners_with_shifts;
  return j;
}

void write_epoch_log(const std::string& path, const std::vector<EpochLogEntry>& log) {
  std::ostringstream out;
  for (const EpochLogEntry& e : log) {
    json j;
    j["epoch"] = e.epoch;
    j["train_kt"] = e.train_kt;
    j["train_lb"] = e.train_lb;
    j["train_total"] = e.train_total;
    j["valid_auc"] = e.valid_auc;
    j["valid_bce"] = e.valid_bce;
    j["routing_shares"] = e.train_routing_shares;
    out << j.dump() << "\n";
  }
  write_text(path, out.str());
}

struct TrainRunOutput {
  TrainResult result;
  Metrics test_metrics;
  CheckpointMeta meta;
};

// Initialize, train, and persist one model; shared between `train` and
// `reproduce-synthetic`. The caller owns the model so it can keep using the
// trained parameters afterwards.
TrainRunOutput run_training(const RunConfig& cfg, const ItemCatalog& catalog,
                            const std::vector<LearnerSequence>& sequences,
                            const SplitIndices& split, KtModel<float>& model) {
  Rng init_rng(cfg.train.seed);
  if (cfg.backbone.item_repr_mode == ItemReprMode::kBaim) {
    TableMetadata tmeta;
    const StageEmbeddingTable table = load_table(cfg.paths.table, &tmeta);
    const bool holistic_table = tmeta.strategy == to_string(PoolStrategy::kHolistic);
    if (cfg.routing.kind == RoutingStrategy::Kind::kHolistic && !holistic_table) {
      std::cerr << "note: holistic routing expects a holistic-pooled table; "
                << cfg.paths.table << " was built with '" << tmeta.strategy << "'\n";
    }
    if (cfg.routing.kind == RoutingStrategy::Kind::kAdaptive && holistic_table) {
      std::cerr << "note: " << cfg.paths.table
                << " is holistic-pooled (all stage rows identical); adaptive"
                << " routing cannot differentiate stages on it\n";
    }
    model.init_params(init_rng, &table);
  } else {
    if (fs::exists(cfg.paths.table)) {
      std::cerr << "note: static item lookup ignores the stage-embedding table at "
                << cfg.paths.table << "\n";
    }
    model.init_params(init_rng, nullptr);
  }

  TrainRunOutput out;
  out.result = train_model(model, sequences, split.train, split.valid, cfg.train);
  write_epoch_log(cfg.paths.epoch_log, out.result.log);

  out.test_metrics =
      evaluate_model(model, sequences, split.test, cfg.train.batch_size, nullptr);
  json mj = metrics_to_json(out.test_metrics);
  mj["split"] = "test";
  mj["best_epoch"] = out.result.best_epoch;
  mj["valid_auc"] = out.result.best_valid_auc;
  write_text(cfg.paths.metrics, mj.dump(2) + "\n");

  out.meta.config_hash = model.config().config_hash(catalog.item_count);
  out.meta.seed = cfg.train.seed;
  out.meta.epoch = out.result.best_epoch;
  out.meta.repr_mode = to_string(model.config().repr_mode());
  out.meta.backbone_kind = to_string(cfg.backbone.kind);
  out.meta.routing = cfg.routing.str();
  out.meta.valid_auc = out.result.best_valid_auc;
  save_checkpoint(cfg.paths.checkpoint, model.store(), out.meta);
  return out;
}

std::vector<int> all_indices(size_t n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Hash-checked checkpoint load into a model built from the run config.
void load_model_from_checkpoint(const RunConfig& cfg, int item_count,
                                const std::string& path, KtModel<float>& model,
                                CheckpointMeta* meta_out) {
  const std::uint64_t expected = model.config().config_hash(item_count);
  auto [store, meta] = load_checkpoint_checked(path, expected);
  model.load_values(store);
  if (meta_out != nullptr) *meta_out = meta;
}

json gradcheck_report_json(const GradCheckReport& r) {
  json j;
  j["max_rel_err"] = r.max_rel_err;
  j["worst_param"] = r.worst_param;
  j["zero_grad_exact"] = r.zero_grad_exact;
  j["max_dead_numeric"] = r.max_dead_numeric;
  j["dead_experts"] = r.dead_experts;
  j["resample_attempts"] = r.resample_attempts;
  j["min_decision_margin"] = r.min_decision_margin;
  j["min_kink_margin"] = r.min_kink_margin;
  j["param_count"] = r.param_count;
  j["passed"] = r.passed();
  return j;
}

}  // namespace

int cmd_simulate(RunConfig cfg) {
  cfg.resolve_paths();
  cfg.simulator.validate();
  cfg.dumps.validate();

  const SimulatedPopulation pop = simulate_population(cfg.simulator);
  ensure_parent(cfg.paths.catalog);
  save_catalog(cfg.paths.catalog, pop.catalog);
  ensure_parent(cfg.paths.dataset);
  save_sequences(cfg.paths.dataset, pop.sequences);
  ensure_parent(cfg.paths.truth);
  save_truth(cfg.paths.truth, cfg.simulator, pop.truth);

  const std::vector<HiddenStateDump> dumps =
      synth_dumps(pop.catalog, pop.truth.item_profiles, cfg.dumps.layers,
                  cfg.dumps.tokens, cfg.dumps.width, cfg.dumps.seed);
  ensure_dir(cfg.paths.dumps_dir);
  write_dump_set(cfg.paths.dumps_dir, dumps);

  std::int64_t interactions = 0;
  for (const LearnerSequence& s : pop.sequences) interactions += s.length();

  json j;
  j["command"] = "simulate";
  j["learners"] = cfg.simulator.n_learners;
  j["items"] = pop.catalog.item_count;
  j["interactions"] = interactions;
  j["dumps"] = dumps.size();
  j["out"] = cfg.paths.out_dir;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_extract(RunConfig cfg) {
  cfg.resolve_paths();
  cfg.extract.validate();

  const ItemCatalog catalog = load_catalog(cfg.paths.catalog);
  const std::vector<HiddenStateDump> dumps =
      load_dump_set(dump_index_path(cfg), catalog);

  TableMetadata meta;
  const StageEmbeddingTable table =
      build_table(dumps, cfg.extract.target_dim, cfg.extract.strategy, &meta);
  ensure_parent(cfg.paths.table);
  save_table(cfg.paths.table, table, meta);

  double explained = 0.0;
  for (double v : meta.explained_variance) explained += v;

  json j;
  j["command"] = "extract";
  j["items"] = table.item_count;
  j["dim"] = table.dim;
  j["strategy"] = meta.strategy;
  j["pca_components"] = meta.pca_components;
  j["explained_variance_total"] = explained;
  j["table"] = cfg.paths.table;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg) {
  cfg.resolve_paths();
  cfg.validate();

  const ItemCatalog catalog = load_catalog(cfg.paths.catalog);
  const std::vector<LearnerSequence> sequences =
      load_sequences(cfg.paths.dataset, cfg.backbone.max_len, catalog.item_count);
  const SplitIndices split = split_dataset(sequences, cfg.split);

  KtModel<float> model(cfg.model_config(), catalog.item_count);
  const TrainRunOutput out = run_training(cfg, catalog, sequences, split, model);

  json j;
  j["command"] = "train";
  j["mode"] = to_string(cfg.backbone.item_repr_mode);
  j["backbone"] = to_string(cfg.backbone.kind);
  j["routing"] = cfg.routing.str();
  j["epochs_run"] = out.result.epochs_run;
  j["best_epoch"] = out.result.best_epoch;
  j["valid_auc"] = out.result.best_valid_auc;
  j["test_auc"] = out.test_metrics.auc;
  j["test_bce"] = out.test_metrics.bce;
  j["checkpoint"] = cfg.paths.checkpoint;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_eval(RunConfig cfg, const std::string& checkpoint_path,
             const std::string& split_name) {
  cfg.resolve_paths();
  cfg.validate();

  const ItemCatalog catalog = load_catalog(cfg.paths.catalog);
  const std::vector<LearnerSequence> sequences =
      load_sequences(cfg.paths.dataset, cfg.backbone.max_len, catalog.item_count);

  std::vector<int> indices;
  if (split_name == "all") {
    indices = all_indices(sequences.size());
  } else {
    const SplitIndices split = split_dataset(sequences, cfg.split);
    if (split_name == "train") {
      indices = split.train;
    } else if (split_name == "valid") {
      indices = split.valid;
    } else if (split_name == "test") {
      indices = split.test;
    } else {
      throw ValidationError("unknown split '" + split_name +
                            "' (expected train, valid, test or all)");
    }
  }

  const std::string path =
      checkpoint_path.empty() ? cfg.paths.checkpoint : checkpoint_path;
  KtModel<float> model(cfg.model_config(), catalog.item_count);
  CheckpointMeta meta;
  load_model_from_checkpoint(cfg, catalog.item_count, path, model, &meta);

  const Metrics m =
      evaluate_model(model, sequences, indices, cfg.train.batch_size, nullptr);

  json j = metrics_to_json(m);
  j["command"] = "eval";
  j["split"] = split_name;
  j["sequences"] = indices.size();
  j["checkpoint"] = path;
  j["checkpoint_epoch"] = meta.epoch;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_analyze_routing(RunConfig cfg, const std::string& checkpoint_path,
                        std::int64_t learner_id) {
  cfg.resolve_paths();
  cfg.validate();
  if (cfg.backbone.item_repr_mode == ItemReprMode::kStatic) {
    throw ValidationError(
        "routing analysis needs a stage-routing model; the configured mode is "
        "a static item lookup with no routing decisions to report");
  }

  const ItemCatalog catalog = load_catalog(cfg.paths.catalog);
  const std::vector<LearnerSequence> sequences =
      load_sequences(cfg.paths.dataset, cfg.backbone.max_len, catalog.item_count);

  std::vector<int> indices;
  if (learner_id < 0) {
    indices = all_indices(sequences.size());
  } else {
    for (int i = 0; i < static_cast<int>(sequences.size()); ++i) {
      if (sequences[i].learner_id == learner_id) indices.push_back(i);
    }
    if (indices.empty()) {
      throw ValidationError("learner " + std::to_string(learner_id) +
                            " is not present in the dataset");
    }
  }

  // Inspect the checkpoint before the config-hash gate so a static
  // checkpoint is refused with the actual reason, not a hash mismatch.
  const std::string path =
      checkpoint_path.empty() ? cfg.paths.checkpoint : checkpoint_path;
  auto [store, meta] = load_checkpoint(path);
  if (meta.repr_mode != to_string(ItemReprMode::kBaim)) {
    throw ValidationError("checkpoint " + path +
                          " was trained with a static item lookup; routing "
                          "analysis needs a stage-routing model");
  }
  KtModel<float> model(cfg.model_config(), catalog.item_count);
  if (meta.config_hash != model.config().config_hash(catalog.item_count)) {
    throw ValidationError(
        "checkpoint was produced by a different model configuration (hash mismatch)");
  }
  model.load_values(store);

  std::vector<StepRecord> records;
  const Metrics m =
      evaluate_model(model, sequences, indices, cfg.train.batch_size, &records);

  double prob_sum_max_err = 0.0;
  std::ostringstream csv;
  csv << "learner_id,timestep,item_id,response,p0,p1,p2,p3,k_star,prediction\n";
  for (const StepRecord& r : records) {
    double psum = 0.0;
    csv << r.learner_id << "," << r.timestep << "," << r.item_id << ","
        << r.response;
    for (int p = 0; p < kStageCount; ++p) {
      csv << "," << num(r.probs[p]);
      psum += r.probs[p];
    }
    csv << "," << r.selected << "," << num(r.prediction) << "\n";
    prob_sum_max_err = std::max(prob_sum_max_err, std::abs(psum - 1.0));
  }
  csv << "# repeated_attempts=" << m.repeated_attempts << "\n";
  csv << "# stage_shifts=" << m.stage_shifts << "\n";
  csv << "# learners_with_repeats=" << m.learners_with_repeats << "\n";
  csv << "# learners_with_shifts=" << m.learners_with_shifts << "\n";
  write_text(cfg.paths.routing_csv, csv.str());

  json summary;
  summary["command"] = "analyze-routing";
  summary["checkpoint"] = path;
  summary["routing"] = meta.routing;
  summary["learner_id"] = learner_id;
  summary["steps"] = records.size();
  summary["routing_shares"] = m.routing_shares;
  summary["prob_sum_max_err"] = prob_sum_max_err;
  summary["repeated_attempts"] = m.repeated_attempts;
  summary["stage_shifts"] = m.stage_shifts;
  summary["learners_with_repeats"] = m.learners_with_repeats;
  summary["learners_with_shifts"] = m.learners_with_shifts;
  summary["shift_fraction"] =
      m.learners_with_repeats > 0
          ? static_cast<double>(m.learners_with_shifts) / m.learners_with_repeats
          : 0.0;
  write_text(cfg.paths.routing_summary, summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_gradcheck(RunConfig cfg) {
  // Finite differences probe every scalar parameter, so this runs on a
  // deliberately small model; the point is exercising every code path, not
  // the production widths.
  ModelConfig mc;
  mc.router.stage_dim = 7;
  mc.router.model_dim = 6;
  mc.router.context_dim = 5;
  mc.backbone.model_dim = 6;
  mc.backbone.heads = 2;
  mc.backbone.max_len = 16;
  mc.backbone.item_repr_mode = ItemReprMode::kBaim;
  mc.routing = RoutingStrategy::adaptive();
  const int item_count = 6, seq_len = 5, batch_cols = 2;

  mc.backbone.kind = BackboneKind::kRecurrent;
  const GradCheckReport recurrent = grad_check_model(
      mc, item_count, seq_len, batch_cols, cfg.train.seed, cfg.train.lambda_lb);

  mc.backbone.kind = BackboneKind::kAttention;
  const GradCheckReport attention = grad_check_model(
      mc, item_count, seq_len, batch_cols, cfg.train.seed, cfg.train.lambda_lb);

  json j;
  j["command"] = "gradcheck";
  j["recurrent"] = gradcheck_report_json(recurrent);
  j["attention"] = gradcheck_report_json(attention);
  j["passed"] = recurrent.passed() && attention.passed();
  std::cout << j.dump() << "\n";
  if (!recurrent.passed() || !attention.passed()) {
    throw NumericError("gradient check failed; see the report above");
  }
  return 0;
}

int cmd_reproduce_synthetic(RunConfig cfg) {
  cfg.resolve_paths();
  cmd_simulate(cfg);
  cmd_extract(cfg);

  const ItemCatalog catalog = load_catalog(cfg.paths.catalog);
  const std::vector<LearnerSequence> sequences =
      load_sequences(cfg.paths.dataset, cfg.backbone.max_len, catalog.item_count);
  const SplitIndices split = split_dataset(sequences, cfg.split);

  const auto leg_paths = [&cfg](RunConfig& leg, const std::string& name) {
    const fs::path root = fs::path(cfg.paths.out_dir) / name;
    leg.paths.checkpoint = (root / "model.ckpt").string();
    leg.paths.epoch_log = (root / "epochs.jsonl").string();
    leg.paths.metrics = (root / "metrics.json").string();
  };

  RunConfig bcfg = cfg;
  bcfg.backbone.item_repr_mode = ItemReprMode::kBaim;
  leg_paths(bcfg, "baim");
  bcfg.validate();
  KtModel<float> bmodel(bcfg.model_config(), catalog.item_count);
  const TrainRunOutput bout = run_training(bcfg, catalog, sequences, split, bmodel);

  RunConfig scfg = cfg;
  scfg.backbone.item_repr_mode = ItemReprMode::kStatic;
  leg_paths(scfg, "static");
  scfg.validate();
  KtModel<float> smodel(scfg.model_config(), catalog.item_count);
  const TrainRunOutput sout = run_training(scfg, catalog, sequences, split, smodel);

  // Routing behaviour of the trained stage-routing model over the whole
  // population, for the adaptivity report.
  std::vector<StepRecord> records;
  const Metrics routing = evaluate_model(bmodel, sequences, all_indices(sequences.size()),
                                         cfg.train.batch_size, &records);

  const auto leg_json = [](const TrainRunOutput& o) {
    json j;
    j["test_auc"] = o.test_metrics.auc;
    j["test_bce"] = o.test_metrics.bce;
    j["valid_auc"] = o.result.best_valid_auc;
    j["best_epoch"] = o.result.best_epoch;
    j["epochs_run"] = o.result.epochs_run;
    j["routing_shares"] = o.test_metrics.routing_shares;
    return j;
  };

  json report;
  report["seed"] = cfg.train.seed;
  report["baim"] = leg_json(bout);
  report["static"] = leg_json(sout);
  report["auc_gap"] = bout.test_metrics.auc - sout.test_metrics.auc;
  json adapt;
  adapt["routing_shares"] = routing.routing_shares;
  adapt["repeated_attempts"] = routing.repeated_attempts;
  adapt["stage_shifts"] = routing.stage_shifts;
  adapt["learners_with_repeats"] = routing.learners_with_repeats;
  adapt["learners_with_shifts"] = routing.learners_with_shifts;
  adapt["shift_fraction"] =
      routing.learners_with_repeats > 0
          ? static_cast<double>(routing.learners_with_shifts) / routing.learners_with_repeats
          : 0.0;
  report["routing"] = adapt;
  const std::string report_path =
      (fs::path(cfg.paths.out_dir) / "acceptance_report.json").string();
  write_text(report_path, report.dump(2) + "\n");

  json j;
  j["command"] = "reproduce-synthetic";
  j["baim_test_auc"] = bout.test_metrics.auc;
  j["static_test_auc"] = sout.test_metrics.auc;
  j["auc_gap"] = bout.test_metrics.auc - sout.test_metrics.auc;
  j["report"] = report_path;
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace baim
