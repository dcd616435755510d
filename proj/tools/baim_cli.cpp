// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "baim/commands.hpp"

namespace {

// Output root resolution order: --out, config file, $BAIM_OUT, ./baim-out.
baim::RunConfig make_config(const std::string& config_path, const std::string& out_flag) {
  baim::RunConfig cfg = config_path.empty()
                            ? baim::RunConfig::synthetic_default()
                            : baim::RunConfig::from_json_file(config_path);
  if (!out_flag.empty()) cfg.paths.out_dir = out_flag;
  if (cfg.paths.out_dir.empty()) {
    const char* env = std::getenv(baim::kOutRootEnvVar);
    cfg.paths.out_dir = (env != nullptr && *env != '\0') ? env : "baim-out";
  }
  return cfg;
}

bool any_given(const std::vector<CLI::Option*>& opts) {
  for (const CLI::Option* o : opts) {
    if (o != nullptr && o->count() > 0) return true;
  }
  return false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"behavior-aware item models for knowledge tracing"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0, sim_seed = 0;
  std::string mode_s, backbone_s, routing_s, strategy_s, checkpoint_path;
  std::string split_name = "test";
  double lambda = 0.0;
  int target_dim = 0;
  std::int64_t learner = -1;

  std::vector<CLI::Option*> seed_opts, sim_seed_opts, lambda_opts, dim_opts;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration file");
    sub->add_option("--out", out_dir,
                    "output root directory (overrides config and $BAIM_OUT)");
    seed_opts.push_back(
        sub->add_option("--seed", seed, "training seed override"));
  };
  const auto add_model = [&](CLI::App* sub) {
    sub->add_option("--mode", mode_s, "item representation: baim or static");
    sub->add_option("--backbone", backbone_s,
                    "sequence backbone: recurrent or attention");
    sub->add_option("--routing", routing_s,
                    "adaptive, holistic, or fixed-stage-0..3");
  };

  CLI::App* sim = app.add_subcommand(
      "simulate", "generate the synthetic population, dataset and solver dumps");
  add_common(sim);
  sim_seed_opts.push_back(
      sim->add_option("--sim-seed", sim_seed, "population seed override"));

  CLI::App* ext = app.add_subcommand(
      "extract", "build the stage-embedding table from the dump set");
  add_common(ext);
  ext->add_option("--strategy", strategy_s,
                  "layer pooling: global, final_layer or holistic");
  dim_opts.push_back(
      ext->add_option("--dim", target_dim, "embedding width after reduction"));

  CLI::App* train = app.add_subcommand("train", "train a knowledge-tracing model");
  add_common(train);
  add_model(train);
  lambda_opts.push_back(train->add_option(
      "--lambda", lambda, "load-balance loss weight"));

  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(eval);
  add_model(eval);
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file to load");
  eval->add_option("--split", split_name, "train, valid, test or all");

  CLI::App* analyze = app.add_subcommand(
      "analyze-routing", "dump per-step stage decisions and adaptivity stats");
  add_common(analyze);
  add_model(analyze);
  analyze->add_option("--checkpoint", checkpoint_path, "checkpoint file to load");
  analyze->add_option("--learner", learner,
                      "restrict to one learner id (default: all learners)");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "compare reverse-mode gradients against finite differences");
  add_common(gradcheck);
  lambda_opts.push_back(gradcheck->add_option(
      "--lambda", lambda, "load-balance loss weight"));

  CLI::App* repro = app.add_subcommand(
      "reproduce-synthetic",
      "simulate, extract, train both item representations, write the comparison report");
  add_common(repro);
  sim_seed_opts.push_back(
      repro->add_option("--sim-seed", sim_seed, "population seed override"));
  lambda_opts.push_back(repro->add_option(
      "--lambda", lambda, "load-balance loss weight"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    baim::RunConfig cfg = make_config(config_path, out_dir);
    if (any_given(seed_opts)) cfg.train.seed = seed;
    if (any_given(sim_seed_opts)) cfg.simulator.seed = sim_seed;
    if (any_given(lambda_opts)) cfg.train.lambda_lb = lambda;
    if (any_given(dim_opts)) cfg.extract.target_dim = target_dim;
    if (!strategy_s.empty()) cfg.extract.strategy = baim::pool_strategy_from_string(strategy_s);
    if (!mode_s.empty()) {
      cfg.backbone.item_repr_mode = baim::item_repr_mode_from_string(mode_s);
    }
    if (!backbone_s.empty()) {
      cfg.backbone.kind = baim::backbone_kind_from_string(backbone_s);
    }
    if (!routing_s.empty()) cfg.routing = baim::RoutingStrategy::parse(routing_s);

    if (app.got_subcommand(sim)) return baim::cmd_simulate(cfg);
    if (app.got_subcommand(ext)) return baim::cmd_extract(cfg);
    if (app.got_subcommand(train)) return baim::cmd_train(cfg);
    if (app.got_subcommand(eval)) return baim::cmd_eval(cfg, checkpoint_path, split_name);
    if (app.got_subcommand(analyze)) {
      return baim::cmd_analyze_routing(cfg, checkpoint_path, learner);
    }
    if (app.got_subcommand(gradcheck)) return baim::cmd_gradcheck(cfg);
    if (app.got_subcommand(repro)) return baim::cmd_reproduce_synthetic(cfg);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const baim::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const baim::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const baim::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
