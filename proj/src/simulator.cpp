// SPDX-License-Identifier: Apache-2.0
#include "baim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace baim {

void SimulatorConfig::validate() const {
  if (n_learners <= 0) throw ValidationError("n_learners must be positive");
  if (n_items <= 0) throw ValidationError("n_items must be positive");
  if (seq_len < 1) throw ValidationError("seq_len must be >= 1");
  if (stage_count != kStageCount) {
    throw ValidationError("stage_count is fixed at 4");
  }
  if (!std::isfinite(item_stage_profile_scale) ||
      !std::isfinite(learner_mastery_init_std) ||
      !std::isfinite(learning_rate_per_attempt) ||
      !std::isfinite(mastery_init_mean)) {
    throw ValidationError("simulator scales must be finite");
  }
  if (learner_mastery_init_std < 0) {
    throw ValidationError("learner_mastery_init_std must be >= 0");
  }
}

SimulatedPopulation simulate_population(const SimulatorConfig& config) {
  config.validate();
  Rng rng(config.seed);

  SimulatedPopulation pop;
  pop.catalog.item_count = config.n_items;

  // Balanced dominant-stage assignment, shuffled so item id carries no
  // positional stage pattern.
  std::vector<int> stages(config.n_items);
  for (int i = 0; i < config.n_items; ++i) stages[i] = i % kStageCount;
  std::shuffle(stages.begin(), stages.end(), rng.engine());

  pop.truth.dominant_stage = stages;
  pop.truth.item_profiles.resize(config.n_items);
  for (int i = 0; i < config.n_items; ++i) {
    auto& profile = pop.truth.item_profiles[i];
    profile.fill(0.0);
    profile[stages[i]] = config.item_stage_profile_scale;
  }

  // Per-learner stage deviations are centered so the initial signal lives in
  // the differences between stages rather than in a global ability offset a
  // stage-blind model could absorb; the configured mean is preserved exactly.
  pop.truth.initial_mastery.resize(config.n_learners);
  for (int l = 0; l < config.n_learners; ++l) {
    std::array<double, kStageCount> dev;
    double dev_mean = 0.0;
    for (int p = 0; p < kStageCount; ++p) {
      dev[p] = rng.normal(0.0, config.learner_mastery_init_std);
      dev_mean += dev[p] / kStageCount;
    }
    for (int p = 0; p < kStageCount; ++p) {
      pop.truth.initial_mastery[l][p] =
          config.mastery_init_mean + dev[p] - dev_mean;
    }
  }

  for (int l = 0; l < config.n_learners; ++l) {
    LearnerSequence seq;
    seq.learner_id = l;
    std::array<double, kStageCount> mastery = pop.truth.initial_mastery[l];
    for (int t = 0; t < config.seq_len; ++t) {
      int item = static_cast<int>(rng.index(config.n_items));
      const auto& profile = pop.truth.item_profiles[item];
      double dot = 0.0;
      for (int p = 0; p < kStageCount; ++p) dot += mastery[p] * profile[p];
      double prob = 1.0 / (1.0 + std::exp(-dot));
      Interaction it;
      it.item_id = item;
      it.response = rng.bernoulli(prob) ? 1 : 0;
      it.timestep = t;
      seq.interactions.push_back(it);
      mastery[pop.truth.dominant_stage[item]] +=
          config.learning_rate_per_attempt;
    }
    pop.sequences.push_back(std::move(seq));
  }
  return pop;
}

void save_truth(const std::string& path, const SimulatorConfig& config,
                const SimulatorTruth& truth) {
  nlohmann::json j;
  j["config"] = {{"n_learners", config.n_learners},
                 {"n_items", config.n_items},
                 {"seq_len", config.seq_len},
                 {"item_stage_profile_scale", config.item_stage_profile_scale},
                 {"learner_mastery_init_std", config.learner_mastery_init_std},
                 {"mastery_init_mean", config.mastery_init_mean},
                 {"learning_rate_per_attempt", config.learning_rate_per_attempt},
                 {"seed", config.seed}};
  j["dominant_stage"] = truth.dominant_stage;
  j["item_profiles"] = nlohmann::json::array();
  for (const auto& p : truth.item_profiles) {
    j["item_profiles"].push_back(std::vector<double>(p.begin(), p.end()));
  }
  j["initial_mastery"] = nlohmann::json::array();
  for (const auto& m : truth.initial_mastery) {
    j["initial_mastery"].push_back(std::vector<double>(m.begin(), m.end()));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write truth sidecar: " + path);
  out << j.dump(2) << '\n';
}

SimulatorTruth load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open truth sidecar: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("truth sidecar parse error: ") + e.what());
  }
  SimulatorTruth truth;
  truth.dominant_stage = j.at("dominant_stage").get<std::vector<int>>();
  for (const auto& row : j.at("item_profiles")) {
    auto v = row.get<std::vector<double>>();
    if (v.size() != kStageCount) {
      throw ValidationError("truth sidecar: profile width mismatch");
    }
    std::array<double, kStageCount> a;
    std::copy(v.begin(), v.end(), a.begin());
    truth.item_profiles.push_back(a);
  }
  for (const auto& row : j.at("initial_mastery")) {
    auto v = row.get<std::vector<double>>();
    std::array<double, kStageCount> a;
    std::copy(v.begin(), v.end(), a.begin());
    truth.initial_mastery.push_back(a);
  }
  return truth;
}

}  // namespace baim
