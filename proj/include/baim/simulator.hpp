// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "baim/data.hpp"

namespace baim {

struct SimulatorConfig {
  int n_learners = 200;
  int n_items = 50;
  int seq_len = 50;
  int stage_count = kStageCount;  // fixed
  double item_stage_profile_scale = 1.0;
  double learner_mastery_init_std = 1.0;
  double mastery_init_mean = 0.0;  // global offset, mainly for diagnostics
  double learning_rate_per_attempt = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
};

// Ground truth behind a simulated population, kept for diagnostics and for
// seeding the synthetic hidden-state dumps with stage-dependent structure.
struct SimulatorTruth {
  // One profile per item; entry p is the weight of stage p. Concentrated on
  // the item's dominant stage.
  std::vector<std::array<double, kStageCount>> item_profiles;
  std::vector<int> dominant_stage;                    // per item
  std::vector<std::array<double, kStageCount>> initial_mastery;  // per learner
};

struct SimulatedPopulation {
  ItemCatalog catalog;
  std::vector<LearnerSequence> sequences;
  SimulatorTruth truth;
};

// Samples a population where each response is Bernoulli with probability
// sigmoid(mastery . profile). After every attempt the learner's mastery on
// the attempted item's dominant stage grows by learning_rate_per_attempt, so
// correctness is history- and stage-dependent. Deterministic given the seed.
SimulatedPopulation simulate_population(const SimulatorConfig& config);

void save_truth(const std::string& path, const SimulatorConfig& config,
                const SimulatorTruth& truth);
SimulatorTruth load_truth(const std::string& path);

}  // namespace baim
