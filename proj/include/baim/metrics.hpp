// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "baim/common.hpp"

namespace baim {

// One evaluated interaction, in learner order then time order. The routing
// fields are meaningful only for models with a stage router.
struct StepRecord {
  int learner_id = -1;
  int timestep = -1;
  int item_id = -1;
  int response = -1;
  std::array<float, kStageCount> probs{};
  int selected = -1;
  double prediction = 0.0;
};

struct Metrics {
  double auc = 0.0;
  double bce = 0.0;
  bool has_routing = false;
  std::array<double, kStageCount> routing_shares{};  // fraction of steps per stage
  std::int64_t repeated_attempts = 0;  // attempts on an item the learner saw before
  std::int64_t stage_shifts = 0;       // repeats whose stage differs from the previous attempt
  std::int64_t learners_with_repeats = 0;
  std::int64_t learners_with_shifts = 0;
};

// Area under the ROC curve via the rank-sum formulation; ties contribute
// half. Throws on single-class input rather than defaulting to 0.5.
double auc_score(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean binary cross-entropy with predictions clipped into
// [1e-7, 1 - 1e-7] for stability.
double mean_bce(const std::vector<double>& scores, const std::vector<int>& labels);

// Routing-share and repeated-attempt statistics over evaluated steps.
// A "repeat" is any attempt on an item its learner attempted earlier; it
// counts as shifted when its selected stage differs from that learner's
// immediately preceding attempt on the same item.
void compute_routing_stats(const std::vector<StepRecord>& records, Metrics& out);

}  // namespace baim
