// SPDX-License-Identifier: Apache-2.0
#include "baim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <utility>

namespace baim {

double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("auc: score/label length mismatch");
  }
  std::int64_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++n_pos;
    } else if (labels[i] == 0) {
      ++n_neg;
    } else {
      throw ValidationError("auc: labels must be 0 or 1");
    }
    if (!std::isfinite(scores[i])) throw ValidationError("auc: non-finite score");
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("auc undefined: labels contain a single class");
  }

  // Average ranks over ties, then the Mann-Whitney U statistic of the
  // positive group.
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] == 1) rank_sum_pos += rank[k];
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double mean_bce(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("bce: score/label length mismatch");
  }
  if (scores.empty()) throw ValidationError("bce: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const double y = std::clamp(scores[i], 1e-7, 1.0 - 1e-7);
    acc += labels[i] == 1 ? -std::log(y) : -std::log(1.0 - y);
  }
  return acc / static_cast<double>(scores.size());
}

void compute_routing_stats(const std::vector<StepRecord>& records, Metrics& out) {
  out.has_routing = false;
  out.routing_shares.fill(0.0);
  out.repeated_attempts = 0;
  out.stage_shifts = 0;
  out.learners_with_repeats = 0;
  out.learners_with_shifts = 0;
  std::int64_t routed = 0;
  for (const StepRecord& r : records) {
    if (r.selected >= 0 && r.selected < kStageCount) {
      out.routing_shares[r.selected] += 1.0;
      ++routed;
    }
  }
  if (routed > 0) {
    out.has_routing = true;
    for (double& s : out.routing_shares) s /= static_cast<double>(routed);
  }

  // Group by learner, walk each learner's steps in time order and compare
  // every repeat attempt's stage with the previous attempt on that item.
  std::map<int, std::vector<const StepRecord*>> by_learner;
  for (const StepRecord& r : records) by_learner[r.learner_id].push_back(&r);
  for (auto& [learner, steps] : by_learner) {
    std::stable_sort(steps.begin(), steps.end(),
                     [](const StepRecord* a, const StepRecord* b) {
                       return a->timestep < b->timestep;
                     });
    std::map<int, int> last_stage;  // item -> stage of most recent attempt
    bool has_repeat = false, has_shift = false;
    for (const StepRecord* r : steps) {
      auto it = last_stage.find(r->item_id);
      if (it != last_stage.end()) {
        has_repeat = true;
        ++out.repeated_attempts;
        if (r->selected != it->second) {
          has_shift = true;
          ++out.stage_shifts;
        }
      }
      last_stage[r->item_id] = r->selected;
    }
    if (has_repeat) ++out.learners_with_repeats;
    if (has_shift) ++out.learners_with_shifts;
  }
}

}  // namespace baim
