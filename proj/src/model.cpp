// SPDX-License-Identifier: Apache-2.0
#include "baim/model.hpp"

#include <algorithm>

#include "json.hpp"

namespace baim {

std::string ModelConfig::canonical_string(int item_count) const {
  nlohmann::json j;
  j["items"] = item_count;
  j["repr_mode"] = to_string(repr_mode());
  j["routing"] = routing.str();
  j["backbone"]["kind"] = to_string(backbone.kind);
  j["backbone"]["model_dim"] = backbone.model_dim;
  if (backbone.kind == BackboneKind::kAttention) {
    j["backbone"]["heads"] = backbone.heads;
    j["backbone"]["layers"] = backbone.attention_layers;
    j["backbone"]["max_len"] = backbone.max_len;
  }
  if (repr_mode() == ItemReprMode::kBaim) {
    j["router"]["stage_dim"] = router.stage_dim;
    j["router"]["model_dim"] = router.model_dim;
    j["router"]["context_dim"] = router.context_dim;
    j["router"]["dropout"] = router.dropout_rate;
    j["router"]["noise_std"] = router.noise_std;
    j["router"]["scale_by_gate_prob"] = router.scale_by_gate_prob;
  }
  return j.dump();
}

std::vector<Batch> make_batches(const std::vector<LearnerSequence>& sequences,
                                const std::vector<int>& order, int batch_size) {
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  for (int idx : order) {
    if (idx < 0 || idx >= static_cast<int>(sequences.size())) {
      throw ValidationError("batch order index out of range");
    }
    if (sequences[idx].interactions.empty()) {
      throw ValidationError("cannot batch an empty sequence");
    }
  }
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    const int b = static_cast<int>(std::min<size_t>(batch_size, order.size() - start));
    int max_t = 0;
    for (int j = 0; j < b; ++j) {
      max_t = std::max(max_t,
                       static_cast<int>(sequences[order[start + j]].interactions.size()));
    }
    Batch batch;
    batch.items.setZero(max_t, b);
    batch.responses.setZero(max_t, b);
    batch.active.setZero(max_t, b);
    batch.learner_ids.resize(b);
    for (int j = 0; j < b; ++j) {
      const LearnerSequence& seq = sequences[order[start + j]];
      batch.learner_ids[j] = seq.learner_id;
      for (size_t t = 0; t < seq.interactions.size(); ++t) {
        batch.items(static_cast<int>(t), j) = seq.interactions[t].item_id;
        batch.responses(static_cast<int>(t), j) = seq.interactions[t].response;
        batch.active(static_cast<int>(t), j) = 1;
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace baim
