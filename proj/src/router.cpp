// SPDX-License-Identifier: Apache-2.0
#include "baim/router.hpp"

namespace baim {

std::pair<std::array<double, kStageCount>, double> load_balance_stats(
    const std::vector<RoutingTraceEntry>& entries, const std::vector<std::uint8_t>* valid) {
  if (valid != nullptr && valid->size() != entries.size()) {
    throw ValidationError("validity mask length does not match entry count");
  }
  std::array<double, kStageCount> pbar{};
  std::int64_t n = 0;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (valid != nullptr && (*valid)[i] == 0) continue;
    for (int j = 0; j < kStageCount; ++j) pbar[j] += entries[i].probs[j];
    ++n;
  }
  if (n == 0) {
    throw ValidationError("load_balance_stats requires at least one valid entry");
  }
  double loss = 0.0;
  for (int j = 0; j < kStageCount; ++j) {
    pbar[j] /= static_cast<double>(n);
    const double d = pbar[j] - 1.0 / kStageCount;
    loss += d * d;
  }
  return {pbar, loss};
}

}  // namespace baim
