// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "baim/common.hpp"

namespace baim {

struct Interaction {
  int item_id = 0;
  int response = 0;  // 0 or 1
  int timestep = 0;  // position within the owning sequence, 0-based
};

struct LearnerSequence {
  std::int64_t learner_id = 0;
  std::vector<Interaction> interactions;

  int length() const { return static_cast<int>(interactions.size()); }
};

struct ItemCatalog {
  int item_count = 0;
  std::map<int, std::string> metadata;  // optional free text per item
};

struct FoldSplit {
  int k = 0;
  std::map<std::int64_t, int> assignments;  // learner_id -> fold in [0, k)

  int fold_of(std::int64_t learner_id) const;
};

// Reads the semicolon/comma dataset layout (one line per learner window:
// learner_id;items;responses). Windows longer than max_len are split into
// consecutive windows of at most max_len interactions, order preserved.
// When item_count >= 0, item ids are validated against the catalog size.
std::vector<LearnerSequence> load_sequences(const std::string& path,
                                            int max_len, int item_count = -1);

// Inverse of load_sequences for already-windowed data; one line per sequence.
void save_sequences(const std::string& path,
                    const std::vector<LearnerSequence>& sequences);

// Splits interactions of one learner into windows of at most max_len.
std::vector<LearnerSequence> window_sequence(const LearnerSequence& seq,
                                             int max_len);

// Learner-level k-fold partition, deterministic given seed.
FoldSplit make_folds(const std::vector<LearnerSequence>& sequences, int k,
                     std::uint64_t seed);

ItemCatalog load_catalog(const std::string& path);
void save_catalog(const std::string& path, const ItemCatalog& catalog);

}  // namespace baim
