// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "baim/common.hpp"

namespace baim {

// Mean-centered PCA with a deterministic sign convention so repeated fits
// on identical data produce identical models.
struct PcaModel {
  VecD mean;            // width D
  MatD components;      // k x D, rows orthonormal
  VecD explained_variance;  // length k, non-increasing
  int target_dim = 0;   // requested output width; k <= target_dim
  int effective_rank = 0;   // components with variance above tolerance

  int k() const { return static_cast<int>(components.rows()); }
  int input_dim() const { return static_cast<int>(components.cols()); }
  bool has_zero_variance() const { return effective_rank < k(); }
};

// Covariance eigendecomposition with N-1 denominator. Keeps
// k = min(target_dim, D, N-1) components sorted by decreasing variance;
// each component's largest-magnitude entry is made positive.
PcaModel fit_pca(const MatD& vectors, int target_dim);

// components * (v - mean), zero-padded to target_dim when k < target_dim.
VecD apply_pca(const PcaModel& model, const VecD& v);

}  // namespace baim
