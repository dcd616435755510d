// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "baim/model.hpp"

namespace baim {

struct GradCheckReport {
  double max_rel_err = 0.0;           // over all parameters
  std::string worst_param;
  bool zero_grad_exact = true;        // never-selected experts: analytic grads all 0.0
  double max_dead_numeric = 0.0;      // largest |finite-difference| over those experts
  std::vector<int> dead_experts;      // expert indices never selected in the plan
  int resample_attempts = 0;          // seeds tried to avoid decision boundaries
  double min_decision_margin = 0.0;   // smallest top-2 logit gap in the checked pass
  double min_kink_margin = 0.0;       // smallest relu/clamp boundary distance
  std::int64_t param_count = 0;

  bool passed(double tol = 1e-4) const {
    return max_rel_err < tol && zero_grad_exact && max_dead_numeric < 1e-8;
  }
};

// Compare reverse-mode gradients of the full training loss against central
// finite differences in 64-bit, with routing decisions recorded once and
// replayed for every probe (the loss is smooth inside a fixed routing
// region) and dropout/noise reproduced by re-seeding the stream. Seeds are
// re-drawn if a gate decision sits closer than `margin_floor` to a tie, if
// any relu/clamp input sits within 20 * fd_step of its kink (a probe would
// step across it and the one-sided slopes disagree), or if every expert
// happens to be selected (the dead-path assertion needs at least one idle
// expert).
GradCheckReport grad_check_model(const ModelConfig& cfg, int item_count, int seq_len,
                                 int batch_cols, std::uint64_t seed, double lambda_lb,
                                 double fd_step = 1e-4, double margin_floor = 1e-6);

// Sanity oracle: analytic vs numeric gradient of f(w) = sum w_ij^2.
double grad_check_quadratic(double fd_step = 1e-4);

}  // namespace baim
