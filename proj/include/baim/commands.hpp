// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "baim/config.hpp"

namespace baim {

// Command entry points. Each validates its inputs, does the work, writes
// its artifacts under the configured paths, prints a one-line JSON summary
// to stdout, and returns 0; failures surface as the shared exception types
// which the CLI maps to exit codes (validation 2, io 3, numeric 4).

int cmd_simulate(RunConfig cfg);
int cmd_extract(RunConfig cfg);
int cmd_train(RunConfig cfg);
int cmd_eval(RunConfig cfg, const std::string& checkpoint_path, const std::string& split_name);
int cmd_analyze_routing(RunConfig cfg, const std::string& checkpoint_path,
                        std::int64_t learner_id);  // learner_id < 0 -> all learners
int cmd_gradcheck(RunConfig cfg);

// simulate -> extract -> train (adaptive) -> train (static) -> compare.
// Writes acceptance_report.json under the output root.
int cmd_reproduce_synthetic(RunConfig cfg);

}  // namespace baim
