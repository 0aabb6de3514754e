// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <memory>
#include <vector>

#include "hmt/checkpoint.hpp"
#include "hmt/config.hpp"
#include "hmt/datagen.hpp"
#include "hmt/recurrence.hpp"

namespace hmt {

/// Trainer for `config.train.stage`. Without `from` the model is freshly
/// initialized; with it, stored parameters are loaded and any recall
/// parameters the checkpoint lacks start fresh. Optimizer moments and the
/// lr schedule start over in either case.
Trainer make_stage_trainer(const RunConfig& config, WindowSampler sampler, const Checkpoint* from = nullptr);

struct StageResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
};

/// Runs `config.train.steps` steps and captures the final state. Log
/// records are also streamed to `log` when given.
StageResult train_stage(const RunConfig& config, WindowSampler sampler, const Checkpoint* from = nullptr,
                        std::ostream* log = nullptr);

/// Fresh planted-recall sample per draw; only the answer position is scored.
WindowSampler planted_recall_windows(PlantedRecallSpec spec);

}  // namespace hmt
