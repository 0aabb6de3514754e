// SPDX-License-Identifier: Apache-2.0
#include "hmt/training.hpp"

#include <ostream>

namespace hmt {

Trainer make_stage_trainer(const RunConfig& config, WindowSampler sampler, const Checkpoint* from) {
  config.validate();
  const HmtConfig hmt = stage_hmt_config(config);
  HmtModel model = from ? model_from_checkpoint(*from, config.backbone, hmt,
                                                derive_seed(config.train.seed, SeedOffsets::kStage2Init))
                        : HmtModel::create(config.backbone, hmt, derive_seed(config.train.seed, SeedOffsets::kInit));
  return Trainer(std::move(model), config.train, std::move(sampler));
}

StageResult train_stage(const RunConfig& config, WindowSampler sampler, const Checkpoint* from, std::ostream* log) {
  Trainer trainer = make_stage_trainer(config, std::move(sampler), from);
  StageResult result;
  if (log) write_log_header(*log);
  result.log = trainer.run(config.train.steps, log);
  result.checkpoint = capture(config, trainer);
  return result;
}

WindowSampler planted_recall_windows(PlantedRecallSpec spec) {
  return [spec](Rng& rng) mutable {
    spec.seed = rng.next_u64();
    PlantedRecall sample = gen_planted_recall(spec);
    return TrainWindow{std::move(sample.stream), std::move(sample.query_positions)};
  };
}

}  // namespace hmt
