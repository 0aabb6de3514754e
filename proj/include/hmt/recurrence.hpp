// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hmt/config.hpp"
#include "hmt/memory.hpp"
#include "hmt/optim.hpp"
#include "hmt/rng.hpp"

namespace hmt {

struct UnrollResult {
  Tensor loss;             // total NLL / scored positions, differentiable
  double nll_sum = 0.0;
  std::size_t scored = 0;
  std::vector<StepResult> steps;
};

/// Truncated BPTT over the first `unroll` segments of `window`. Position i
/// is scored against window[i + 1] when that token exists, so the last
/// token of one segment predicts the first token of the next.
///
/// `carry` (optional) supplies the incoming state and receives the outgoing
/// one. Everything it holds on entry is detached: history before the window
/// is a constant.
///
/// `targets`, when non-empty, restricts scoring to those window positions
/// (position p scores the prediction of window[p]).
UnrollResult bptt_unroll(const HmtModel& model, std::span<const Token> window, std::size_t unroll,
                         HmtState* carry = nullptr, std::span<const std::size_t> targets = {});

/// lr0 · decay^floor(step / decay_every).
double lr_at(std::uint64_t step, const TrainConfig& config);

struct TrainWindow {
  std::vector<Token> tokens;
  std::vector<std::size_t> targets;  // empty: every position is scored
};

/// Draws one training window (T·L + 1 tokens) per call.
using WindowSampler = std::function<TrainWindow(Rng&)>;

/// Contiguous windows at uniformly random offsets of `corpus`. Needs at
/// least two segments of data.
WindowSampler corpus_windows(std::shared_ptr<const std::vector<Token>> corpus, std::size_t segment_len,
                             std::size_t unroll);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  double loss = 0.0;
  double ppl = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

/// `step,loss,ppl,lr,grad_norm`
void write_log_header(std::ostream& out);
void write_log_record(std::ostream& out, const StepRecord& record);

/// One training run: model, Adam moments, window RNG and step counter.
class Trainer {
 public:
  Trainer(HmtModel model, TrainConfig config, WindowSampler sampler);

  StepRecord step();
  std::vector<StepRecord> run(std::size_t steps, std::ostream* log = nullptr);

  const HmtModel& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  const AdamState& optimizer() const { return optimizer_; }
  AdamState& optimizer() { return optimizer_; }
  const Rng& rng() const { return rng_; }
  Rng& rng() { return rng_; }
  std::uint64_t steps_done() const { return steps_done_; }
  void set_steps_done(std::uint64_t n) { steps_done_ = n; }
  ParamList trainable() const { return model_.parameters(); }

 private:
  HmtModel model_;
  TrainConfig config_;
  WindowSampler sampler_;
  AdamState optimizer_;
  Rng rng_;
  std::uint64_t steps_done_ = 0;
};

/// Model settings for a training stage: stage 1 turns recall off, stage 2
/// turns it on.
HmtConfig stage_hmt_config(const RunConfig& config);

}  // namespace hmt
