// SPDX-License-Identifier: Apache-2.0
#include "hmt/recurrence.hpp"

#include <cmath>
#include <ostream>

#include "hmt/error.hpp"
#include "hmt/ops.hpp"

namespace hmt {

UnrollResult bptt_unroll(const HmtModel& model, std::span<const Token> window, std::size_t unroll,
                         HmtState* carry, std::span<const std::size_t> targets) {
  const std::size_t L = model.config.segment_len;
  if (unroll == 0) raise(ErrorKind::kContract, "bptt_unroll: unroll must be at least 1");
  const std::size_t available = (window.size() + L - 1) / L;
  if (available < unroll) {
    raise(ErrorKind::kData, "bptt_unroll: stream supplies " + std::to_string(available) + " segment(s), need " +
                                std::to_string(unroll));
  }

  HmtState state = carry ? *carry : HmtState::initial(model);
  if (carry) state.detach();

  const std::size_t covered = std::min(unroll * L, window.size());
  std::vector<bool> scored(window.size(), targets.empty());
  for (std::size_t p : targets) {
    if (p == 0 || p >= window.size()) {
      raise(ErrorKind::kIndex, "bptt_unroll: target position " + std::to_string(p) + " outside 1.." +
                                   std::to_string(window.size() - 1));
    }
    scored[p] = true;
  }
  UnrollResult result;
  Tensor total;
  for (std::size_t s = 0; s < unroll; ++s) {
    const std::size_t begin = s * L;
    const std::size_t end = std::min(begin + L, covered);
    std::vector<std::int32_t> targets(end - begin, kIgnoreTarget);
    for (std::size_t i = begin; i < end; ++i) {
      if (i + 1 < window.size() && scored[i + 1]) {
        targets[i - begin] = window[i + 1];
        ++result.scored;
      }
    }
    StepResult step = hmt_step(model, state, window.subspan(begin, end - begin));
    Tensor nll = nll_sum(step.logits, targets);
    total = total.defined() ? add(total, nll) : nll;
    result.steps.push_back(std::move(step));
  }
  if (result.scored == 0) raise(ErrorKind::kData, "bptt_unroll: window has no scored positions");
  result.nll_sum = total.item();
  result.loss = div_scalar(total, static_cast<double>(result.scored));
  if (carry) *carry = std::move(state);
  return result;
}

double lr_at(std::uint64_t step, const TrainConfig& config) {
  const auto periods = static_cast<double>(step / config.lr_decay_every);
  return config.lr * std::pow(config.lr_decay, periods);
}

WindowSampler corpus_windows(std::shared_ptr<const std::vector<Token>> corpus, std::size_t segment_len,
                             std::size_t unroll) {
  if (corpus->size() < 2 * segment_len) {
    raise(ErrorKind::kData, "corpus of " + std::to_string(corpus->size()) + " tokens is shorter than two segments (" +
                                std::to_string(2 * segment_len) + " tokens)");
  }
  const std::size_t want = unroll * segment_len + 1;
  return [corpus, want](Rng& rng) {
    const std::size_t len = std::min(want, corpus->size());
    const std::size_t offset = rng.below(corpus->size() - len + 1);
    return TrainWindow{std::vector<Token>(corpus->begin() + offset, corpus->begin() + offset + len), {}};
  };
}

void write_log_header(std::ostream& out) { out << "step,loss,ppl,lr,grad_norm\n"; }

void write_log_record(std::ostream& out, const StepRecord& r) {
  out << r.step << ',' << r.loss << ',' << r.ppl << ',' << r.lr << ',' << r.grad_norm << '\n';
}

Trainer::Trainer(HmtModel model, TrainConfig config, WindowSampler sampler)
    : model_(std::move(model)),
      config_(config),
      sampler_(std::move(sampler)),
      rng_(derive_seed(config.seed, SeedOffsets::kWindows)) {
  config_.validate();
}

StepRecord Trainer::step() {
  const ParamList params = trainable();
  const double lr = lr_at(steps_done_, config_);
  Tensor total;
  for (std::size_t b = 0; b < config_.batch; ++b) {
    const TrainWindow window = sampler_(rng_);
    const std::size_t segments = (window.tokens.size() + model_.config.segment_len - 1) / model_.config.segment_len;
    UnrollResult r = bptt_unroll(model_, window.tokens, std::min(config_.unroll, segments), nullptr, window.targets);
    total = total.defined() ? add(total, r.loss) : r.loss;
  }
  Tensor loss = config_.batch == 1 ? total : div_scalar(total, static_cast<double>(config_.batch));
  loss.backward();
  const double norm = clip_grad_norm(params, config_.clip_norm);
  if (!std::isfinite(norm)) raise(ErrorKind::kStability, "training: non-finite gradient norm");
  adam_step(params, optimizer_, lr);
  ++steps_done_;
  StepRecord record;
  record.step = steps_done_;
  record.loss = loss.item();
  record.ppl = std::exp(record.loss);
  record.lr = lr;
  record.grad_norm = norm;
  return record;
}

std::vector<StepRecord> Trainer::run(std::size_t steps, std::ostream* log) {
  std::vector<StepRecord> out;
  out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    out.push_back(step());
    if (log) write_log_record(*log, out.back());
  }
  return out;
}

HmtConfig stage_hmt_config(const RunConfig& config) {
  HmtConfig h = config.hmt;
  h.recall = config.train.stage == 2;
  return h;
}

}  // namespace hmt
