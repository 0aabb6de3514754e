// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmt/config.hpp"
#include "hmt/optim.hpp"
#include "hmt/recurrence.hpp"
#include "hmt/rng.hpp"

namespace hmt {

/// Binary layout, all integers little-endian:
///
///   "HMT1"  u32 version
///   u32 config length, config text (key = value lines)
///   u32 tensor count, then per tensor:
///     u16 name length, name, u8 rank, rank x u32 dims, f64 payload
///   u64 x 4 RNG state, u64 training step, u64 optimizer step
///
/// Adam moments are stored as tensors named `<param>.m1` and `<param>.m2`.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  RunConfig config;
  ParamList params;
  AdamState optimizer;
  Rng::State rng{};
  std::uint64_t step = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Format errors report the byte offset; nothing is returned on failure.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of a trainer (its trainable parameters, moments, RNG, step).
Checkpoint capture(const RunConfig& config, const Trainer& trainer);

/// Builds a model for `hmt` using the checkpoint's backbone, copying every
/// stored parameter. Prompt parameters the checkpoint lacks (recall
/// parameters after a stage-1 run) are freshly initialized from
/// `fresh_seed`. Backbone shape mismatches against `expected` are a config
/// error listing every differing field.
HmtModel model_from_checkpoint(const Checkpoint& checkpoint, const BackboneConfig& expected, const HmtConfig& hmt,
                               std::uint64_t fresh_seed);

/// Trainer continuing exactly where the checkpoint stopped.
Trainer resume_trainer(const Checkpoint& checkpoint, WindowSampler sampler);

}  // namespace hmt
