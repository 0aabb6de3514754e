// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "hmt/backbone.hpp"
#include "hmt/memory.hpp"

namespace hmt {

struct TrainConfig {
  int stage = 1;
  std::size_t unroll = 2;
  double lr = 1e-5;
  double lr_decay = 0.7;
  std::size_t lr_decay_every = 100;
  std::size_t steps = 200;
  std::size_t batch = 1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fixed offsets for sub-seeds; every random choice derives from `seed`.
struct SeedOffsets {
  static constexpr std::uint64_t kInit = 0;         // parameter initialization
  static constexpr std::uint64_t kWindows = 1;      // training window sampling
  static constexpr std::uint64_t kStage2Init = 2;   // recall params added at stage 2
  static constexpr std::uint64_t kEvalStream = 3;   // synthetic evaluation streams
  static constexpr std::uint64_t kData = 4;         // data builders
  static constexpr std::uint64_t kProbe = 5;        // gradient-check coordinate sampling
};

/// Every knob of a run, flat. Serialized verbatim into checkpoints and
/// output artifacts.
struct RunConfig {
  BackboneConfig backbone;
  HmtConfig hmt;
  TrainConfig train;
  std::string train_path;
  std::string eval_path;
  std::string out_dir = ".";

  /// Canonical `key = value` text, one line per recognized key in a fixed
  /// order.
  std::string to_text() const;
  /// FNV-1a 64 of to_text(), 16 hex digits.
  std::string hash() const;
  /// Checks cross-field invariants (max_pos fits the augmented segment...).
  void validate() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines (`#` starts a comment). Unknown keys and
/// unparsable values are config errors naming the key and line. Duplicate
/// keys: last one wins, with a warning on `warnings`. Overrides apply after
/// the file. Unset derived keys resolve as: repr_len = segment_len / 2,
/// max_pos = max(segment_len + sensory_len + 2, repr_len + 2).
RunConfig parse_config_text(const std::string& text, const Overrides& overrides, std::ostream& warnings,
                            const std::string& source = "<text>");
RunConfig parse_config(const std::string& path, const Overrides& overrides, std::ostream& warnings);
RunConfig default_config();

const std::vector<std::string>& config_keys();

/// Comment block (`# key = value` lines plus `# config_hash = ...`) written
/// ahead of every CSV artifact.
std::string artifact_header(const RunConfig& config);

}  // namespace hmt
