// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hmt/backbone.hpp"
#include "hmt/ring_buffer.hpp"
#include "hmt/tensor.hpp"

namespace hmt {

/// A single 1×d row. Used for the summary, memorization-prompt, memory and
/// seed embeddings.
using Embedding = Tensor;

struct HmtConfig {
  std::size_t segment_len = 256;  // L
  std::size_t sensory_len = 32;   // k
  std::size_t repr_len = 128;     // j
  std::size_t cache_size = 300;   // N
  std::size_t dh = 0;             // cross-attention width; 0 means d_model
  bool recall = true;

  void validate() const;
  std::size_t attention_width(std::size_t d_model) const { return dh == 0 ? d_model : dh; }
  bool operator==(const HmtConfig&) const = default;
};

/// Trainable embeddings and projections the memory mechanism adds on top of
/// the backbone.
struct PromptParams {
  Embedding summary_prompt;  // brackets the segment prefix during extraction
  Tensor query_proj;         // [d×dh]
  Tensor key_proj;           // [d×dh]
  Embedding memory_seed;     // first-segment memory

  static PromptParams init(std::size_t d_model, std::size_t dh, Rng& rng);
  /// Recall parameters are only listed when recall is on; the memory seed
  /// always is.
  ParamList parameters(bool recall) const;
};

struct CacheEntry {
  std::int64_t segment = 0;
  Embedding embedding;
};

/// Long-term memory: the most recent N memory embeddings, oldest first.
class MemoryCache {
 public:
  /// Index of the learnable seed entry placed before the first segment.
  static constexpr std::int64_t kSeedSegment = -1;

  explicit MemoryCache(std::size_t capacity = 0) : ring_(capacity) {}

  std::size_t capacity() const { return ring_.capacity(); }
  std::size_t size() const { return ring_.size(); }
  bool empty() const { return ring_.empty(); }
  const CacheEntry& operator[](std::size_t i) const { return ring_[i]; }

  /// Appends and evicts the oldest entry beyond capacity. Segment indices
  /// must be strictly increasing.
  void push(std::int64_t segment, Embedding embedding);
  /// [size×d] stack of the cached embeddings.
  Tensor stacked() const;
  /// Every entry becomes a constant.
  void detach();
  /// Copy without the newest entry (the prefix used by incremental recall).
  MemoryCache without_newest() const;

 private:
  RingBuffer<CacheEntry> ring_;
};

struct HmtModel {
  HmtConfig config;
  std::shared_ptr<Backbone> backbone;
  PromptParams prompts;

  static HmtModel create(const BackboneConfig& backbone_config, const HmtConfig& config, std::uint64_t seed);
  /// Same parameters, different mechanism settings (cache size, j, recall).
  HmtModel with_config(const HmtConfig& other) const;

  std::size_t d_model() const { return backbone->d_model(); }
  std::size_t dh() const { return config.attention_width(backbone->d_model()); }
  ParamList parameters() const { return parameters(config.recall); }
  ParamList parameters(bool recall) const;
};

struct HmtState {
  MemoryCache cache;
  Tensor sensory;          // last min(k, len) token embeddings of the previous segment
  Embedding previous_memory;
  std::int64_t segment = 0;

  /// Cache seeded with the memory seed; previous memory is the seed.
  static HmtState initial(const HmtModel& model);
  /// Carried tensors become constants (the truncation boundary).
  void detach();
};

/// Scores logged by one memory search.
struct RecallEvent {
  std::int64_t segment = 0;
  std::vector<std::int64_t> entry_segments;
  std::vector<double> scores;   // QKᵀ/√dh
  std::vector<double> weights;  // softmax of scores
};

/// Q, K and the prefix score row, computed before the newest memory exists.
struct RecallScratch {
  Tensor query;         // [1×dh]
  Tensor prefix_keys;   // [prefix×dh], undefined when prefix is empty
  Tensor prefix_scores; // A = QKᵀ [1×prefix], undefined when prefix is empty
  std::size_t prefix_size = 0;
};

struct SegmentOutput {
  Tensor hidden;      // H_out, [len×d]
  Embedding memory;   // H_mem, [1×d]
};

struct StepResult {
  Tensor logits;
  Embedding memory;
  Embedding prompt;   // H^S fed to the segment
  Embedding summary;  // H_sum, undefined in no-recall mode
  std::optional<RecallEvent> recall;
};

/// Runs the backbone over [H_T ∘ h_n[0, j') ∘ H_T] and returns the last row.
Embedding extract_representation(const Tensor& h_n, const HmtConfig& config, const PromptParams& prompts,
                                 const Backbone& backbone);

/// softmax(QKᵀ/√dh)·M over the cached embeddings M; no value or output
/// projection, so the result is a convex combination of the cache.
Embedding memory_search(const Embedding& h_sum, const MemoryCache& cache, const PromptParams& prompts,
                        RecallEvent* event = nullptr);

RecallScratch prepare_recall(const Embedding& h_sum, const MemoryCache& prefix, const PromptParams& prompts);
/// Finishes a search once the newest memory arrives. Equal to memory_search
/// over prefix + new_mem.
Embedding memory_search_incremental(const RecallScratch& scratch, const MemoryCache& prefix,
                                    const Embedding& new_mem, const PromptParams& prompts);

/// H^S ∘ sensory ∘ h_n ∘ H^S.
Tensor augment_segment(const Embedding& h_s, const Tensor& sensory, const Tensor& h_n);
SegmentOutput process_segment(const Tensor& augmented, std::size_t len, const Backbone& backbone);

void update_cache(MemoryCache& cache, std::int64_t segment, const Embedding& h_mem);

/// One segment of the full mechanism. With config.recall off this is
/// no_recall_step.
StepResult hmt_step(const HmtModel& model, HmtState& state, std::span<const Token> tokens);
/// Previous memory embedding is the prompt; the cache is never consulted.
StepResult no_recall_step(const HmtModel& model, HmtState& state, std::span<const Token> tokens);

}  // namespace hmt
