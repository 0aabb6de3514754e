// SPDX-License-Identifier: Apache-2.0
#include "hmt/memory.hpp"

#include <algorithm>
#include <cmath>

#include "hmt/error.hpp"
#include "hmt/ops.hpp"

namespace hmt {

void HmtConfig::validate() const {
  if (segment_len == 0) raise(ErrorKind::kConfig, "segment_len must be positive");
  if (sensory_len >= segment_len) {
    raise(ErrorKind::kConfig, "sensory_len (" + std::to_string(sensory_len) + ") must be smaller than segment_len (" +
                                  std::to_string(segment_len) + ")");
  }
  if (repr_len < 1 || repr_len > segment_len) {
    raise(ErrorKind::kConfig, "repr_len (" + std::to_string(repr_len) + ") must be in 1..segment_len (" +
                                  std::to_string(segment_len) + ")");
  }
  if (recall && cache_size < 1) raise(ErrorKind::kConfig, "cache_size must be at least 1 when recall is on");
}

PromptParams PromptParams::init(std::size_t d_model, std::size_t dh, Rng& rng) {
  PromptParams p;
  p.summary_prompt = init_normal({1, d_model}, rng);
  p.query_proj = init_normal({d_model, dh}, rng);
  p.key_proj = init_normal({d_model, dh}, rng);
  p.memory_seed = init_normal({1, d_model}, rng);
  return p;
}

ParamList PromptParams::parameters(bool recall) const {
  ParamList out;
  if (recall) {
    out.push_back({"hmt.summary_prompt", summary_prompt});
    out.push_back({"hmt.query_proj", query_proj});
    out.push_back({"hmt.key_proj", key_proj});
  }
  out.push_back({"hmt.memory_seed", memory_seed});
  return out;
}

void MemoryCache::push(std::int64_t segment, Embedding embedding) {
  if (!ring_.empty() && segment <= ring_.back().segment) {
    raise(ErrorKind::kContract, "memory cache: segment " + std::to_string(segment) + " pushed after " +
                                    std::to_string(ring_.back().segment));
  }
  ring_.push(CacheEntry{segment, std::move(embedding)});
}

Tensor MemoryCache::stacked() const {
  std::vector<Tensor> rows;
  rows.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) rows.push_back(ring_[i].embedding);
  return concat_rows(rows);
}

void MemoryCache::detach() {
  for (std::size_t i = 0; i < size(); ++i) ring_[i].embedding = ring_[i].embedding.detach();
}

MemoryCache MemoryCache::without_newest() const {
  MemoryCache out(capacity());
  for (std::size_t i = 0; i + 1 < size(); ++i) out.ring_.push(ring_[i]);
  return out;
}

HmtModel HmtModel::create(const BackboneConfig& backbone_config, const HmtConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  HmtModel model;
  model.config = config;
  model.backbone = std::make_shared<TransformerBackbone>(backbone_config, rng);
  model.prompts = PromptParams::init(backbone_config.d_model, config.attention_width(backbone_config.d_model), rng);
  return model;
}

HmtModel HmtModel::with_config(const HmtConfig& other) const {
  other.validate();
  HmtModel out = *this;
  if (other.attention_width(d_model()) != dh()) {
    raise(ErrorKind::kConfig, "with_config: dh cannot change on an existing model");
  }
  out.config = other;
  return out;
}

ParamList HmtModel::parameters(bool recall) const {
  ParamList out = backbone->parameters();
  for (auto& p : prompts.parameters(recall)) out.push_back(std::move(p));
  return out;
}

HmtState HmtState::initial(const HmtModel& model) {
  HmtState state;
  state.cache = MemoryCache(model.config.cache_size);
  if (model.config.recall) state.cache.push(MemoryCache::kSeedSegment, model.prompts.memory_seed);
  state.sensory = Tensor::zeros({0, model.d_model()});
  state.previous_memory = model.prompts.memory_seed;
  return state;
}

void HmtState::detach() {
  cache.detach();
  sensory = sensory.detach();
  previous_memory = previous_memory.detach();
}

Embedding extract_representation(const Tensor& h_n, const HmtConfig& config, const PromptParams& prompts,
                                 const Backbone& backbone) {
  const std::size_t len = h_n.rows();
  if (len == 0) raise(ErrorKind::kContract, "extract_representation: empty segment");
  const std::size_t j = std::min(config.repr_len, len);
  if (j + 2 > backbone.max_positions()) {
    raise(ErrorKind::kCapacity, "extract_representation: " + std::to_string(j + 2) + " rows exceed max_pos " +
                                    std::to_string(backbone.max_positions()));
  }
  const std::vector<Tensor> parts{prompts.summary_prompt, slice_rows(h_n, 0, j), prompts.summary_prompt};
  Tensor out = backbone.forward_embeddings(concat_rows(parts));
  return slice_rows(out, out.rows() - 1, out.rows());
}

namespace {

double inv_sqrt_width(const PromptParams& prompts) {
  return 1.0 / std::sqrt(static_cast<double>(prompts.query_proj.cols()));
}

void record(RecallEvent* event, const MemoryCache& cache, const Tensor& scores, const Tensor& weights) {
  if (!event) return;
  event->entry_segments.clear();
  for (std::size_t i = 0; i < cache.size(); ++i) event->entry_segments.push_back(cache[i].segment);
  event->scores.assign(scores.data().begin(), scores.data().end());
  event->weights.assign(weights.data().begin(), weights.data().end());
}

}  // namespace

Embedding memory_search(const Embedding& h_sum, const MemoryCache& cache, const PromptParams& prompts,
                        RecallEvent* event) {
  if (cache.empty()) raise(ErrorKind::kContract, "memory_search: cache is empty (seed it with the memory seed)");
  Tensor memories = cache.stacked();
  Tensor query = matmul(h_sum, prompts.query_proj);
  Tensor keys = matmul(memories, prompts.key_proj);
  Tensor scores = scale(matmul(query, transpose(keys)), inv_sqrt_width(prompts));
  Tensor weights = softmax_rows(scores);
  record(event, cache, scores, weights);
  return matmul(weights, memories);
}

RecallScratch prepare_recall(const Embedding& h_sum, const MemoryCache& prefix, const PromptParams& prompts) {
  RecallScratch scratch;
  scratch.query = matmul(h_sum, prompts.query_proj);
  scratch.prefix_size = prefix.size();
  if (!prefix.empty()) {
    scratch.prefix_keys = matmul(prefix.stacked(), prompts.key_proj);
    scratch.prefix_scores = matmul(scratch.query, transpose(scratch.prefix_keys));
  }
  return scratch;
}

Embedding memory_search_incremental(const RecallScratch& scratch, const MemoryCache& prefix,
                                    const Embedding& new_mem, const PromptParams& prompts) {
  if (scratch.prefix_size != prefix.size()) {
    raise(ErrorKind::kContract, "memory_search_incremental: scratch covers " + std::to_string(scratch.prefix_size) +
                                    " entries but the prefix holds " + std::to_string(prefix.size()));
  }
  Tensor last_key = matmul(new_mem, prompts.key_proj);
  Tensor last_score = matmul(scratch.query, transpose(last_key));
  if (prefix.empty()) {
    Tensor weights = softmax_rows(scale(last_score, inv_sqrt_width(prompts)));
    return matmul(weights, new_mem);
  }
  const std::vector<Tensor> score_parts{scratch.prefix_scores, last_score};
  Tensor weights = softmax_rows(scale(concat_cols(score_parts), inv_sqrt_width(prompts)));
  const std::vector<Tensor> memory_parts{prefix.stacked(), new_mem};
  return matmul(weights, concat_rows(memory_parts));
}

Tensor augment_segment(const Embedding& h_s, const Tensor& sensory, const Tensor& h_n) {
  std::vector<Tensor> parts{h_s};
  if (sensory.defined() && sensory.rows() > 0) parts.push_back(sensory);
  parts.push_back(h_n);
  parts.push_back(h_s);
  return concat_rows(parts);
}

SegmentOutput process_segment(const Tensor& augmented, std::size_t len, const Backbone& backbone) {
  if (augmented.rows() < len + 2) {
    raise(ErrorKind::kContract, "process_segment: " + std::to_string(augmented.rows()) +
                                    " augmented rows cannot hold a segment of " + std::to_string(len));
  }
  Tensor out = backbone.forward_embeddings(augmented);
  const std::size_t rows = out.rows();
  const std::size_t discarded = rows - len - 1;
  return {slice_rows(out, discarded, discarded + len), slice_rows(out, rows - 1, rows)};
}

void update_cache(MemoryCache& cache, std::int64_t segment, const Embedding& h_mem) {
  for (double v : h_mem.data()) {
    if (!std::isfinite(v)) raise(ErrorKind::kNumericDomain, "update_cache: non-finite memory embedding");
  }
  cache.push(segment, h_mem);
}

namespace {

StepResult run_step(const HmtModel& model, HmtState& state, std::span<const Token> tokens, bool recall) {
  const std::size_t len = tokens.size();
  if (len == 0) raise(ErrorKind::kContract, "segment step: empty segment");
  const Backbone& backbone = *model.backbone;
  Tensor h_n = backbone.embed(tokens);

  StepResult result;
  if (recall) {
    result.summary = extract_representation(h_n, model.config, model.prompts, backbone);
    RecallEvent event;
    event.segment = state.segment;
    result.prompt = memory_search(result.summary, state.cache, model.prompts, &event);
    result.recall = std::move(event);
  } else {
    result.prompt = state.previous_memory;
  }

  SegmentOutput out = process_segment(augment_segment(result.prompt, state.sensory, h_n), len, backbone);
  result.logits = backbone.logits(out.hidden);
  result.memory = out.memory;

  if (recall) update_cache(state.cache, state.segment, out.memory);
  state.previous_memory = out.memory;
  const std::size_t keep = std::min(model.config.sensory_len, len);
  state.sensory = slice_rows(h_n, len - keep, len);
  ++state.segment;
  return result;
}

}  // namespace

StepResult hmt_step(const HmtModel& model, HmtState& state, std::span<const Token> tokens) {
  return run_step(model, state, tokens, model.config.recall);
}

StepResult no_recall_step(const HmtModel& model, HmtState& state, std::span<const Token> tokens) {
  return run_step(model, state, tokens, false);
}

}  // namespace hmt
