// SPDX-License-Identifier: Apache-2.0
// Backbones, configs and helpers shared by the unit tests and the
// acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "hmt/backbone.hpp"
#include "hmt/config.hpp"
#include "hmt/memory.hpp"
#include "hmt/ops.hpp"
#include "hmt/rng.hpp"

namespace hmt::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = scale * rng.normal();
  Tensor t = Tensor::from(std::move(shape), std::move(v));
  t.set_requires_grad(grad);
  return t;
}

// Position-free stand-in: one-hot embeddings, identity forward, logits from
// a [V×V] table. Row t of the output depends on token t alone, which makes
// flat (non-segmented) NLL computable by hand.
class BigramStub final : public Backbone {
 public:
  BigramStub(std::size_t vocab, Rng& rng) : vocab_(vocab), table_(random_tensor({vocab, vocab}, rng, 1.0)) {}

  std::size_t d_model() const override { return vocab_; }
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t max_positions() const override { return 1 << 20; }

  Tensor embed(std::span<const Token> tokens) const override {
    std::vector<double> v(tokens.size() * vocab_, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) v[i * vocab_ + tokens[i]] = 1.0;
    return Tensor::from({tokens.size(), vocab_}, std::move(v));
  }
  Tensor forward_embeddings(const Tensor& x) const override { return x; }
  Tensor logits(const Tensor& h) const override { return matmul(h, table_); }
  ParamList parameters() const override { return {{"stub.table", table_}}; }

  Tensor& table() { return table_; }

 private:
  std::size_t vocab_;
  Tensor table_;
};

// Identity backbone over arbitrary width, for extraction/search checks.
class IdentityBackbone final : public Backbone {
 public:
  explicit IdentityBackbone(std::size_t d) : d_(d) {}
  std::size_t d_model() const override { return d_; }
  std::size_t vocab_size() const override { return 256; }
  std::size_t max_positions() const override { return 1 << 20; }
  Tensor embed(std::span<const Token> tokens) const override {
    std::vector<double> v(tokens.size() * d_);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.1 * static_cast<double>(tokens[i / d_]) + i % d_);
    return Tensor::from({tokens.size(), d_}, std::move(v));
  }
  Tensor forward_embeddings(const Tensor& x) const override { return x; }
  Tensor logits(const Tensor& h) const override { return h; }
  ParamList parameters() const override { return {}; }

 private:
  std::size_t d_;
};

inline HmtModel stub_model(std::shared_ptr<Backbone> backbone, const HmtConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  HmtModel model;
  model.config = config;
  model.prompts = PromptParams::init(backbone->d_model(), config.attention_width(backbone->d_model()), rng);
  model.backbone = std::move(backbone);
  return model;
}

inline BackboneConfig tiny_backbone() {
  BackboneConfig b;
  b.d_model = 32;
  b.n_layers = 2;
  b.n_heads = 4;
  b.d_ff = 128;
  b.vocab_size = 256;
  b.max_pos = 22;
  return b;
}

inline HmtConfig tiny_hmt(bool recall = true) {
  HmtConfig h;
  h.segment_len = 16;
  h.sensory_len = 4;
  h.repr_len = 8;
  h.cache_size = 8;
  h.dh = 32;
  h.recall = recall;
  return h;
}

// Tiny model, quick schedule; stage-1 settings.
inline RunConfig tiny_run(std::uint64_t seed = 0) {
  RunConfig c = default_config();
  c.backbone = tiny_backbone();
  c.hmt = tiny_hmt(false);
  c.train.lr = 3e-3;
  c.train.unroll = 2;
  c.train.steps = 20;
  c.train.seed = seed;
  return c;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace hmt::testing
