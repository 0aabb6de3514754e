// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hmt/optim.hpp"
#include "hmt/rng.hpp"
#include "hmt/tensor.hpp"

namespace hmt {

using Token = std::uint16_t;

struct BackboneConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 256;
  std::size_t max_pos = 64;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Embedding-level decoder contract the memory wrapper is written against.
/// Any model that can embed tokens, run causally over an arbitrary row
/// sequence, and project rows to logits can sit behind it.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::size_t d_model() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_positions() const = 0;

  /// Token lookup only, [T×d].
  virtual Tensor embed(std::span<const Token> tokens) const = 0;
  /// Causal pass over [T×d] rows; output row t depends on rows 0..t only.
  virtual Tensor forward_embeddings(const Tensor& x) const = 0;
  virtual Tensor logits(const Tensor& h) const = 0;

  virtual ParamList parameters() const = 0;
};

/// Pre-LN GPT-style decoder with learned absolute positions and a GELU MLP.
class TransformerBackbone final : public Backbone {
 public:
  struct Layer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
  };

  TransformerBackbone(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const { return config_; }

  std::size_t d_model() const override { return config_.d_model; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_positions() const override { return config_.max_pos; }

  Tensor embed(std::span<const Token> tokens) const override;
  Tensor forward_embeddings(const Tensor& x) const override;
  Tensor logits(const Tensor& h) const override;

  /// Stable order; names are used as checkpoint keys.
  ParamList parameters() const override;

  Tensor& token_embedding() { return token_embedding_; }
  Tensor& logit_projection() { return out_proj_; }

 private:
  BackboneConfig config_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<Layer> layers_;
  Tensor lnf_gain_, lnf_bias_;
  Tensor out_proj_;
};

/// Normal(0, stddev) matrix marked trainable.
Tensor init_normal(Shape shape, Rng& rng, double stddev = 0.02);

}  // namespace hmt
