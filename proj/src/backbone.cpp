// SPDX-License-Identifier: Apache-2.0
#include "hmt/backbone.hpp"

#include <array>

#include "hmt/error.hpp"
#include "hmt/ops.hpp"

namespace hmt {

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { raise(ErrorKind::kConfig, msg); };
  if (d_model == 0) fail("d_model must be positive");
  if (n_layers == 0) fail("n_layers must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  if (d_ff == 0) fail("d_ff must be positive");
  if (vocab_size == 0 || vocab_size > 65536) fail("vocab_size must be in 1..65536");
  if (max_pos == 0) fail("max_pos must be positive");
}

Tensor init_normal(Shape shape, Rng& rng, double stddev) {
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  Tensor t = Tensor::from(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

namespace {

Tensor trainable_full(Shape shape, double value) {
  Tensor t = Tensor::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TransformerBackbone::TransformerBackbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  token_embedding_ = init_normal({config_.vocab_size, d}, rng);
  position_embedding_ = init_normal({config_.max_pos, d}, rng);
  layers_.reserve(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    Layer layer;
    layer.ln1_gain = trainable_full({1, d}, 1.0);
    layer.ln1_bias = trainable_full({1, d}, 0.0);
    layer.wq = init_normal({d, d}, rng);
    layer.wk = init_normal({d, d}, rng);
    layer.wv = init_normal({d, d}, rng);
    layer.wo = init_normal({d, d}, rng);
    layer.bo = trainable_full({1, d}, 0.0);
    layer.ln2_gain = trainable_full({1, d}, 1.0);
    layer.ln2_bias = trainable_full({1, d}, 0.0);
    layer.w1 = init_normal({d, config_.d_ff}, rng);
    layer.b1 = trainable_full({1, config_.d_ff}, 0.0);
    layer.w2 = init_normal({config_.d_ff, d}, rng);
    layer.b2 = trainable_full({1, d}, 0.0);
    layers_.push_back(std::move(layer));
  }
  lnf_gain_ = trainable_full({1, d}, 1.0);
  lnf_bias_ = trainable_full({1, d}, 0.0);
  out_proj_ = init_normal({d, config_.vocab_size}, rng);
}

Tensor TransformerBackbone::embed(std::span<const Token> tokens) const {
  std::vector<std::int32_t> ids(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (static_cast<std::size_t>(ids[i]) >= config_.vocab_size) {
      raise(ErrorKind::kIndex, "embed: token " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                                   " outside vocabulary of " + std::to_string(config_.vocab_size));
    }
  }
  return gather_rows(token_embedding_, ids);
}

Tensor TransformerBackbone::forward_embeddings(const Tensor& x) const {
  const std::size_t T = x.rows();
  if (x.cols() != config_.d_model) {
    raise(ErrorKind::kDimension, "forward_embeddings: input " + shape_string(x.shape()) + " but d_model is " +
                                     std::to_string(config_.d_model));
  }
  if (T > config_.max_pos) {
    raise(ErrorKind::kCapacity, "forward_embeddings: sequence of " + std::to_string(T) +
                                    " rows exceeds max_pos " + std::to_string(config_.max_pos));
  }
  if (T == 0) return x;
  Tensor h = add(x, slice_rows(position_embedding_, 0, T));
  for (const Layer& layer : layers_) {
    Tensor a = layer_norm_rows(h, layer.ln1_gain, layer.ln1_bias);
    Tensor att = causal_attention(matmul(a, layer.wq), matmul(a, layer.wk), matmul(a, layer.wv), config_.n_heads);
    h = add(h, add_row(matmul(att, layer.wo), layer.bo));
    Tensor b = layer_norm_rows(h, layer.ln2_gain, layer.ln2_bias);
    Tensor ff = add_row(matmul(gelu(add_row(matmul(b, layer.w1), layer.b1)), layer.w2), layer.b2);
    h = add(h, ff);
  }
  return h;
}

Tensor TransformerBackbone::logits(const Tensor& h) const {
  return matmul(layer_norm_rows(h, lnf_gain_, lnf_bias_), out_proj_);
}

ParamList TransformerBackbone::parameters() const {
  ParamList out;
  out.push_back({"backbone.token_embedding", token_embedding_});
  out.push_back({"backbone.position_embedding", position_embedding_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const std::string p = "backbone.layer" + std::to_string(l) + ".";
    const std::array<std::pair<const char*, const Tensor*>, 13> entries{{
        {"ln1_gain", &L.ln1_gain},
        {"ln1_bias", &L.ln1_bias},
        {"wq", &L.wq},
        {"wk", &L.wk},
        {"wv", &L.wv},
        {"wo", &L.wo},
        {"bo", &L.bo},
        {"ln2_gain", &L.ln2_gain},
        {"ln2_bias", &L.ln2_bias},
        {"w1", &L.w1},
        {"b1", &L.b1},
        {"w2", &L.w2},
        {"b2", &L.b2},
    }};
    for (const auto& [name, t] : entries) out.push_back({p + name, *t});
  }
  out.push_back({"backbone.lnf_gain", lnf_gain_});
  out.push_back({"backbone.lnf_bias", lnf_bias_});
  out.push_back({"backbone.out_proj", out_proj_});
  return out;
}

}  // namespace hmt
