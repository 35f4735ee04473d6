// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dlva/model/config.hpp"
#include "dlva/numerics/tensor.hpp"
#include "dlva/rng.hpp"

namespace dlva {

struct Linear {
  TensorPtr weight;  // in×out
  TensorPtr bias;    // out
};

struct Norm {
  TensorPtr gain;
  TensorPtr bias;
};

struct DecoderLayer {
  Norm ln1;
  Linear wq, wk, wv, wo;
  Norm ln2;
  Linear fc1, fc2;
};

// Every learnable tensor. Row <drt> of token_embed is the directed-token
// embedding; order_head is the LayerNorm + affine order projection.
struct ModelParams {
  ModelConfig config;
  Linear patch_embed;
  Linear connector_fc1, connector_fc2;
  TensorPtr token_embed;
  TensorPtr pos_embed;
  std::vector<DecoderLayer> layers;
  Norm final_norm;
  Linear lm_head;
  Norm order_norm;
  Linear order_proj;

  // Stable (name, tensor) list; the order defines checkpoint and optimizer layout.
  std::vector<std::pair<std::string, TensorPtr>> named() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    auto lin = [&](const std::string& n, const Linear& l) {
      out.emplace_back(n + ".weight", l.weight);
      out.emplace_back(n + ".bias", l.bias);
    };
    auto norm = [&](const std::string& n, const Norm& l) {
      out.emplace_back(n + ".gain", l.gain);
      out.emplace_back(n + ".bias", l.bias);
    };
    lin("patch_embed", patch_embed);
    lin("connector.fc1", connector_fc1);
    lin("connector.fc2", connector_fc2);
    out.emplace_back("token_embed", token_embed);
    out.emplace_back("pos_embed", pos_embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto p = "layers." + std::to_string(l) + ".";
      norm(p + "ln1", layers[l].ln1);
      lin(p + "attn.q", layers[l].wq);
      lin(p + "attn.k", layers[l].wk);
      lin(p + "attn.v", layers[l].wv);
      lin(p + "attn.o", layers[l].wo);
      norm(p + "ln2", layers[l].ln2);
      lin(p + "mlp.fc1", layers[l].fc1);
      lin(p + "mlp.fc2", layers[l].fc2);
    }
    norm("final_norm", final_norm);
    lin("lm_head", lm_head);
    norm("order_head.norm", order_norm);
    lin("order_head.proj", order_proj);
    return out;
  }

  std::vector<TensorPtr> tensors() const {
    std::vector<TensorPtr> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named()) n += t->numel();
    return n;
  }

  void zero_grad() const {
    for (auto& [n, t] : named()) t->zero_grad();
  }

  // Deep copy with independent storage.
  ModelParams clone() const;
};

namespace detail {

inline ModelParams allocate_params(const ModelConfig& c) {
  validate(c);
  const std::size_t d = c.d_model;
  auto lin = [](std::size_t in, std::size_t out) { return Linear{zeros({in, out}, true), zeros({out}, true)}; };
  auto norm = [](std::size_t n) { return Norm{zeros({n}, true), zeros({n}, true)}; };
  ModelParams p;
  p.config = c;
  p.patch_embed = lin(c.patch_pixels, d);
  p.connector_fc1 = lin(d, c.connector_hidden);
  p.connector_fc2 = lin(c.connector_hidden, d);
  p.token_embed = zeros({c.vocab_size, d}, true);
  p.pos_embed = zeros({c.max_seq_len, d}, true);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    DecoderLayer layer;
    layer.ln1 = norm(d);
    layer.wq = lin(d, d);
    layer.wk = lin(d, d);
    layer.wv = lin(d, d);
    layer.wo = lin(d, d);
    layer.ln2 = norm(d);
    layer.fc1 = lin(d, c.mlp_hidden());
    layer.fc2 = lin(c.mlp_hidden(), d);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = norm(d);
  p.lm_head = lin(d, c.vocab_size);
  p.order_norm = norm(d);
  p.order_proj = lin(d, c.k_classes);
  return p;
}

}  // namespace detail

inline ModelParams ModelParams::clone() const {
  ModelParams p = detail::allocate_params(config);
  auto src = named();
  auto dst = p.named();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second->data = src[i].second->data;
  return p;
}

// Weights and embeddings ~ Normal(0, init_std²); biases zero; norm gains one.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed, double init_std = 0.02) {
  ModelParams p = detail::allocate_params(config);
  Rng rng(seed);
  for (auto& [name, t] : p.named()) {
    const bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (is_gain) std::fill(t->data.begin(), t->data.end(), 1.0);
    else if (!is_bias)
      for (auto& v : t->data) v = init_std * rng.normal();
  }
  return p;
}

}  // namespace dlva
