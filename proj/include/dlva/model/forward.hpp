// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/model/params.hpp"
#include "dlva/numerics/ops.hpp"
#include "dlva/numerics/tape.hpp"
#include "dlva/sequence/token_sequence.hpp"

namespace dlva {

// Post-softmax attention, one S×S tensor per (layer, head), stored
// layer-major. Entries stay on the tape, so losses over them backpropagate.
struct AttentionRecord {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<TensorPtr> weights;

  bool empty() const { return weights.empty(); }
  const TensorPtr& at(std::size_t layer, std::size_t head) const { return weights.at(layer * heads + head); }
};

struct ForwardOutput {
  TensorPtr lm_logits;                    // S×vocab
  std::optional<TensorPtr> order_logits;  // 1×K, iff the sequence has a DRT position
  AttentionRecord attention;
  TensorPtr last_hidden;  // S×d residual stream after the final block
};

enum class OrderMode { drt, vis };

inline const char* to_string(OrderMode m) { return m == OrderMode::drt ? "drt" : "vis"; }

inline OrderMode parse_order_mode(const std::string& s) {
  if (s == "drt") return OrderMode::drt;
  if (s == "vis") return OrderMode::vis;
  fail(ErrorKind::config, "unknown order mode '" + s + "' (expected drt or vis)");
}

namespace detail {

inline TensorPtr affine(Tape& tape, const TensorPtr& x, const Linear& l) {
  return ops::add_bias(tape, ops::matmul(tape, x, l.weight), l.bias);
}

inline TensorPtr order_head(Tape& tape, const ModelParams& p, const TensorPtr& h) {
  return affine(tape, ops::layernorm(tape, h, p.order_norm.gain, p.order_norm.bias), p.order_proj);
}

inline TensorPtr embed(Tape& tape, const ModelParams& p, const TokenSequence& seq) {
  const auto& c = p.config;
  const std::size_t s = seq.size();
  std::vector<std::size_t> token_pos, token_ids, patch_pos;
  std::vector<double> pixels;
  for (std::size_t i = 0; i < s; ++i) {
    const auto& it = seq.items[i];
    if (it.role == TokenRole::image_patch) {
      auto px = seq.image.patch(it.payload);
      if (px.size() != c.patch_pixels)
        fail(ErrorKind::dimension, "patch of " + std::to_string(px.size()) + " values, model expects " +
                                       std::to_string(c.patch_pixels));
      pixels.insert(pixels.end(), px.begin(), px.end());
      patch_pos.push_back(i);
    } else {
      if (it.payload >= c.vocab_size)
        fail(ErrorKind::index, "token id " + std::to_string(it.payload) + " outside vocabulary of " +
                                   std::to_string(c.vocab_size));
      token_pos.push_back(i);
      token_ids.push_back(it.payload);
    }
  }
  std::vector<std::pair<TensorPtr, std::vector<std::size_t>>> sources;
  if (!token_pos.empty()) sources.emplace_back(ops::gather_rows(tape, p.token_embed, token_ids), token_pos);
  if (!patch_pos.empty()) {
    auto x = make_tensor({patch_pos.size(), c.patch_pixels}, std::move(pixels));
    auto h = affine(tape, x, p.patch_embed);
    h = affine(tape, ops::gelu(tape, affine(tape, h, p.connector_fc1)), p.connector_fc2);
    sources.emplace_back(h, patch_pos);
  }
  auto content = ops::assemble_rows(tape, s, sources);
  std::vector<std::size_t> positions(s);
  for (std::size_t i = 0; i < s; ++i) positions[i] = i;
  return ops::add(tape, content, ops::gather_rows(tape, p.pos_embed, positions));
}

}  // namespace detail

inline ForwardOutput forward(Tape& tape, const ModelParams& p, const TokenSequence& seq, bool capture_attention = false) {
  const auto& c = p.config;
  const std::size_t s = seq.size();
  if (s == 0) fail(ErrorKind::usage, "forward on an empty sequence");
  if (s > c.max_seq_len)
    fail(ErrorKind::capacity, "sequence of " + std::to_string(s) + " exceeds max_seq_len " + std::to_string(c.max_seq_len));

  ForwardOutput out;
  out.attention.layers = capture_attention ? c.n_layers : 0;
  out.attention.heads = capture_attention ? c.n_heads : 0;

  const Mask causal = Mask::causal(s);
  const std::size_t dh = c.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  TensorPtr h = detail::embed(tape, p, seq);
  for (const auto& layer : p.layers) {
    auto x = ops::layernorm(tape, h, layer.ln1.gain, layer.ln1.bias);
    auto q = detail::affine(tape, x, layer.wq);
    auto k = detail::affine(tape, x, layer.wk);
    auto v = detail::affine(tape, x, layer.wv);
    std::vector<TensorPtr> heads;
    heads.reserve(c.n_heads);
    for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
      auto qh = ops::slice_cols(tape, q, hd * dh, dh);
      auto kh = ops::slice_cols(tape, k, hd * dh, dh);
      auto vh = ops::slice_cols(tape, v, hd * dh, dh);
      auto att = ops::masked_softmax(tape, ops::scale(tape, ops::matmul_nt(tape, qh, kh), inv_sqrt), causal);
      if (capture_attention) out.attention.weights.push_back(att);
      heads.push_back(ops::matmul(tape, att, vh));
    }
    h = ops::add(tape, h, detail::affine(tape, ops::concat_cols(tape, heads), layer.wo));
    auto y = ops::layernorm(tape, h, layer.ln2.gain, layer.ln2.bias);
    y = detail::affine(tape, ops::gelu(tape, detail::affine(tape, y, layer.fc1)), layer.fc2);
    h = ops::add(tape, h, y);
  }
  out.last_hidden = h;
  out.lm_logits = detail::affine(tape, ops::layernorm(tape, h, p.final_norm.gain, p.final_norm.bias), p.lm_head);
  if (seq.drt_position) {
    const std::size_t row[] = {*seq.drt_position};
    out.order_logits = detail::order_head(tape, p, ops::gather_rows(tape, h, row));
  }
  return out;
}

// Order logits from the DRT hidden state, or from the mean hidden state over
// the visual positions.
inline TensorPtr predict_permutation(Tape& tape, const ModelParams& p, const ForwardOutput& out, const TokenSequence& seq,
                                     OrderMode mode) {
  if (mode == OrderMode::drt) {
    if (!out.order_logits) fail(ErrorKind::usage, "drt order prediction needs a sequence with a DRT position");
    return *out.order_logits;
  }
  if (seq.visual_set.empty()) fail(ErrorKind::usage, "vis order prediction needs at least one image position");
  return detail::order_head(tape, p, ops::mean_rows(tape, out.last_hidden, seq.visual_set));
}

}  // namespace dlva
