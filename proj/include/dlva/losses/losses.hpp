// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/model/forward.hpp"
#include "dlva/numerics/ops.hpp"
#include "dlva/sequence/token_sequence.hpp"

namespace dlva {

enum class Stage { pretrain, finetune };

inline const char* to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "finetune") return Stage::finetune;
  fail(ErrorKind::config, "unknown stage '" + s + "' (expected pretrain or finetune)");
}

enum class HeadReduction { mean, sum };

inline const char* to_string(HeadReduction h) { return h == HeadReduction::mean ? "mean" : "sum"; }

inline HeadReduction parse_head_reduction(const std::string& s) {
  if (s == "mean") return HeadReduction::mean;
  if (s == "sum") return HeadReduction::sum;
  fail(ErrorKind::config, "unknown head reduction '" + s + "' (expected mean or sum)");
}

// Next-token cross-entropy over the lm_mask positions: position i is
// predicted by the logits at i-1.
inline TensorPtr loss_autoregressive(Tape& tape, const ForwardOutput& out, const TokenSequence& seq) {
  std::vector<std::size_t> rows, targets;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq.lm_mask[i]) continue;
    if (i == 0) fail(ErrorKind::usage, "position 0 has no preceding prediction slot");
    if (!seq.lm_targets[i]) fail(ErrorKind::usage, "masked position " + std::to_string(i) + " has no target");
    rows.push_back(i - 1);
    targets.push_back(*seq.lm_targets[i]);
  }
  if (rows.empty()) fail(ErrorKind::usage, "sequence has no positions with next-token loss");
  return ops::cross_entropy(tape, ops::gather_rows(tape, out.lm_logits, rows), targets);
}

inline TensorPtr loss_image_order(Tape& tape, const std::optional<TensorPtr>& order_logits, std::optional<std::size_t> target) {
  if (!order_logits) fail(ErrorKind::usage, "image-order loss needs order logits");
  if (!target) fail(ErrorKind::usage, "image-order loss needs a permutation target");
  const std::size_t t[] = {*target};
  return ops::cross_entropy(tape, *order_logits, t);
}

inline TensorPtr loss_text_order(Tape& tape, const ForwardOutput& out, const TokenSequence& seq) {
  return loss_autoregressive(tape, out, seq);
}

// 1 − Σ_l Σ_v Σ_r α^l[r][v] / (L·|V|·|R|), where α^l is the layer's attention
// reduced over heads (mean by default), queried at response position r and
// keyed at visual position v.
inline TensorPtr loss_image_to_response(Tape& tape, const AttentionRecord& attention, const std::vector<std::size_t>& visual,
                                        const std::vector<std::size_t>& response,
                                        HeadReduction reduction = HeadReduction::mean) {
  if (visual.empty()) fail(ErrorKind::usage, "image-to-response loss needs visual positions");
  if (response.empty()) fail(ErrorKind::usage, "image-to-response loss needs response positions");
  if (attention.empty()) fail(ErrorKind::usage, "image-to-response loss needs captured attention");
  std::size_t last_visual = 0;
  for (auto v : visual) last_visual = std::max(last_visual, v);
  for (auto r : response)
    if (r <= last_visual)
      fail(ErrorKind::ordering, "response position " + std::to_string(r) + " does not follow visual position " +
                                    std::to_string(last_visual));

  const std::size_t L = attention.layers, H = attention.heads;
  const double norm = static_cast<double>(L * visual.size() * response.size());
  const double head_coeff = reduction == HeadReduction::mean ? 1.0 / static_cast<double>(H) : 1.0;
  double mass = 0.0;
  bool rg = false;
  for (const auto& a : attention.weights) {
    const std::size_t s = a->cols();
    for (auto r : response) {
      if (r >= a->rows()) fail(ErrorKind::index, "response position " + std::to_string(r) + " outside attention");
      for (auto v : visual) mass += a->data[r * s + v];
    }
    rg = rg || tape.wants_grad({a.get()});
  }
  const double value = 1.0 - head_coeff * mass / norm;
  auto y = make_tensor({1}, {value}, rg);
  if (rg) {
    y->ensure_grad();
    tape.record([weights = attention.weights, visual, response, y, c = head_coeff / norm] {
      const double g = -c * y->grad[0];
      for (const auto& a : weights) {
        if (!a->requires_grad) continue;
        a->ensure_grad();
        const std::size_t s = a->cols();
        for (auto r : response)
          for (auto v : visual) a->grad[r * s + v] += g;
      }
    });
  }
  return y;
}

struct LossWeights {
  double ce = 1.0;
  double image_order = 1.0;
  double text_order = 1.0;
  double i2r = 1.0;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline void validate(const LossWeights& w) {
  for (double v : {w.ce, w.image_order, w.text_order, w.i2r})
    if (!std::isfinite(v) || v < 0.0) fail(ErrorKind::config, "loss weights must be finite and nonnegative");
}

// Absent terms stay nullopt; they never count as zero.
struct LossTerms {
  std::optional<double> ce;
  std::optional<double> image_order;
  std::optional<double> text_order;
  std::optional<double> i2r;
};

struct LossBreakdown {
  LossTerms terms;
  double total = 0.0;
};

inline LossBreakdown combine(const LossTerms& terms, const LossWeights& w, Stage stage) {
  validate(w);
  if (stage == Stage::finetune && terms.text_order)
    fail(ErrorKind::stage, "text-order loss is not part of the fine-tuning objective");
  LossBreakdown b;
  b.terms = terms;
  if (terms.ce) b.total += w.ce * *terms.ce;
  if (terms.image_order) b.total += w.image_order * *terms.image_order;
  if (terms.text_order) b.total += w.text_order * *terms.text_order;
  if (terms.i2r) b.total += w.i2r * *terms.i2r;
  return b;
}

}  // namespace dlva
