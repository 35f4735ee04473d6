// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dlva/losses/losses.hpp"
#include "dlva/model/forward.hpp"
#include "dlva/model/gradcheck_model.hpp"
#include "dlva/model/params.hpp"
#include "dlva/numerics/gradcheck.hpp"
#include "dlva/permute/permutation_set.hpp"
#include "dlva/sequence/builders.hpp"
#include "dlva/synthdata/corpus.hpp"
#include "dlva/training/trainer.hpp"

namespace dlva {

struct LossGradcheckOptions {
  ModelConfig model = [] {
    ModelConfig m;
    m.d_model = 16;
    m.n_layers = 2;
    m.n_heads = 2;
    m.connector_hidden = 16;
    m.max_seq_len = 48;
    return m;
  }();
  CorpusSpec corpus;
  std::size_t k = 24;
  std::uint64_t seed = 1;
  double init_std = 0.3;  // larger than training init so every path carries signal
  std::size_t coords_per_tensor = 6;
};

struct LossGradcheckReport {
  std::vector<std::pair<std::string, ModelGradcheck>> terms;  // l_ce, l_io, l_to, l_i2r
  double seconds = 0.0;

  double worst() const {
    double w = 0.0;
    for (const auto& [name, r] : terms) w = std::max(w, r.result.max_rel_error);
    return w;
  }

  bool pass(double rel_tol) const {
    for (const auto& [name, r] : terms)
      if (!r.pass(rel_tol)) return false;
    return true;
  }
};

// Finite-difference check of the full model through each loss term on
// freshly drawn sequences.
inline LossGradcheckReport gradcheck_losses(const LossGradcheckOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  CorpusSpec spec = o.corpus;
  spec.n_samples = 12;
  spec.n_val = 2;
  const Corpus corpus = generate_corpus(spec);
  const auto perms = generate_set(spec.n_patches(), o.k, SelectionObjective::min_avg, o.seed);
  ModelConfig cfg = o.model;
  const auto needed = 1 + 2 * spec.n_patches() + 2 * 7 + 4;
  if (cfg.max_seq_len < needed) cfg.max_seq_len = needed;
  auto params = init_params(bind_model(cfg, spec, &perms), o.seed, o.init_std);
  const SequenceBuilder builder(spec.vocabulary());

  Rng r1(derive_seed(o.seed, {1})), r2(derive_seed(o.seed, {2})), r3(derive_seed(o.seed, {3}));
  const auto caption = builder.build_caption_pretrain(corpus.train[0], r1);
  const auto image_order = builder.build_image_order(corpus.train[1], perms, r2);
  std::optional<TokenSequence> text_order;
  for (std::size_t i = 2; !text_order && i < corpus.train.size(); ++i) text_order = builder.build_text_order(corpus.train[i], r3);
  if (!text_order) fail(ErrorKind::data, "no caption long enough for a text-order sequence");

  GradcheckOptions gopt;
  gopt.max_coords_per_tensor = o.coords_per_tensor;
  gopt.sample_seed = o.seed;
  const std::vector<std::pair<std::string, std::function<TensorPtr(Tape&)>>> losses = {
      {"l_ce", [&](Tape& t) { return loss_autoregressive(t, forward(t, params, caption), caption); }},
      {"l_io",
       [&](Tape& t) {
         const auto out = forward(t, params, image_order);
         return loss_image_order(t, out.order_logits, image_order.perm_target);
       }},
      {"l_to", [&](Tape& t) { return loss_text_order(t, forward(t, params, *text_order), *text_order); }},
      {"l_i2r",
       [&](Tape& t) {
         const auto out = forward(t, params, caption, true);
         return loss_image_to_response(t, out.attention, caption.visual_set, caption.response_set);
       }},
  };
  LossGradcheckReport report;
  for (const auto& [name, fn] : losses) report.terms.emplace_back(name, gradcheck_model(fn, params, gopt));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace dlva
