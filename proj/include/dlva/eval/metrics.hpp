// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/io.hpp"
#include "dlva/losses/losses.hpp"
#include "dlva/model/forward.hpp"
#include "dlva/permute/permutation_set.hpp"
#include "dlva/rng.hpp"
#include "dlva/sequence/builders.hpp"
#include "dlva/synthdata/corpus.hpp"

namespace dlva {

inline constexpr const char* kVersion = "0.1.0";

struct Rate {
  std::size_t hits = 0;
  std::size_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
};

struct ImageOrderMetrics {
  Rate exact;
  Rate top5;
};

struct TextOrderMetrics {
  Rate exact;
  Rate token;
  std::size_t truncated = 0;
  std::vector<std::vector<TokenId>> decoded;  // per sample, without the closing DRT
};

struct EvalOptions {
  std::uint64_t seed = 1;
  OrderMode mode = OrderMode::drt;
  bool blank = false;                    // substitute blank images everywhere
  std::size_t draws_per_sample = 1;      // image-order draws per validation sample
  std::size_t limit = 0;                 // evaluate only the first `limit` samples; 0 = all
  SequenceKind attention_task = SequenceKind::caption;  // caption or conversation
};

namespace detail {

inline std::size_t eval_count(const std::vector<Conversation>& val, const EvalOptions& o) {
  if (val.empty()) fail(ErrorKind::data, "evaluation split is empty");
  return o.limit == 0 ? val.size() : std::min(o.limit, val.size());
}

inline Conversation maybe_blank(const Conversation& c, bool blank) {
  Conversation out = c;
  if (blank) out.image = blank_image(c.image);
  return out;
}

inline std::size_t argmax(const double* v, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(v, v + n) - v);
}

}  // namespace detail

// Draws a library member per sample (seeded by sample index and draw), shuffles
// the image with it and checks the arg-max of the order logits.
inline ImageOrderMetrics eval_image_order(const ModelParams& params, const std::vector<Conversation>& val,
                                          const PermutationSet& perms, const Vocabulary& vocab,
                                          const EvalOptions& o = {}) {
  if (params.config.k_classes != perms.size())
    fail(ErrorKind::config, "model predicts " + std::to_string(params.config.k_classes) + " classes, permutation set has " +
                                std::to_string(perms.size()));
  const SequenceBuilder builder(vocab);
  ImageOrderMetrics m;
  const std::size_t n = detail::eval_count(val, o);
  const std::size_t k = perms.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Conversation conv = detail::maybe_blank(val[i], o.blank);
    for (std::size_t d = 0; d < std::max<std::size_t>(1, o.draws_per_sample); ++d) {
      Rng rng(derive_seed(o.seed, {0x10, i, d}));
      const auto seq = builder.build_image_order(conv, perms, rng);
      Tape tape(Tape::Mode::inference);
      const auto out = forward(tape, params, seq);
      const auto logits = predict_permutation(tape, params, out, seq, o.mode);
      const std::size_t target = *seq.perm_target;
      const double* v = logits->data.data();
      std::size_t above = 0;
      for (std::size_t c = 0; c < k; ++c)
        if (v[c] > v[target] || (v[c] == v[target] && c < target)) ++above;
      ++m.exact.total;
      ++m.top5.total;
      if (above == 0) ++m.exact.hits;
      if (above < 5) ++m.top5.hits;
    }
  }
  return m;
}

// Greedy decoding of the text-order answer from the context that precedes it.
inline std::vector<TokenId> greedy_decode(const ModelParams& params, TokenSequence prefix, std::size_t vocab_size,
                                          std::size_t max_tokens, bool* truncated = nullptr) {
  std::vector<TokenId> out;
  const std::size_t limit = std::min(params.config.vocab_size, vocab_size);
  if (truncated != nullptr) *truncated = false;
  for (;;) {
    if (prefix.size() >= params.config.max_seq_len || out.size() >= max_tokens) {
      if (truncated != nullptr) *truncated = true;
      return out;
    }
    Tape tape(Tape::Mode::inference);
    const auto fo = forward(tape, params, prefix);
    const std::size_t row = prefix.size() - 1;
    const auto id = static_cast<TokenId>(detail::argmax(fo.lm_logits->data.data() + row * fo.lm_logits->cols(), limit));
    if (id == Vocabulary::drt) return out;
    out.push_back(id);
    prefix.push_token(TokenRole::answer, id, false);
  }
}

inline TextOrderMetrics eval_text_order(const ModelParams& params, const std::vector<Conversation>& val,
                                        const Vocabulary& vocab, const EvalOptions& o = {}) {
  const SequenceBuilder builder(vocab);
  TextOrderMetrics m;
  const std::size_t n = detail::eval_count(val, o);
  for (std::size_t i = 0; i < n; ++i) {
    const Conversation conv = detail::maybe_blank(val[i], o.blank);
    Rng rng(derive_seed(o.seed, {0x20, i}));
    auto seq = builder.build_text_order(conv, rng);
    if (!seq) continue;
    TokenSequence prefix;
    prefix.kind = seq->kind;
    prefix.image = seq->image;
    const std::size_t answer_start = seq->response_set.front();
    for (std::size_t p = 0; p < answer_start; ++p) {
      const auto& it = seq->items[p];
      if (it.role == TokenRole::image_patch) prefix.push_patch(it.payload);
      else prefix.push_token(it.role, it.payload, false);
    }
    bool truncated = false;
    auto decoded = greedy_decode(params, std::move(prefix), vocab.size(), 2 * conv.caption.size() + 2, &truncated);
    if (truncated) ++m.truncated;
    ++m.exact.total;
    if (decoded == conv.caption) ++m.exact.hits;
    for (std::size_t t = 0; t < conv.caption.size(); ++t) {
      ++m.token.total;
      if (t < decoded.size() && decoded[t] == conv.caption[t]) ++m.token.hits;
    }
    m.decoded.push_back(std::move(decoded));
  }
  return m;
}

// Teacher-forced QA accuracy over every answer token of the (unshuffled)
// conversations.
inline Rate eval_qa(const ModelParams& params, const std::vector<Conversation>& val, const Vocabulary& vocab,
                    const EvalOptions& o, bool blank) {
  const SequenceBuilder builder(vocab);
  Rate r;
  const std::size_t n = detail::eval_count(val, o);
  const std::size_t limit = std::min(params.config.vocab_size, vocab.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Conversation conv = detail::maybe_blank(val[i], blank);
    Rng rng(derive_seed(o.seed, {0x30, i}));
    const auto seq = builder.build_finetune(conv, nullptr, rng, false);
    Tape tape(Tape::Mode::inference);
    const auto out = forward(tape, params, seq);
    for (auto p : seq.response_set) {
      const double* row = out.lm_logits->data.data() + (p - 1) * out.lm_logits->cols();
      ++r.total;
      if (detail::argmax(row, limit) == *seq.lm_targets[p]) ++r.hits;
    }
  }
  return r;
}

struct VisualDependence {
  Rate original;
  Rate blank;
  double gap() const { return original.value() - blank.value(); }
};

inline VisualDependence eval_visual_dependence(const ModelParams& params, const std::vector<Conversation>& val,
                                               const Vocabulary& vocab, const EvalOptions& o = {}) {
  return {eval_qa(params, val, vocab, o, false), eval_qa(params, val, vocab, o, true)};
}

// Mean over response tokens of the visual attention mass Σ_v α (heads and
// layers averaged): |V| · (1 − L_I→R).
inline double attention_mass(const AttentionRecord& attention, const TokenSequence& seq) {
  Tape tape(Tape::Mode::inference);
  const auto loss = loss_image_to_response(tape, attention, seq.visual_set, seq.response_set);
  return static_cast<double>(seq.visual_set.size()) * (1.0 - loss->item());
}

inline double attention_mass(const ModelParams& params, const TokenSequence& seq) {
  Tape tape(Tape::Mode::inference);
  const auto out = forward(tape, params, seq, true);
  return attention_mass(out.attention, seq);
}

inline double mean_attention_mass(const ModelParams& params, const std::vector<Conversation>& val, const Vocabulary& vocab,
                                  const EvalOptions& o = {}) {
  const SequenceBuilder builder(vocab);
  const std::size_t n = detail::eval_count(val, o);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Conversation conv = detail::maybe_blank(val[i], o.blank);
    Rng rng(derive_seed(o.seed, {0x40, i}));
    const auto seq = o.attention_task == SequenceKind::conversation ? builder.build_finetune(conv, nullptr, rng, false)
                                                                    : builder.build_caption_pretrain(conv, rng);
    total += attention_mass(params, seq);
  }
  return total / static_cast<double>(n);
}

struct MetricsReport {
  double perm_exact_acc = 0.0;
  double perm_top5_acc = 0.0;
  double text_exact_match = 0.0;
  double text_token_acc = 0.0;
  double attention_visual_mass = 0.0;
  double qa_acc_original = 0.0;
  double qa_acc_blank = 0.0;
  std::size_t n_eval = 0;
  std::size_t text_truncated = 0;
  std::map<std::string, std::string> config;  // echoed settings
  std::string version = kVersion;

  static std::vector<std::string> columns() {
    return {"perm_exact_acc", "perm_top5_acc",   "text_exact_match", "text_token_acc", "attention_visual_mass",
            "qa_acc_original", "qa_acc_blank", "n_eval"};
  }

  std::vector<std::string> values() const {
    return {io::fmt_double(perm_exact_acc),   io::fmt_double(perm_top5_acc),   io::fmt_double(text_exact_match),
            io::fmt_double(text_token_acc),   io::fmt_double(attention_visual_mass), io::fmt_double(qa_acc_original),
            io::fmt_double(qa_acc_blank),     std::to_string(n_eval)};
  }

  // `key: value` lines.
  std::string text() const {
    std::ostringstream os;
    const auto cols = columns();
    const auto vals = values();
    for (std::size_t i = 0; i < cols.size(); ++i) os << cols[i] << ": " << vals[i] << '\n';
    os << "text_truncated: " << text_truncated << '\n';
    for (const auto& [k, v] : config) os << "config." << k << ": " << v << '\n';
    os << "version: " << version << '\n';
    return os.str();
  }
};

// Every metric on the validation split. `perms` may be null when the model
// was trained without image order; the permutation metrics then stay zero.
inline MetricsReport evaluate(const ModelParams& params, const Corpus& corpus, const PermutationSet* perms,
                              const EvalOptions& o = {}) {
  const auto vocab = corpus.spec.vocabulary();
  MetricsReport r;
  r.n_eval = detail::eval_count(corpus.val, o);
  if (perms != nullptr) {
    const auto order = eval_image_order(params, corpus.val, *perms, vocab, o);
    r.perm_exact_acc = order.exact.value();
    r.perm_top5_acc = order.top5.value();
  }
  const auto to = eval_text_order(params, corpus.val, vocab, o);
  r.text_exact_match = to.exact.value();
  r.text_token_acc = to.token.value();
  r.text_truncated = to.truncated;
  r.attention_visual_mass = mean_attention_mass(params, corpus.val, vocab, o);
  r.qa_acc_original = eval_qa(params, corpus.val, vocab, o, o.blank).value();
  r.qa_acc_blank = eval_qa(params, corpus.val, vocab, o, true).value();
  r.config["mode"] = to_string(o.mode);
  r.config["blank"] = o.blank ? "true" : "false";
  r.config["seed"] = std::to_string(o.seed);
  r.config["k_classes"] = std::to_string(params.config.k_classes);
  r.config["d_model"] = std::to_string(params.config.d_model);
  r.config["n_layers"] = std::to_string(params.config.n_layers);
  return r;
}

}  // namespace dlva
