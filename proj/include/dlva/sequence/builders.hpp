// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "dlva/permute/permutation_set.hpp"
#include "dlva/permute/shuffle.hpp"
#include "dlva/rng.hpp"
#include "dlva/sequence/token_sequence.hpp"
#include "dlva/synthdata/corpus.hpp"

namespace dlva {

struct BuilderOptions {
  // Also apply next-token loss over the caption inside image-order sequences.
  bool caption_loss_in_image_order = false;
};

// Assembles the token layouts for every task. Each builder draws all of its
// randomness from the Rng it is handed, in a fixed order, so (inputs, seed)
// fully determines the result.
class SequenceBuilder {
 public:
  explicit SequenceBuilder(Vocabulary vocab, BuilderOptions options = {})
      : vocab_(std::move(vocab)), options_(options) {
    for (const auto& q : kCaptionQuestions) caption_questions_.push_back(vocab_.encode(q));
    reorder_prompt_ = vocab_.encode(kReorderPrompt);
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  const BuilderOptions& options() const { return options_; }
  const std::vector<TokenId>& reorder_prompt() const { return reorder_prompt_; }

  // [BOS, q, SEP, image, SEP, p, SEP] or [BOS, image, SEP, q, SEP, p, SEP];
  // loss on the caption and its closing SEP.
  TokenSequence build_caption_pretrain(const Conversation& conv, Rng& rng) const {
    require_image(conv);
    if (conv.caption.empty()) fail(ErrorKind::data, "caption is empty");
    const auto& question = caption_questions_[rng.below(caption_questions_.size())];
    const bool question_first = rng.coin();
    TokenSequence seq = start(SequenceKind::caption, conv.image);
    if (question_first) {
      push_text(seq, TokenRole::question, question, false);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_image(seq);
    } else {
      push_image(seq);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::question, question, false);
    }
    seq.push_token(TokenRole::sep, Vocabulary::sep, false);
    push_text(seq, TokenRole::answer, conv.caption, true);
    seq.push_token(TokenRole::sep, Vocabulary::sep, true);
    return seq;
  }

  // [BOS, p, SEP, x̄, DRT] or [BOS, x̄, SEP, p, DRT] with x̄ the image shuffled
  // by a uniformly drawn library member; that member's index is the target.
  TokenSequence build_image_order(const Conversation& conv, const PermutationSet& perms, Rng& rng) const {
    require_image(conv);
    if (perms.n != conv.image.n_patches())
      fail(ErrorKind::dimension, "permutation set over " + std::to_string(perms.n) + " patches for an image of " +
                                     std::to_string(conv.image.n_patches()));
    if (perms.size() == 0) fail(ErrorKind::config, "empty permutation set");
    const std::size_t j = rng.below(perms.size());
    const bool caption_first = rng.coin();
    TokenSequence seq = start(SequenceKind::image_order, shuffle_image(conv.image, perms.perms[j]));
    const bool caption_loss = options_.caption_loss_in_image_order;
    if (caption_first) {
      push_text(seq, TokenRole::question, conv.caption, caption_loss);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_image(seq);
    } else {
      push_image(seq);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::question, conv.caption, caption_loss);
    }
    seq.push_token(TokenRole::drt, Vocabulary::drt, false);
    seq.perm_target = j;
    return seq;
  }

  // [BOS, q, SEP, p̄, SEP, image, SEP] or [BOS, image, SEP, q, SEP, p̄, SEP],
  // answered by [p, DRT]. Returns nullopt for captions shorter than two words;
  // the caller should draw another sample.
  std::optional<TokenSequence> build_text_order(const Conversation& conv, Rng& rng) const {
    require_image(conv);
    if (conv.caption.size() < 2) return std::nullopt;
    const auto shuffled = shuffle_text(conv.caption, rng);
    const bool prompt_first = rng.coin();
    TokenSequence seq = start(SequenceKind::text_order, conv.image);
    if (prompt_first) {
      push_text(seq, TokenRole::reorder_prompt, reorder_prompt_, false);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::shuffled_text, shuffled.words, false);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_image(seq);
    } else {
      push_image(seq);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::reorder_prompt, reorder_prompt_, false);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::shuffled_text, shuffled.words, false);
    }
    seq.push_token(TokenRole::sep, Vocabulary::sep, false);
    push_text(seq, TokenRole::answer, conv.caption, true);
    seq.push_token(TokenRole::drt, Vocabulary::drt, true);
    return seq;
  }

  // Multi-turn conversation. Turn 1 places the image before or after its
  // question; every answer is followed by SEP; DRT closes the last answer.
  // With `shuffled`, the image is replaced by a library shuffle and the
  // member index becomes the order target.
  TokenSequence build_finetune(const Conversation& conv, const PermutationSet* perms, Rng& rng, bool shuffled) const {
    require_image(conv);
    if (conv.turns.empty()) fail(ErrorKind::data, "conversation has no turns");
    const bool question_first = rng.coin();
    std::optional<std::size_t> j;
    SynthImage image = conv.image;
    if (shuffled) {
      if (perms == nullptr || perms->size() == 0) fail(ErrorKind::config, "shuffled conversation needs a permutation set");
      if (perms->n != conv.image.n_patches())
        fail(ErrorKind::dimension, "permutation set over " + std::to_string(perms->n) + " patches for an image of " +
                                       std::to_string(conv.image.n_patches()));
      j = rng.below(perms->size());
      image = shuffle_image(conv.image, perms->perms[*j]);
    }
    TokenSequence seq = start(SequenceKind::conversation, std::move(image));
    const auto& first = conv.turns.front();
    if (question_first) {
      push_text(seq, TokenRole::question, first.question, false);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_image(seq);
    } else {
      push_image(seq);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::question, first.question, false);
    }
    seq.push_token(TokenRole::sep, Vocabulary::sep, false);
    push_text(seq, TokenRole::answer, first.answer, true);
    seq.push_token(TokenRole::sep, Vocabulary::sep, true);
    for (std::size_t t = 1; t < conv.turns.size(); ++t) {
      push_text(seq, TokenRole::question, conv.turns[t].question, false);
      seq.push_token(TokenRole::sep, Vocabulary::sep, false);
      push_text(seq, TokenRole::answer, conv.turns[t].answer, true);
      seq.push_token(TokenRole::sep, Vocabulary::sep, true);
    }
    seq.push_token(TokenRole::drt, Vocabulary::drt, true);
    seq.perm_target = j;
    return seq;
  }

 private:
  static void require_image(const Conversation& conv) {
    if (conv.image.pixels.empty() || conv.image.n_patches() == 0) fail(ErrorKind::data, "sample has no image");
  }

  static TokenSequence start(SequenceKind kind, SynthImage image) {
    TokenSequence seq;
    seq.kind = kind;
    seq.image = std::move(image);
    seq.push_token(TokenRole::bos, Vocabulary::bos, false);
    return seq;
  }

  static void push_text(TokenSequence& seq, TokenRole role, const std::vector<TokenId>& ids, bool loss) {
    for (auto id : ids) seq.push_token(role, id, loss);
  }

  static void push_image(TokenSequence& seq) {
    for (std::size_t p = 0; p < seq.image.n_patches(); ++p) seq.push_patch(p);
  }

  Vocabulary vocab_;
  BuilderOptions options_;
  std::vector<std::vector<TokenId>> caption_questions_;
  std::vector<TokenId> reorder_prompt_;
};

}  // namespace dlva
