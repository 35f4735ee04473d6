// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "dlva/sequence/builders.hpp"

using namespace dlva;

namespace {

struct Fixture {
  CorpusSpec spec;
  Corpus corpus;
  PermutationSet perms;
  SequenceBuilder builder;

  Fixture()
      : spec([] {
          CorpusSpec s;
          s.n_samples = 200;
          s.n_val = 20;
          return s;
        }()),
        corpus(generate_corpus(spec)),
        perms(generate_set(16, 24, SelectionObjective::min_avg, 5)),
        builder(spec.vocabulary()) {}
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

// Checks the structural invariants every builder must satisfy.
void check_invariants(const TokenSequence& seq) {
  ASSERT_EQ(seq.lm_targets.size(), seq.size());
  ASSERT_EQ(seq.lm_mask.size(), seq.size());
  std::set<std::size_t> v(seq.visual_set.begin(), seq.visual_set.end());
  std::set<std::size_t> r(seq.response_set.begin(), seq.response_set.end());
  for (auto p : v) EXPECT_EQ(r.count(p), 0u);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& it = seq.items[i];
    EXPECT_EQ(it.role == TokenRole::image_patch, v.count(i) == 1);
    EXPECT_EQ(it.role == TokenRole::answer, r.count(i) == 1);
    if (seq.lm_mask[i]) {
      ASSERT_TRUE(seq.lm_targets[i].has_value());
    }
    if (it.role != TokenRole::image_patch) {
      EXPECT_EQ(*seq.lm_targets[i], it.payload);
    }
  }
  // No loss before the first response token.
  if (!seq.response_set.empty()) {
    for (std::size_t i = 0; i < seq.response_set.front(); ++i) EXPECT_FALSE(seq.lm_mask[i]);
  }
  EXPECT_EQ(seq.items.front().role, TokenRole::bos);
}

}  // namespace

TEST(CaptionPretrain, StructureAndLength) {
  const auto& f = fx();
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto& conv = f.corpus.train[t];
    const auto seq = f.builder.build_caption_pretrain(conv, rng);
    check_invariants(seq);
    // q is 3 words for every caption question.
    EXPECT_EQ(seq.size(), 1 + 3 + 1 + 16 + 1 + conv.caption.size() + 1);
    EXPECT_EQ(seq.masked_positions().size(), conv.caption.size() + 1);
    EXPECT_EQ(seq.visual_set.size(), 16u);
    EXPECT_EQ(seq.response_set.size(), conv.caption.size());
    EXPECT_FALSE(seq.drt_position);
    EXPECT_FALSE(seq.perm_target);
    EXPECT_EQ(seq.items.back().role, TokenRole::sep);
  }
}

TEST(CaptionPretrain, HandCountedExample) {
  // q=3 tokens, 16 patches, p=5 tokens → 28 positions, 6 with loss.
  const auto& f = fx();
  Conversation conv = f.corpus.train[0];
  conv.caption.resize(5);
  Rng rng(4);
  const auto seq = f.builder.build_caption_pretrain(conv, rng);
  EXPECT_EQ(seq.size(), 28u);
  EXPECT_EQ(seq.masked_positions().size(), 6u);
}

TEST(CaptionPretrain, DeterministicAndLayoutBalanced) {
  const auto& f = fx();
  const auto& conv = f.corpus.train[0];
  Rng a(9), b(9);
  EXPECT_EQ(f.builder.build_caption_pretrain(conv, a), f.builder.build_caption_pretrain(conv, b));
  std::size_t question_first = 0;
  const std::size_t n = 10000;
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(derive_seed(123, {s}));
    const auto seq = f.builder.build_caption_pretrain(conv, rng);
    question_first += seq.items[1].role == TokenRole::question;
  }
  EXPECT_NEAR(static_cast<double>(question_first) / n, 0.5, 0.02);
}

TEST(CaptionPretrain, MissingImageIsDataError) {
  const auto& f = fx();
  Conversation conv = f.corpus.train[0];
  conv.image = SynthImage{};
  Rng rng(1);
  try {
    f.builder.build_caption_pretrain(conv, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(ImageOrder, DrtLastAndNoTextLoss) {
  const auto& f = fx();
  for (std::size_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(7, {s}));
    const auto& conv = f.corpus.train[s % f.corpus.train.size()];
    const auto seq = f.builder.build_image_order(conv, f.perms, rng);
    check_invariants(seq);
    ASSERT_TRUE(seq.drt_position);
    EXPECT_EQ(*seq.drt_position, seq.size() - 1);
    EXPECT_EQ(seq.items.back().role, TokenRole::drt);
    EXPECT_TRUE(seq.masked_positions().empty());
    ASSERT_TRUE(seq.perm_target);
    EXPECT_LT(*seq.perm_target, f.perms.size());
    EXPECT_EQ(seq.image.applied_order, f.perms.perms[*seq.perm_target].indices());
    EXPECT_EQ(seq.visual_set.size(), 16u);
  }
}

TEST(ImageOrder, IdentityDrawLeavesPixels) {
  const auto& f = fx();
  PermutationSet set = f.perms;
  set.perms[0] = Permutation::identity(16);
  const auto& conv = f.corpus.train[0];
  for (std::size_t s = 0;; ++s) {
    Rng rng(s);
    const auto seq = f.builder.build_image_order(conv, set, rng);
    if (*seq.perm_target != 0) continue;
    EXPECT_EQ(seq.image.pixels, conv.image.pixels);
    EXPECT_EQ(set.index_of(Permutation::identity(16)), std::optional<std::size_t>(0));
    break;
  }
}

TEST(ImageOrder, TargetUniform) {
  const auto& f = fx();
  const auto& conv = f.corpus.train[0];
  const std::size_t n = 10000, k = f.perms.size();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(derive_seed(55, {s}));
    ++counts[*f.builder.build_image_order(conv, f.perms, rng).perm_target];
  }
  const double mean = static_cast<double>(n) / k, sd = std::sqrt(mean * (1.0 - 1.0 / k));
  for (auto c : counts) EXPECT_NEAR(static_cast<double>(c), mean, 3.0 * sd + 1.0);
}

TEST(ImageOrder, PatchCountMismatch) {
  const auto& f = fx();
  const auto small = generate_set(9, 5, SelectionObjective::random, 1);
  Rng rng(1);
  try {
    f.builder.build_image_order(f.corpus.train[0], small, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(ImageOrder, OptionalCaptionLoss) {
  const auto& f = fx();
  SequenceBuilder b(f.spec.vocabulary(), BuilderOptions{true});
  Rng rng(3);
  const auto seq = b.build_image_order(f.corpus.train[0], f.perms, rng);
  EXPECT_EQ(seq.masked_positions().size(), f.corpus.train[0].caption.size());
}

TEST(TextOrder, AnswerIsCaptionThenDrt) {
  const auto& f = fx();
  const auto v = f.spec.vocabulary();
  for (std::size_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(8, {s}));
    const auto& conv = f.corpus.train[s];
    const auto seq = f.builder.build_text_order(conv, rng);
    ASSERT_TRUE(seq);
    check_invariants(*seq);
    const auto masked = seq->masked_positions();
    ASSERT_EQ(masked.size(), conv.caption.size() + 1);
    for (std::size_t i = 0; i < conv.caption.size(); ++i) EXPECT_EQ(*seq->lm_targets[masked[i]], conv.caption[i]);
    EXPECT_EQ(*seq->lm_targets[masked.back()], Vocabulary::drt);
    EXPECT_EQ(*seq->drt_position, seq->size() - 1);
    // The shuffled span is a permutation of the caption.
    std::vector<TokenId> shuffled;
    for (const auto& it : seq->items)
      if (it.role == TokenRole::shuffled_text) shuffled.push_back(it.payload);
    auto a = shuffled, b = conv.caption;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(seq->response_set.size(), conv.caption.size());
    EXPECT_GT(seq->response_set.front(), seq->visual_set.back());
  }
}

TEST(TextOrder, ShortCaptionIsSkipped) {
  const auto& f = fx();
  Conversation conv = f.corpus.train[0];
  conv.caption.resize(1);
  Rng rng(1);
  EXPECT_FALSE(f.builder.build_text_order(conv, rng));
}

TEST(TextOrder, LayoutBalanced) {
  const auto& f = fx();
  const auto& conv = f.corpus.train[0];
  std::size_t prompt_first = 0;
  const std::size_t n = 10000;
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(derive_seed(77, {s}));
    prompt_first += f.builder.build_text_order(conv, rng)->items[1].role == TokenRole::reorder_prompt;
  }
  EXPECT_NEAR(static_cast<double>(prompt_first) / n, 0.5, 0.02);
}

TEST(Finetune, TwoTurnStructure) {
  const auto& f = fx();
  for (const auto& conv : f.corpus.train) {
    if (conv.turns.size() != 2) continue;
    Rng rng(2);
    const auto seq = f.builder.build_finetune(conv, nullptr, rng, false);
    check_invariants(seq);
    EXPECT_FALSE(seq.perm_target);
    EXPECT_EQ(*seq.drt_position, seq.size() - 1);
    EXPECT_EQ(seq.masked_positions().size(), conv.turns[0].answer.size() + conv.turns[1].answer.size() + 2 + 1);
    EXPECT_EQ(*seq.lm_targets.back(), Vocabulary::drt);
    EXPECT_TRUE(seq.lm_mask.back());
    break;
  }
}

TEST(Finetune, ShuffledIdentityMatchesUnshuffled) {
  const auto& f = fx();
  PermutationSet set;
  set.n = 16;
  set.perms = {Permutation::identity(16)};
  const auto& conv = f.corpus.train[5];
  Rng a(11), b(11);
  auto plain = f.builder.build_finetune(conv, nullptr, a, false);
  auto shuffled = f.builder.build_finetune(conv, &set, b, true);
  ASSERT_TRUE(shuffled.perm_target);
  EXPECT_EQ(*shuffled.perm_target, 0u);
  shuffled.perm_target.reset();
  EXPECT_EQ(plain, shuffled);
}

TEST(Finetune, DisjointSetsOverCorpus) {
  const auto& f = fx();
  std::size_t n = 0;
  for (std::size_t rep = 0; n < 1000; ++rep)
    for (const auto& conv : f.corpus.train) {
      if (n++ >= 1000) break;
      Rng rng(derive_seed(rep, {n}));
      check_invariants(f.builder.build_finetune(conv, &f.perms, rng, rng.coin()));
    }
}

TEST(Finetune, EmptyTurnsIsDataError) {
  const auto& f = fx();
  Conversation conv = f.corpus.train[0];
  conv.turns.clear();
  Rng rng(1);
  try {
    f.builder.build_finetune(conv, nullptr, rng, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Dump, Format) {
  TokenSequence seq;
  seq.push_token(TokenRole::bos, 0, false);
  seq.push_patch(3);
  seq.push_token(TokenRole::answer, 17, true);
  EXPECT_EQ(dump_sequence(seq), "0 BOS 0 0 0\n1 IMAGE_PATCH patch:3 - 0\n2 ANSWER 17 17 1\n");
}
