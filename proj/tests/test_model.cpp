// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dlva/model/checkpoint.hpp"
#include "dlva/model/forward.hpp"
#include "dlva/model/gradcheck_model.hpp"
#include "dlva/numerics/gradcheck.hpp"
#include "dlva/sequence/builders.hpp"

using namespace dlva;

namespace {

struct Fixture {
  CorpusSpec spec;
  Corpus corpus;
  PermutationSet perms;
  SequenceBuilder builder;
  ModelConfig config;

  Fixture()
      : spec([] {
          CorpusSpec s;
          s.n_samples = 40;
          s.n_val = 10;
          return s;
        }()),
        corpus(generate_corpus(spec)),
        perms(generate_set(16, 24, SelectionObjective::min_avg, 5)),
        builder(spec.vocabulary()) {
    config.d_model = 32;
    config.n_heads = 4;
    config.k_classes = 24;
    config.connector_hidden = 32;
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

TokenSequence image_order_seq(std::uint64_t seed, std::size_t sample = 0) {
  Rng rng(seed);
  return fx().builder.build_image_order(fx().corpus.train[sample], fx().perms, rng);
}

std::vector<double> row(const TensorPtr& t, std::size_t r) {
  return {t->data.begin() + static_cast<std::ptrdiff_t>(r * t->cols()),
          t->data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t->cols())};
}

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Init, DeterministicPerSeed) {
  const auto a = init_params(fx().config, 7), b = init_params(fx().config, 7), c = init_params(fx().config, 8);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].second->data, nb[i].second->data);
    any_diff = any_diff || na[i].second->data != nc[i].second->data;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Init, GainsOneBiasesZero) {
  const auto p = init_params(fx().config, 1);
  for (const auto& [name, t] : p.named()) {
    if (name.ends_with(".gain")) {
      for (double v : t->data) EXPECT_EQ(v, 1.0);
    }
    if (name.ends_with(".bias")) {
      for (double v : t->data) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Init, ParameterCountMatchesClosedForm) {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.vocab_size = 64;
  c.k_classes = 24;
  c.patch_pixels = 108;
  c.connector_hidden = 48;
  c.max_seq_len = 64;
  const std::size_t d = 32, P = 108, Hc = 48, V = 64, S = 64, K = 24, L = 2;
  const std::size_t patch = P * d + d;
  const std::size_t connector = d * Hc + Hc + Hc * d + d;
  const std::size_t embed = V * d + S * d;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t mlp = d * 4 * d + 4 * d + 4 * d * d + d;
  const std::size_t norms_per_layer = 2 * 2 * d;
  const std::size_t head = 2 * d + d * V + V;
  const std::size_t order = 2 * d + d * K + K;
  const std::size_t expected = patch + connector + embed + L * (attention + mlp + norms_per_layer) + head + order;
  EXPECT_EQ(init_params(c, 1).parameter_count(), expected);
  EXPECT_EQ(expected, 3488u + 3152u + 4096u + 2u * (4224u + 8352u + 128u) + 2176u + 856u);
}

TEST(Config, Validation) {
  ModelConfig c;
  c.n_heads = 3;
  EXPECT_THROW(validate(c), Error);
  c = ModelConfig{};
  c.k_classes = 1;
  EXPECT_THROW(validate(c), Error);
  c = ModelConfig{};
  c.d_model = 0;
  EXPECT_THROW(validate(c), Error);
}

TEST(Forward, CausalityPerturbation) {
  const auto p = init_params(fx().config, 3);
  auto seq = image_order_seq(4);
  Tape t0(Tape::Mode::inference);
  const auto base = forward(t0, p, seq).lm_logits;
  for (std::size_t j = 1; j < seq.size(); ++j) {
    auto mod = seq;
    if (mod.items[j].role == TokenRole::image_patch) mod.items[j].payload = (mod.items[j].payload + 1) % 16;
    else mod.items[j].payload = mod.items[j].payload == 5 ? 6 : 5;
    Tape t(Tape::Mode::inference);
    const auto out = forward(t, p, mod).lm_logits;
    for (std::size_t r = 0; r < j; ++r) EXPECT_EQ(row(out, r), row(base, r)) << "j=" << j << " r=" << r;
    EXPECT_NE(row(out, j), row(base, j)) << "j=" << j;
  }
}

TEST(Forward, AttentionRowsStochasticAndCausal) {
  const auto p = init_params(fx().config, 3, 0.5);
  const auto seq = image_order_seq(5);
  Tape t(Tape::Mode::inference);
  const auto out = forward(t, p, seq, true);
  ASSERT_EQ(out.attention.weights.size(), p.config.n_layers * p.config.n_heads);
  for (const auto& a : out.attention.weights)
    for (std::size_t r = 0; r < seq.size(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < seq.size(); ++c) {
        if (c > r) {
          EXPECT_EQ(a->at(r, c), 0.0);
        }
        s += a->at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Forward, NoAttentionUnlessRequested) {
  const auto p = init_params(fx().config, 3);
  Tape t(Tape::Mode::inference);
  EXPECT_TRUE(forward(t, p, image_order_seq(1)).attention.empty());
}

TEST(Forward, OrderLogitsOnlyWithDrt) {
  const auto p = init_params(fx().config, 3);
  Rng rng(2);
  const auto cap = fx().builder.build_caption_pretrain(fx().corpus.train[0], rng);
  Tape t(Tape::Mode::inference);
  EXPECT_FALSE(forward(t, p, cap).order_logits);
  const auto out = forward(t, p, image_order_seq(2));
  ASSERT_TRUE(out.order_logits);
  EXPECT_EQ((*out.order_logits)->numel(), 24u);
}

TEST(Forward, DrtAtEndSeesTextDrtAtStartDoesNot) {
  const auto p = init_params(fx().config, 3, 0.3);
  auto seq = image_order_seq(6);
  auto with_caption = [&](const TokenSequence& s, TokenId replacement) {
    auto mod = s;
    for (auto& it : mod.items)
      if (it.role == TokenRole::question) it.payload = replacement;
    Tape t(Tape::Mode::inference);
    return (*forward(t, p, mod).order_logits)->data;
  };
  EXPECT_NE(with_caption(seq, 5), with_caption(seq, 6));

  // Hypothetical layout with the directed token right after BOS: causally it
  // cannot see anything that follows, so caption edits leave it unchanged.
  TokenSequence first;
  first.image = seq.image;
  first.push_token(TokenRole::bos, Vocabulary::bos, false);
  first.push_token(TokenRole::drt, Vocabulary::drt, false);
  for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
    const auto& it = seq.items[i];
    if (it.role == TokenRole::image_patch) first.push_patch(it.payload);
    else first.push_token(it.role, it.payload, false);
  }
  EXPECT_EQ(*first.drt_position, 1u);
  EXPECT_EQ(with_caption(first, 5), with_caption(first, 6));
}

TEST(Forward, DrtGradientReachesEveryEarlierPosition) {
  auto p = init_params(fx().config, 9, 0.3);
  const auto seq = image_order_seq(7);
  Tape t;
  const auto out = forward(t, p, seq);
  const std::size_t target[] = {3};
  t.backward(ops::cross_entropy(t, *out.order_logits, target));
  const auto& g = p.pos_embed->grad;
  const std::size_t d = p.config.d_model;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    double norm = 0;
    for (std::size_t c = 0; c < d; ++c) norm += g[i * d + c] * g[i * d + c];
    EXPECT_GT(norm, 0.0) << "position " << i;
  }
  for (std::size_t i = seq.size(); i < p.config.max_seq_len; ++i)
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(g[i * d + c], 0.0);
}

TEST(Forward, Errors) {
  const auto p = init_params(fx().config, 3);
  auto seq = image_order_seq(1);
  Tape t(Tape::Mode::inference);
  auto bad = seq;
  bad.items.back().payload = 999;
  try {
    forward(t, p, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::index);
  }
  auto longer = seq;
  while (longer.size() <= p.config.max_seq_len) longer.push_token(TokenRole::question, 5, false);
  try {
    forward(t, p, longer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::capacity);
  }
}

TEST(PredictPermutation, Modes) {
  const auto p = init_params(fx().config, 3, 0.3);
  const auto seq = image_order_seq(8);
  Tape t(Tape::Mode::inference);
  const auto out = forward(t, p, seq);
  EXPECT_EQ(predict_permutation(t, p, out, seq, OrderMode::drt)->data, (*out.order_logits)->data);
  EXPECT_NE(predict_permutation(t, p, out, seq, OrderMode::vis)->data, (*out.order_logits)->data);

  auto no_drt = seq;
  no_drt.drt_position.reset();
  Tape t2(Tape::Mode::inference);
  const auto out2 = forward(t2, p, no_drt);
  EXPECT_THROW(predict_permutation(t2, p, out2, no_drt, OrderMode::drt), Error);
}

TEST(PredictPermutation, VisOnSinglePatchEqualsHeadOfThatState) {
  ModelConfig c = fx().config;
  c.n_patches = 1;
  c.patch_pixels = 108;
  const auto p = init_params(c, 4, 0.3);
  SynthImage img = render_image(1, 6, std::vector<Cell>(1));
  TokenSequence seq;
  seq.image = img;
  seq.push_token(TokenRole::bos, 0, false);
  seq.push_token(TokenRole::question, 5, false);
  seq.push_patch(0);
  seq.push_token(TokenRole::drt, Vocabulary::drt, false);
  Tape t(Tape::Mode::inference);
  const auto out = forward(t, p, seq);
  const std::size_t r[] = {2};
  const auto expected = detail::order_head(t, p, ops::gather_rows(t, out.last_hidden, r));
  EXPECT_EQ(predict_permutation(t, p, out, seq, OrderMode::vis)->data, expected->data);
  TokenSequence no_image;
  no_image.push_token(TokenRole::bos, 0, false);
  EXPECT_THROW(predict_permutation(t, p, forward(t, p, no_image), no_image, OrderMode::vis), Error);
}

TEST(Gradcheck, FullModelSmallConfig) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.k_classes = 24;
  c.connector_hidden = 16;
  c.max_seq_len = 40;
  auto p = init_params(c, 12, 0.3);
  const auto seq = image_order_seq(9);
  auto f = [&](Tape& t) {
    const auto out = forward(t, p, seq);
    const std::size_t target[] = {*seq.perm_target};
    return ops::cross_entropy(t, *out.order_logits, target);
  };
  GradcheckOptions opt;
  opt.max_coords_per_tensor = 6;
  const auto r = gradcheck_model(f, p, opt);
  EXPECT_LE(r.result.max_rel_error, 1e-4) << r.worst_name << "[" << r.result.worst_coord << "]";
  EXPECT_LE(r.invariant.max_abs_error, 1e-9);
  EXPECT_GT(r.result.coords_checked, 100u);
}

TEST(Checkpoint, RoundTripForwardBitExact) {
  const auto p = init_params(fx().config, 21, 0.1);
  const auto path = temp_path("dlva_model_ck.bin");
  save_checkpoint(p, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.params.config, p.config);
  const auto seq = image_order_seq(3);
  Tape a(Tape::Mode::inference), b(Tape::Mode::inference);
  const auto oa = forward(a, p, seq), ob = forward(b, back.params, seq);
  EXPECT_EQ(oa.lm_logits->data, ob.lm_logits->data);
  EXPECT_EQ((*oa.order_logits)->data, (*ob.order_logits)->data);
  std::remove(path.c_str());
}

TEST(Checkpoint, SizeMatchesFormatArithmetic) {
  const auto p = init_params(fx().config, 1);
  Checkpoint ck;
  ck.params = p;
  const auto bytes = serialize_checkpoint(ck);
  std::size_t expected = 4 + 4 + 4 + to_text(p.config).size() + 4;
  for (const auto& [name, t] : p.named()) expected += 2 + name.size() + 1 + 4 * t->rank() + 8 * t->numel();
  EXPECT_EQ(bytes.size(), expected);
}

TEST(Checkpoint, CorruptionIsFormatError) {
  Checkpoint ck;
  ck.params = init_params(fx().config, 1);
  const auto bytes = serialize_checkpoint(ck);
  auto expect_format = [](const std::string& b) {
    try {
      deserialize_checkpoint(b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
    }
  };
  for (std::size_t i = 0; i < 8; ++i) {
    auto b = bytes;
    b[i] = static_cast<char>(b[i] ^ 0x5a);
    expect_format(b);
  }
  expect_format(bytes.substr(0, bytes.size() / 2));
  expect_format(bytes + "x");
}

TEST(Checkpoint, MetaAndOptimizerStateRoundTrip) {
  Checkpoint ck;
  ck.params = init_params(fx().config, 2);
  ck.meta["train.step"] = "17";
  OptimizerState s;
  s.t = 17;
  for (const auto& [name, t] : ck.params.named()) {
    s.m[name] = std::vector<double>(t->numel(), 0.25);
    s.v[name] = std::vector<double>(t->numel(), 0.5);
  }
  ck.optimizer = s;
  const auto bytes = serialize_checkpoint(ck);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.meta, ck.meta);
  ASSERT_TRUE(back.optimizer);
  EXPECT_EQ(back.optimizer->t, 17);
  EXPECT_EQ(back.optimizer->m, s.m);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}
