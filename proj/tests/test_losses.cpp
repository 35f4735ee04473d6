// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dlva/losses/losses.hpp"
#include "dlva/model/gradcheck_model.hpp"
#include "dlva/sequence/builders.hpp"

using namespace dlva;

namespace {

// Random causal row-stochastic attention for `layers`×`heads`.
AttentionRecord random_attention(std::size_t layers, std::size_t heads, std::size_t s, Rng& rng) {
  AttentionRecord a;
  a.layers = layers;
  a.heads = heads;
  for (std::size_t i = 0; i < layers * heads; ++i) {
    auto t = zeros({s, s});
    for (std::size_t r = 0; r < s; ++r) {
      double z = 0;
      for (std::size_t c = 0; c <= r; ++c) {
        const double u = rng.uniform();
        const double w = u * u * u;  // skewed so some rows concentrate
        t->at(r, c) = w;
        z += w;
      }
      if (z == 0) t->at(r, 0) = z = 1;
      for (std::size_t c = 0; c <= r; ++c) t->at(r, c) /= z;
    }
    a.weights.push_back(t);
  }
  return a;
}

AttentionRecord uniform_causal(std::size_t layers, std::size_t heads, std::size_t s) {
  AttentionRecord a;
  a.layers = layers;
  a.heads = heads;
  for (std::size_t i = 0; i < layers * heads; ++i) {
    auto t = zeros({s, s});
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c <= r; ++c) t->at(r, c) = 1.0 / static_cast<double>(r + 1);
    a.weights.push_back(t);
  }
  return a;
}

// Scalar-loop oracle for the image-to-response loss.
double i2r_oracle(const AttentionRecord& a, const std::vector<std::size_t>& v, const std::vector<std::size_t>& r) {
  double s = 0;
  for (std::size_t l = 0; l < a.layers; ++l)
    for (auto vi : v)
      for (auto ri : r) {
        double alpha = 0;
        for (std::size_t h = 0; h < a.heads; ++h) alpha += a.at(l, h)->at(ri, vi);
        alpha /= static_cast<double>(a.heads);
        s += 1.0 - alpha;
      }
  return s / static_cast<double>(a.layers * v.size() * r.size());
}

struct Fixture {
  CorpusSpec spec;
  Corpus corpus;
  PermutationSet perms;
  SequenceBuilder builder;
  ModelConfig config;
  Fixture()
      : spec([] {
          CorpusSpec s;
          s.n_samples = 30;
          s.n_val = 10;
          return s;
        }()),
        corpus(generate_corpus(spec)),
        perms(generate_set(16, 24, SelectionObjective::min_avg, 2)),
        builder(spec.vocabulary()) {
    config.d_model = 16;
    config.n_layers = 2;
    config.n_heads = 2;
    config.k_classes = 24;
    config.connector_hidden = 16;
    config.max_seq_len = 48;
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(Autoregressive, UniformLogitsGiveLogV) {
  Rng rng(1);
  const auto seq = fx().builder.build_caption_pretrain(fx().corpus.train[0], rng);
  ForwardOutput out;
  out.lm_logits = zeros({seq.size(), 64});
  Tape t;
  EXPECT_NEAR(loss_autoregressive(t, out, seq)->item(), std::log(64.0), 1e-12);
}

TEST(Autoregressive, ForcedTargetsNearZero) {
  Rng rng(1);
  const auto seq = fx().builder.build_caption_pretrain(fx().corpus.train[0], rng);
  ForwardOutput out;
  out.lm_logits = zeros({seq.size(), 64});
  for (std::size_t i = 1; i < seq.size(); ++i)
    if (seq.lm_mask[i]) out.lm_logits->at(i - 1, *seq.lm_targets[i]) = 30.0;
  Tape t;
  EXPECT_LT(loss_autoregressive(t, out, seq)->item(), 1e-10);
}

TEST(Autoregressive, MatchesScalarLoop) {
  Rng rng(3);
  const auto seq = fx().builder.build_caption_pretrain(fx().corpus.train[1], rng);
  ForwardOutput out;
  out.lm_logits = zeros({seq.size(), 64});
  Rng vals(4);
  for (auto& v : out.lm_logits->data) v = 3.0 * vals.normal();
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    if (!seq.lm_mask[i]) continue;
    double z = 0;
    for (std::size_t c = 0; c < 64; ++c) z += std::exp(out.lm_logits->at(i - 1, c));
    sum += std::log(z) - out.lm_logits->at(i - 1, *seq.lm_targets[i]);
    ++n;
  }
  Tape t;
  EXPECT_NEAR(loss_autoregressive(t, out, seq)->item(), sum / static_cast<double>(n), 1e-12);
}

TEST(Autoregressive, NoMaskedPositionsIsUsageError) {
  Rng rng(1);
  const auto seq = fx().builder.build_image_order(fx().corpus.train[0], fx().perms, rng);
  ForwardOutput out;
  out.lm_logits = zeros({seq.size(), 64});
  Tape t;
  try {
    loss_autoregressive(t, out, seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
}

TEST(ImageOrderLoss, UniformCorrectAndOracle) {
  Tape t;
  EXPECT_NEAR(loss_image_order(t, zeros({1, 100}), 37)->item(), std::log(100.0), 1e-12);
  EXPECT_NEAR(std::log(100.0), 4.60517, 1e-5);
  auto onehot = zeros({1, 24});
  onehot->data[5] = 50.0;
  EXPECT_LT(loss_image_order(t, onehot, 5)->item(), 1e-20);
  auto r = zeros({1, 24});
  Rng rng(6);
  for (auto& v : r->data) v = rng.normal();
  double z = 0;
  for (double v : r->data) z += std::exp(v);
  EXPECT_NEAR(loss_image_order(t, r, 11)->item(), std::log(z) - r->data[11], 1e-12);
  EXPECT_THROW(loss_image_order(t, std::nullopt, 1), Error);
  EXPECT_THROW(loss_image_order(t, r, std::nullopt), Error);
}

TEST(TextOrderLoss, SharesMaskWithAutoregressive) {
  Rng rng(2);
  const auto seq = *fx().builder.build_text_order(fx().corpus.train[0], rng);
  ForwardOutput out;
  out.lm_logits = zeros({seq.size(), 64});
  Tape t;
  EXPECT_NEAR(loss_text_order(t, out, seq)->item(), std::log(64.0), 1e-12);
  Rng vals(1);
  for (auto& v : out.lm_logits->data) v = vals.normal();
  EXPECT_EQ(loss_text_order(t, out, seq)->item(), loss_autoregressive(t, out, seq)->item());
  for (std::size_t i = 1; i < seq.size(); ++i)
    if (seq.lm_mask[i]) out.lm_logits->at(i - 1, *seq.lm_targets[i]) = 40.0;
  EXPECT_LT(loss_text_order(t, out, seq)->item(), 1e-10);
}

TEST(ImageToResponse, AllZeroAttentionIsOne) {
  AttentionRecord a;
  a.layers = 2;
  a.heads = 2;
  for (int i = 0; i < 4; ++i) a.weights.push_back(zeros({6, 6}));
  Tape t;
  EXPECT_EQ(loss_image_to_response(t, a, {0, 1}, {4, 5})->item(), 1.0);
}

TEST(ImageToResponse, HandCase) {
  // L=1, V={0,1}, R={4}; row 4 is uniform over 5 keys → 1 − (0.2+0.2)/2.
  const auto a = uniform_causal(1, 1, 5);
  Tape t;
  EXPECT_NEAR(loss_image_to_response(t, a, {0, 1}, {4})->item(), 0.8, 1e-12);
}

TEST(ImageToResponse, BoundsOverRandomStochasticTensors) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t s = 8;
    const auto a = random_attention(2, 2, s, rng);
    const std::vector<std::size_t> v{0, 1, 2, 3}, r{5, 6, 7};
    Tape t;
    const double l = loss_image_to_response(t, a, v, r)->item();
    EXPECT_GE(l, 1.0 - 1.0 / 4.0 - 1e-15);
    EXPECT_LE(l, 1.0);
    EXPECT_NEAR(l, i2r_oracle(a, v, r), 1e-12);
  }
}

TEST(ImageToResponse, PermutationInvariantOverSets) {
  Rng rng(5);
  const auto a = random_attention(2, 3, 9, rng);
  Tape t;
  const double base = loss_image_to_response(t, a, {1, 2, 3}, {6, 7, 8})->item();
  EXPECT_NEAR(loss_image_to_response(t, a, {3, 1, 2}, {8, 6, 7})->item(), base, 1e-15);
}

TEST(ImageToResponse, SumReductionScalesWithHeads) {
  Rng rng(8);
  const auto a = random_attention(1, 4, 6, rng);
  Tape t;
  const double mean = loss_image_to_response(t, a, {0, 1}, {4, 5}, HeadReduction::mean)->item();
  const double sum = loss_image_to_response(t, a, {0, 1}, {4, 5}, HeadReduction::sum)->item();
  EXPECT_NEAR(1.0 - sum, 4.0 * (1.0 - mean), 1e-12);
}

TEST(ImageToResponse, Errors) {
  const auto a = uniform_causal(1, 1, 5);
  Tape t;
  auto expect_kind = [&](auto fn, ErrorKind k) {
    try {
      fn();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), k);
    }
  };
  expect_kind([&] { loss_image_to_response(t, a, {}, {4}); }, ErrorKind::usage);
  expect_kind([&] { loss_image_to_response(t, a, {0}, {}); }, ErrorKind::usage);
  expect_kind([&] { loss_image_to_response(t, a, {0, 3}, {2}); }, ErrorKind::ordering);
  expect_kind([&] { loss_image_to_response(t, a, {0, 3}, {3}); }, ErrorKind::ordering);
}

TEST(ImageToResponse, EqualsOneMinusNormalisedVisualMass) {
  Rng rng(11);
  const std::vector<std::size_t> v{0, 1, 2}, r{5, 6};
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 50; ++i) {
    const auto a = random_attention(2, 2, 7, rng);
    Tape t;
    const double l = loss_image_to_response(t, a, v, r)->item();
    double mass = 0;
    for (const auto& w : a.weights)
      for (auto ri : r)
        for (auto vi : v) mass += w->at(ri, vi);
    // 2 layers × 2 heads, |V|=3, |R|=2
    EXPECT_NEAR(l, 1.0 - mass / (2.0 * 2.0 * 3.0 * 2.0), 1e-12);
    pts.emplace_back(l, mass);
  }
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].first > pts[i - 1].first) {
      EXPECT_LT(pts[i].second, pts[i - 1].second);
    }
}

TEST(Gradcheck, ThroughEachLoss) {
  const auto& f = fx();
  auto p = init_params(f.config, 31, 0.3);
  Rng r1(1), r2(2), r3(3);
  const auto cap = f.builder.build_caption_pretrain(f.corpus.train[0], r1);
  const auto io = f.builder.build_image_order(f.corpus.train[1], f.perms, r2);
  const auto to = *f.builder.build_text_order(f.corpus.train[2], r3);
  GradcheckOptions opt;
  opt.max_coords_per_tensor = 3;
  auto ce = [&](Tape& t) { return loss_autoregressive(t, forward(t, p, cap), cap); };
  auto order = [&](Tape& t) { return loss_image_order(t, forward(t, p, io).order_logits, io.perm_target); };
  auto text = [&](Tape& t) { return loss_text_order(t, forward(t, p, to), to); };
  auto i2r = [&](Tape& t) {
    const auto out = forward(t, p, cap, true);
    return loss_image_to_response(t, out.attention, cap.visual_set, cap.response_set);
  };
  const std::vector<std::pair<const char*, std::function<TensorPtr(Tape&)>>> losses = {
      {"ce", ce}, {"image_order", order}, {"text_order", text}, {"i2r", i2r}};
  for (const auto& [name, fn] : losses) {
    const auto res = gradcheck_model(fn, p, opt);
    EXPECT_LE(res.result.max_rel_error, 1e-4) << name << " " << res.worst_name;
    EXPECT_LE(res.invariant.max_abs_error, 1e-9) << name;
  }
}

TEST(Combine, Totals) {
  LossTerms all{1.0, 1.0, 1.0, 1.0};
  EXPECT_EQ(combine(all, {}, Stage::pretrain).total, 4.0);
  LossTerms ft{2.0, 3.0, std::nullopt, 0.5};
  EXPECT_EQ(combine(ft, {}, Stage::finetune).total, 5.5);
  EXPECT_EQ(combine(all, LossWeights{0, 0, 0, 0}, Stage::pretrain).total, 0.0);
  LossWeights w{0.5, 2.0, 0.25, 3.0};
  const auto b = combine(all, w, Stage::pretrain);
  EXPECT_NEAR(b.total, 0.5 + 2.0 + 0.25 + 3.0, 1e-12);
  EXPECT_FALSE(combine(ft, {}, Stage::finetune).terms.text_order.has_value());
}

TEST(Combine, TextOrderAtFinetuneIsStageError) {
  LossTerms all{1.0, 1.0, 1.0, 1.0};
  try {
    combine(all, {}, Stage::finetune);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::stage);
  }
  EXPECT_THROW(combine(all, LossWeights{-1, 1, 1, 1}, Stage::pretrain), Error);
}
