// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "dlva/numerics/adam.hpp"
#include "dlva/numerics/gradcheck.hpp"
#include "dlva/numerics/ops.hpp"
#include "dlva/rng.hpp"

using namespace dlva;

namespace {

TensorPtr random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0, bool rg = true) {
  Rng rng(seed);
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = scale * rng.normal();
  return make_tensor(std::move(shape), std::move(d), rg);
}

double gelu_ref(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

struct FaultGuard {
  explicit FaultGuard(GradientFault f) { gradient_fault() = f; }
  ~FaultGuard() { gradient_fault() = GradientFault::none; }
};

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(make_tensor({2, 0}, {}), Error);
  EXPECT_THROW(make_tensor({2, 2}, {1, 2, 3}), Error);
  try {
    make_tensor({3}, {1, 2});
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Ops, MatmulMatchesHandProduct) {
  Tape tape;
  auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = make_tensor({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = ops::matmul(tape, a, b);
  EXPECT_EQ(c->data, (std::vector<double>{58, 64, 139, 154}));
  auto d = ops::matmul_nt(tape, a, a);
  EXPECT_EQ(d->data, (std::vector<double>{14, 32, 32, 77}));
}

TEST(Ops, MatmulShapeMismatchIsDimensionError) {
  Tape tape;
  try {
    ops::matmul(tape, zeros({2, 3}), zeros({2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Ops, GeluMatchesReference) {
  Tape tape;
  auto x = make_tensor({5}, {-3, -0.5, 0, 0.7, 2.5});
  auto y = ops::gelu(tape, x);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y->data[i], gelu_ref(x->data[i]), 1e-15);
}

TEST(Ops, LayernormRowsHaveZeroMeanUnitVariance) {
  Tape tape;
  auto x = random_tensor({4, 8}, 3, 2.0, false);
  auto g = make_tensor({8}, std::vector<double>(8, 1.0));
  auto b = zeros({8});
  auto y = ops::layernorm(tape, x, g, b);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y->at(r, c);
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y->at(r, c) - m) * (y->at(r, c) - m);
    v /= 8;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);  // eps shifts the variance slightly
  }
}

TEST(Ops, MaskedSoftmaxExactZerosAndStochasticRows) {
  Tape tape;
  auto x = random_tensor({6, 6}, 5, 3.0, false);
  auto y = ops::masked_softmax(tape, x, Mask::causal(6));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      if (c > r) {
        EXPECT_EQ(y->at(r, c), 0.0);
      }
      s += y->at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, MaskedSoftmaxFullyMaskedRowIsDegenerate) {
  Tape tape;
  Mask m(2, 3, true);
  m.set(1, 0, false);
  m.set(1, 1, false);
  m.set(1, 2, false);
  try {
    ops::masked_softmax(tape, zeros({2, 3}), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_row);
  }
}

TEST(Ops, MaskedSoftmaxExtremeLogitsStayFinite) {
  Tape tape;
  auto x = make_tensor({1, 3}, {1000.0, -1000.0, 999.0});
  auto y = ops::masked_softmax(tape, x, Mask(1, 3));
  EXPECT_TRUE(y->all_finite());
  EXPECT_NEAR(y->data[0] + y->data[2], 1.0, 1e-12);
}

TEST(Ops, CrossEntropyUniformIsLogV) {
  Tape tape;
  const std::size_t t[] = {3, 7};
  auto l = ops::cross_entropy(tape, zeros({2, 64}), t);
  EXPECT_NEAR(l->item(), std::log(64.0), 1e-12);
}

TEST(Ops, CrossEntropyMatchesScalarLoop) {
  Tape tape;
  auto x = random_tensor({5, 11}, 9, 2.0, false);
  const std::size_t t[] = {0, 10, 4, 4, 7};
  const double w[] = {1.0, 0.5, 2.0, 0.0, 1.5};
  auto l = ops::cross_entropy(tape, x, t, w);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < 11; ++j) z += std::exp(x->at(i, j));
    num += w[i] * (std::log(z) - x->at(i, t[i]));
    den += w[i];
  }
  EXPECT_NEAR(l->item(), num / den, 1e-12);
}

TEST(Ops, CrossEntropyErrors) {
  Tape tape;
  const std::size_t bad[] = {5};
  EXPECT_THROW(ops::cross_entropy(tape, zeros({1, 5}), bad), Error);
  const std::size_t ok[] = {1};
  const double zero[] = {0.0};
  try {
    ops::cross_entropy(tape, zeros({1, 5}), ok, zero);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
}

TEST(Ops, NonFiniteOutputIsNumericError) {
  Tape tape;
  auto a = make_tensor({1, 1}, {1e300});
  try {
    ops::matmul(tape, a, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Tape, ReplaysInReverseOrder) {
  Tape tape;
  std::vector<int> order;
  tape.record([&] { order.push_back(1); });
  tape.record([&] { order.push_back(2); });
  tape.record([&] { order.push_back(3); });
  tape.backward(scalar(0.0, true));
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, InferenceModeRecordsNothing) {
  Tape tape(Tape::Mode::inference);
  auto a = random_tensor({2, 2}, 1);
  ops::matmul(tape, a, a);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Gradcheck, EveryOpPasses) {
  auto a = random_tensor({3, 4}, 11);
  auto b = random_tensor({4, 5}, 12);
  auto c = random_tensor({3, 4}, 13);
  auto bias = random_tensor({5}, 14);
  auto gain = random_tensor({5}, 15);
  const std::size_t targets[] = {1, 4, 0};
  const double weights[] = {1.0, 0.3, 2.0};
  std::vector<TensorPtr> params{a, b, c, bias, gain};
  auto f = [&](Tape& t) {
    auto x = ops::add(t, a, ops::scale(t, c, 0.7));
    auto y = ops::add_bias(t, ops::matmul(t, x, b), bias);
    y = ops::gelu(t, y);
    y = ops::layernorm(t, y, gain, bias);
    auto att = ops::masked_softmax(t, ops::matmul_nt(t, y, y), Mask::causal(3));
    auto z = ops::matmul(t, att, y);
    auto s = ops::slice_cols(t, z, 1, 3);
    auto cat = ops::concat_cols(t, {s, z});
    const std::size_t rows[] = {2, 0, 1};
    auto g = ops::gather_rows(t, cat, rows);
    auto l1 = ops::cross_entropy(t, g, targets, weights);
    const std::size_t mrows[] = {0, 2};
    auto l2 = ops::mean_rows(t, z, mrows);
    const std::size_t one[] = {3};
    auto l3 = ops::cross_entropy(t, l2, one);
    return ops::weighted_sum(t, {l1, l3}, {1.0, 0.5});
  };
  auto r = gradcheck(f, params);
  EXPECT_LE(r.max_rel_error, 1e-6) << "tensor " << r.worst_tensor << " coord " << r.worst_coord;
}

TEST(Gradcheck, AssembleRowsGradient) {
  auto a = random_tensor({2, 3}, 21);
  auto b = random_tensor({1, 3}, 22);
  std::vector<TensorPtr> params{a, b};
  const std::size_t targets[] = {0, 1, 2};
  auto f = [&](Tape& t) {
    auto x = ops::assemble_rows(t, 3, {{a, {2, 0}}, {b, {1}}});
    return ops::cross_entropy(t, x, targets);
  };
  EXPECT_LE(gradcheck(f, params).max_rel_error, 1e-7);
}

TEST(Gradcheck, CorruptedRuleIsDetected) {
  auto a = random_tensor({3, 4}, 31);
  auto b = random_tensor({4, 3}, 32);
  std::vector<TensorPtr> params{a, b};
  const std::size_t targets[] = {0, 1, 2};
  auto f = [&](Tape& t) { return ops::cross_entropy(t, ops::gelu(t, ops::matmul(t, a, b)), targets); };
  EXPECT_LE(gradcheck(f, params).max_rel_error, 1e-6);
  {
    FaultGuard guard(GradientFault::gelu);
    EXPECT_GT(gradcheck(f, params).max_rel_error, 1e-2);
  }
  {
    FaultGuard guard(GradientFault::matmul);
    EXPECT_GT(gradcheck(f, params).max_rel_error, 1e-2);
  }
}

TEST(Adam, FirstStepMatchesHandComputation) {
  auto w = make_tensor({2}, {1.0, -2.0}, true);
  w->grad = {0.5, -0.25};
  Adam adam(AdamConfig{0.1});
  std::vector<TensorPtr> ps{w};
  adam.step(ps);
  // First bias-corrected step moves each coordinate by lr·g/(|g| + eps).
  EXPECT_NEAR(w->data[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(w->data[1], -2.0 + 0.1 * 0.25 / (0.25 + 1e-8), 1e-15);
  EXPECT_EQ(adam.steps_taken(), 1);
}

TEST(Adam, SecondStepMatchesScalarRecurrence) {
  auto w = make_tensor({1}, {0.3}, true);
  Adam adam(AdamConfig{0.01});
  std::vector<TensorPtr> ps{w};
  double m = 0, v = 0, x = 0.3;
  const double gs[] = {0.2, -0.7};
  for (int t = 1; t <= 2; ++t) {
    w->grad = {gs[t - 1]};
    adam.step(ps);
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(w->data[0], x, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParametersBitExact) {
  auto w = random_tensor({3, 3}, 41);
  const auto before = w->data;
  Adam adam;
  std::vector<TensorPtr> ps{w};
  w->ensure_grad();
  for (int i = 0; i < 5; ++i) adam.step(ps);
  EXPECT_EQ(w->data, before);
}

TEST(Adam, RejectsNonpositiveLearningRate) {
  EXPECT_THROW(Adam(AdamConfig{0.0}), Error);
  EXPECT_THROW(Adam(AdamConfig{-1.0}), Error);
}

TEST(Clip, BoundsGlobalNorm) {
  auto a = random_tensor({4}, 51, 10.0);
  auto b = random_tensor({3}, 52, 10.0);
  a->grad = a->data;
  b->grad = b->data;
  std::vector<TensorPtr> ps{a, b};
  const double before = global_grad_norm(ps);
  const double reported = clip_grad_norm(ps, 1.0);
  EXPECT_EQ(before, reported);
  EXPECT_NEAR(global_grad_norm(ps), 1.0, 1e-12);
  // Already small gradients are untouched.
  const auto g = a->grad;
  clip_grad_norm(ps, 5.0);
  EXPECT_EQ(a->grad, g);
}

TEST(Rng, DeterministicAndBounded) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.below(7), 7u);
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
}
