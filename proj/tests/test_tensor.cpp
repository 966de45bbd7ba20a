// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "bafnet/tensor.hpp"
#include "support/oracles.hpp"

using namespace bafnet;
namespace oracle = bafnet::testing;

namespace {

Tensor<double> randn(std::mt19937_64& rng, Shape s, bool rg = false, double scale = 1.0) {
  return Tensor<double>::from(s, oracle::random_values(rng, shape_numel(s), scale), rg);
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  std::mt19937_64 rng(1);
  auto x = randn(rng, {2, 3, 5, 5});
  auto w = Tensor<double>::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  auto y = conv2d(x, w, Tensor<double>::zeros({3}), ConvSpec{});
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d: depthwise 3x3 ones kernel on constant input gives 9v inside") {
  const double v = 2.5;
  auto x = Tensor<double>::filled({1, 2, 6, 6}, v);
  auto w = Tensor<double>::filled({2, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, {}, ConvSpec{1, 1, 1, 2});
  REQUIRE(y.shape() == Shape{1, 2, 6, 6});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 1; i < 5; ++i)
      for (int64_t j = 1; j < 5; ++j)
        CHECK(y.data()[(c * 6 + i) * 6 + j] == doctest::Approx(9.0 * v));
  // corner touches 4 taps only
  CHECK(y.data()[0] == doctest::Approx(4.0 * v));
}

TEST_CASE("conv2d: gradients of a dilated depthwise conv match finite differences") {
  std::mt19937_64 rng(7);
  auto x = randn(rng, {1, 4, 16, 16}, true);
  auto w = randn(rng, {4, 1, 5, 5}, true, 0.3);
  auto b = randn(rng, {4}, true, 0.1);
  ConvSpec sp{1, 6, 3, 4};
  auto rep = oracle::grad_check({x, w, b},
                                [&] { return sum(conv2d(x, w, b, sp)); }, 1e-4, 1e-3, 40, 7);
  CHECK(rep.ok);
  CHECK(rep.checked > 0);
}

TEST_CASE("conv2d: equals the naive nested-loop reference on small shapes") {
  std::mt19937_64 rng(11);
  struct Case {
    Shape xs, ws;
    ConvSpec sp;
  };
  const std::vector<Case> cases = {
      {{2, 4, 9, 9}, {8, 4, 3, 3}, {1, 1, 1, 1}},
      {{1, 4, 9, 8}, {6, 2, 3, 3}, {2, 1, 1, 2}},
      {{2, 3, 7, 9}, {5, 3, 1, 1}, {1, 0, 1, 1}},
      {{1, 4, 9, 9}, {4, 1, 3, 3}, {1, 3, 3, 4}},
      {{2, 2, 8, 8}, {2, 1, 5, 5}, {2, 2, 1, 2}},
  };
  for (const auto& c : cases) {
    auto x = randn(rng, c.xs);
    auto w = randn(rng, c.ws);
    auto b = randn(rng, {c.ws[0]});
    Shape os;
    auto ref = oracle::naive_conv2d(x.vec(), c.xs, w.vec(), c.ws, &b.vec(), c.sp, &os);
    auto y = conv2d(x, w, b, c.sp);
    REQUIRE(y.shape() == os);
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(std::abs(y.data()[i] - ref[(size_t)i]) < 1e-6);
  }
}

TEST_CASE("conv2d: 1x1 path equals a per-pixel linear map") {
  std::mt19937_64 rng(13);
  auto x = randn(rng, {2, 5, 6, 7});
  auto w = randn(rng, {3, 5, 1, 1});
  auto y = conv2d(x, w, {}, ConvSpec{});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t oc = 0; oc < 3; ++oc)
      for (int64_t p = 0; p < 42; ++p) {
        double acc = 0;
        for (int64_t ic = 0; ic < 5; ++ic)
          acc += w.data()[oc * 5 + ic] * x.data()[(b * 5 + ic) * 42 + p];
        CHECK(std::abs(y.data()[(b * 3 + oc) * 42 + p] - acc) < 1e-6);
      }
}

TEST_CASE("conv2d: rejects bad geometry") {
  auto x = Tensor<double>::zeros({1, 4, 8, 8});
  auto w = Tensor<double>::zeros({4, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, {}, ConvSpec{1, 1, 1, 3}), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, w, {}, ConvSpec{0, 1, 1, 2}), std::invalid_argument);
  auto w_bad = Tensor<double>::zeros({4, 4, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w_bad, {}, ConvSpec{1, 1, 1, 2}), std::invalid_argument);
}

TEST_CASE("bilinear_resize: constants stay constant") {
  auto x = Tensor<double>::filled({1, 2, 3, 3}, 3.0);
  auto y = bilinear_resize(x, 2.0);
  REQUIRE(y.shape() == Shape{1, 2, 6, 6});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(3.0));
}

TEST_CASE("bilinear_resize: 2x2 ramp upsampled per the half-pixel formula") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = bilinear_resize(x, 4, 4);
  // frozen from evaluating the half-pixel interpolation by hand
  const std::vector<double> want = {1.0, 1.25, 1.75, 2.0,  1.5, 1.75, 2.25, 2.5,
                                    2.5, 2.75, 3.25, 3.5,  3.0, 3.25, 3.75, 4.0};
  REQUIRE(y.numel() == 16);
  for (int64_t i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(want[(size_t)i]));
}

TEST_CASE("bilinear_resize: factor one is exact identity") {
  std::mt19937_64 rng(17);
  auto x = randn(rng, {2, 3, 5, 7});
  auto y = bilinear_resize(x, 1.0);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("bilinear_resize: rejects non-positive factor and matches finite differences") {
  std::mt19937_64 rng(19);
  auto x = randn(rng, {1, 2, 4, 5}, true);
  CHECK_THROWS_AS(bilinear_resize(x, 0.0), std::invalid_argument);
  auto rep = oracle::grad_check(
      {x}, [&] { return oracle::project_to_scalar(bilinear_resize(x, 7, 9), 3); }, 1e-4, 1e-3,
      -1, 19);
  CHECK(rep.ok);
}

TEST_CASE("batch_norm: train mode normalises per channel") {
  std::mt19937_64 rng(23);
  auto x = randn(rng, {4, 3, 8, 8}, false, 2.0);
  auto gamma = Tensor<double>::filled({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  auto y = batch_norm<double>(x, gamma, beta, nullptr, nullptr, true);
  const int64_t m = 4 * 64;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int64_t b = 0; b < 4; ++b)
      for (int64_t i = 0; i < 64; ++i) mean += y.data()[(b * 3 + c) * 64 + i];
    mean /= m;
    for (int64_t b = 0; b < 4; ++b)
      for (int64_t i = 0; i < 64; ++i) {
        double d = y.data()[(b * 3 + c) * 64 + i] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batch_norm: eval mode is the affine map of the running stats") {
  auto x = Tensor<double>::zeros({2, 2, 3, 3});
  auto gamma = Tensor<double>::filled({2}, 2.0);
  auto beta = Tensor<double>::filled({2}, 1.0);
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::filled({2}, 1.0);
  auto y = batch_norm<double>(x, gamma, beta, &rm, &rv, false);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("batch_norm: running stats update with momentum 0.1") {
  auto x = Tensor<double>::from({1, 1, 1, 4}, {1, 2, 3, 4});
  auto gamma = Tensor<double>::filled({1}, 1.0);
  auto beta = Tensor<double>::zeros({1});
  auto rm = Tensor<double>::zeros({1});
  auto rv = Tensor<double>::filled({1}, 1.0);
  (void)batch_norm<double>(x, gamma, beta, &rm, &rv, true);
  CHECK(rm.data()[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5));
  // unbiased batch variance of {1,2,3,4} is 5/3
  CHECK(rv.data()[0] == doctest::Approx(0.9 * 1.0 + 0.1 * (5.0 / 3.0)));
}

TEST_CASE("batch_norm: gradients match finite differences") {
  std::mt19937_64 rng(29);
  auto x = randn(rng, {2, 4, 5, 5}, true);
  auto gamma = randn(rng, {4}, true, 0.5);
  auto beta = randn(rng, {4}, true, 0.5);
  auto rep = oracle::grad_check(
      {x, gamma, beta},
      [&] {
        return oracle::project_to_scalar(
            batch_norm<double>(x, gamma, beta, nullptr, nullptr, true), 5);
      },
      1e-4, 1e-3, 30, 29);
  CHECK(rep.ok);
  CHECK_THROWS_AS(batch_norm<double>(x, Tensor<double>::zeros({3}),
                                     Tensor<double>::zeros({3}), nullptr, nullptr, true),
                  std::invalid_argument);
}

TEST_CASE("layer_norm: constant token collapses onto the shift") {
  auto x = Tensor<double>::filled({2, 3, 4}, 7.0);
  auto gamma = Tensor<double>::filled({4}, 1.5);
  auto beta = Tensor<double>::filled({4}, 0.25);
  auto y = layer_norm(x, gamma, beta);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.25));
}

TEST_CASE("layer_norm: zero mean per token and finite-difference gradients") {
  std::mt19937_64 rng(31);
  auto x = randn(rng, {3, 5, 6}, true);
  auto gamma = Tensor<double>::filled({6}, 1.0, true);
  auto beta = Tensor<double>::zeros({6}, true);
  auto y = layer_norm(x, gamma, beta);
  for (int64_t r = 0; r < 15; ++r) {
    double mean = 0;
    for (int64_t i = 0; i < 6; ++i) mean += y.data()[r * 6 + i];
    CHECK(std::abs(mean / 6) < 1e-6);
  }
  auto rep = oracle::grad_check(
      {x, gamma, beta},
      [&] { return oracle::project_to_scalar(layer_norm(x, gamma, beta), 9); }, 1e-4, 1e-3,
      30, 31);
  CHECK(rep.ok);
}

TEST_CASE("activations: closed-form points and gelu gradients") {
  auto x = Tensor<double>::from({3}, {-1.0, 0.0, 2.0});
  auto s = sigmoid(x);
  CHECK(s.data()[1] == doctest::Approx(0.5));
  CHECK(s.data()[0] > 0.0);
  CHECK(s.data()[2] < 1.0);
  auto r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[2] == 2.0);

  std::mt19937_64 rng(37);
  auto g = randn(rng, {4, 5}, true);
  auto rep = oracle::grad_check(
      {g}, [&] { return oracle::project_to_scalar(gelu(g), 11); }, 1e-4, 1e-3, -1, 37);
  CHECK(rep.ok);
}

TEST_CASE("softmax: symmetry, normalisation and shift invariance") {
  auto x = Tensor<double>::from({1, 2}, {0.0, 0.0});
  auto y = softmax(x, 1);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));

  std::mt19937_64 rng(41);
  auto z = randn(rng, {3, 7, 4}, false, 3.0);
  auto sm = softmax(z, 1);
  for (int64_t o = 0; o < 3; ++o)
    for (int64_t in = 0; in < 4; ++in) {
      double total = 0;
      for (int64_t i = 0; i < 7; ++i) total += sm.data()[(o * 7 + i) * 4 + in];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }

  auto shifted = add(z, Tensor<double>::filled(z.shape(), 123.25));
  auto sm2 = softmax(shifted, 1);
  for (int64_t i = 0; i < z.numel(); ++i)
    CHECK(sm.data()[i] == doctest::Approx(sm2.data()[i]).epsilon(1e-9));
}

TEST_CASE("matmul: batched contraction matches finite differences") {
  std::mt19937_64 rng(43);
  auto a = randn(rng, {2, 3, 4}, true);
  auto b = randn(rng, {2, 4, 5}, true);
  auto rep = oracle::grad_check(
      {a, b}, [&] { return oracle::project_to_scalar(matmul(a, b), 13); }, 1e-4, 1e-3, -1,
      43);
  CHECK(rep.ok);

  auto shared = randn(rng, {4, 5}, true);
  auto rep2 = oracle::grad_check(
      {a, shared}, [&] { return oracle::project_to_scalar(matmul(a, shared), 17); }, 1e-4,
      1e-3, -1, 44);
  CHECK(rep2.ok);
  CHECK_THROWS_AS(matmul(a, randn(rng, {2, 5, 4})), std::invalid_argument);
}

TEST_CASE("global_avg_pool: mean of a constant map is the constant") {
  auto x = Tensor<double>::filled({2, 3, 4, 4}, -1.75);
  auto y = global_avg_pool(x);
  REQUIRE(y.shape() == Shape{2, 3, 1, 1});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(-1.75));
}

TEST_CASE("concat: channel concatenation shape and gradient flow") {
  std::mt19937_64 rng(47);
  auto a = randn(rng, {2, 2, 3, 3}, true);
  auto b = randn(rng, {2, 3, 3, 3}, true);
  auto y = concat<double>({a, b}, 1);
  REQUIRE(y.shape() == Shape{2, 5, 3, 3});
  auto rep = oracle::grad_check(
      {a, b}, [&] { return oracle::project_to_scalar(concat<double>({a, b}, 1), 19); },
      1e-4, 1e-3, -1, 47);
  CHECK(rep.ok);
  CHECK_THROWS_AS(concat<double>({a, randn(rng, {2, 3, 4, 3})}, 1), std::invalid_argument);
}

TEST_CASE("elementwise: broadcasting add/mul gradients") {
  std::mt19937_64 rng(53);
  auto a = randn(rng, {2, 3, 2, 2}, true);
  auto g = randn(rng, {2, 3, 1, 1}, true);
  auto rep = oracle::grad_check(
      {a, g}, [&] { return oracle::project_to_scalar(mul(a, g), 23); }, 1e-4, 1e-3, -1, 53);
  CHECK(rep.ok);
  auto rep2 = oracle::grad_check(
      {a, g}, [&] { return oracle::project_to_scalar(add(a, g), 29); }, 1e-4, 1e-3, -1, 54);
  CHECK(rep2.ok);
  CHECK_THROWS_AS(add(a, randn(rng, {2, 3, 2})), std::invalid_argument);
}

TEST_CASE("shape ops: permute/narrow/reshape/lookup gradients") {
  std::mt19937_64 rng(59);
  auto x = randn(rng, {2, 3, 4, 5}, true);
  auto rep = oracle::grad_check(
      {x},
      [&] {
        auto p = permute(x, {0, 2, 3, 1});
        auto r = reshape(p, {2, 20, 3});
        auto n = narrow(r, 1, 3, 9);
        return oracle::project_to_scalar(n, 31);
      },
      1e-4, 1e-3, -1, 59);
  CHECK(rep.ok);

  auto table = randn(rng, {6, 3}, true);
  std::vector<int64_t> idx = {0, 5, 2, 2, 1};
  auto rep2 = oracle::grad_check(
      {table}, [&] { return oracle::project_to_scalar(rows_lookup(table, idx), 37); }, 1e-4,
      1e-3, -1, 60);
  CHECK(rep2.ok);
}

TEST_CASE("backward: linear and quadratic closed forms") {
  std::mt19937_64 rng(61);
  auto x = randn(rng, {3, 4}, true);
  auto loss = sum(x);
  backward(loss);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[(size_t)i] == doctest::Approx(1.0));

  x.zero_grad();
  auto loss2 = sum(mul(x, x));
  backward(loss2);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(x.grad()[(size_t)i] == doctest::Approx(2.0 * x.data()[i]));
}

TEST_CASE("backward: repeated calls accumulate; scalar loss enforced") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto loss = sum(x);
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(backward(x), std::invalid_argument);
}

TEST_CASE("backward: freeing the graph keeps leaf gradients") {
  auto x = Tensor<double>::from({2}, {3.0, -1.0}, true);
  auto y = mul(x, x);
  auto loss = sum(y);
  backward(loss, /*free_graph=*/true);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("forward passes keep values finite") {
  std::mt19937_64 rng(67);
  auto x = randn(rng, {2, 3, 8, 8}, false, 10.0);
  CHECK(all_finite(softmax(x, 1)));
  CHECK(all_finite(sigmoid(x)));
  CHECK(all_finite(gelu(x)));
  auto gamma = Tensor<double>::filled({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  CHECK(all_finite(batch_norm<double>(x, gamma, beta, nullptr, nullptr, true)));
}

TEST_CASE("no-grad mode records no history") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}
