// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "bafnet/van.hpp"
#include "support/oracles.hpp"

using namespace bafnet;
namespace oracle = bafnet::testing;

namespace {

template <typename T>
void fill(Tensor<T>& t, T v) {
  std::fill(t.vec().begin(), t.vec().end(), v);
}

template <typename T>
void randomize(ParamRegistry<T>& reg, uint64_t seed, double scale = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& e : reg.entries())
    if (e.trainable)
      for (auto& v : e.tensor.vec()) v = (T)d(rng);
}

}  // namespace

TEST_CASE("lka_attention: identity kernels gate the input with itself") {
  ParamRegistry<double> reg;
  nn::Rng rng(3);
  LkaAttention<double> lka(reg, rng, "lka", 3);
  // delta depthwise kernels, identity pointwise, no bias offsets
  lka.dw.weight.vec() = nn::delta_depthwise<double>(3, 5).vec();
  lka.dwd.weight.vec() = nn::delta_depthwise<double>(3, 7).vec();
  fill(lka.dw.bias, 0.0);
  fill(lka.dwd.bias, 0.0);
  fill(lka.pw.weight, 0.0);
  for (int c = 0; c < 3; ++c) lka.pw.weight.data()[c * 3 + c] = 1.0;
  fill(lka.pw.bias, 0.0);

  std::mt19937_64 vr(5);
  auto x = Tensor<double>::from({1, 3, 9, 9}, oracle::random_values(vr, 3 * 81));
  auto y = lka.forward(x);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i] * x.data()[i]));
}

TEST_CASE("lka_attention: impulse support equals the composed receptive field") {
  // 5x5 then 7x7 dilation-3 reaches +/-(2 + 9) = a 23x23 box.
  const int64_t c = 3, n = 31, mid = 15;
  ParamRegistry<double> reg;
  nn::Rng rng(7);
  LkaAttention<double> lka(reg, rng, "lka", c);
  fill(lka.dw.weight, 1.0);
  fill(lka.dwd.weight, 1.0);
  fill(lka.pw.weight, 1.0);
  fill(lka.dw.bias, 0.0);
  fill(lka.dwd.bias, 0.0);
  fill(lka.pw.bias, 0.0);

  auto x = Tensor<double>::zeros({1, c, n, n});
  for (int64_t ch = 0; ch < c; ++ch) x.data()[(ch * n + mid) * n + mid] = 1.0;
  auto attn = lka.attention_map(x);

  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const bool inside = std::llabs(i - mid) <= 11 && std::llabs(j - mid) <= 11;
        const double v = attn.data()[(ch * n + i) * n + j];
        if (inside)
          CHECK(v > 0.0);
        else
          CHECK(v == 0.0);
      }
}

TEST_CASE("lka_attention: zero kernels annihilate; frozen attention is linear in the input") {
  ParamRegistry<double> reg;
  nn::Rng rng(11);
  LkaAttention<double> lka(reg, rng, "lka", 4);
  {
    ParamRegistry<double> zreg;
    nn::Rng zr(1);
    LkaAttention<double> zero(zreg, zr, "z", 4);
    for (auto& e : zreg.entries()) fill(e.tensor, 0.0);
    std::mt19937_64 vr(13);
    auto x = Tensor<double>::from({1, 4, 8, 8}, oracle::random_values(vr, 4 * 64));
    auto y = zero.forward(x);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
  }
  std::mt19937_64 vr(17);
  auto x = Tensor<double>::from({1, 4, 8, 8}, oracle::random_values(vr, 4 * 64));
  auto frozen = lka.attention_map(x).detach_copy();
  auto y1 = mul(frozen, x);
  auto y2 = mul(frozen, scale(x, 3.0));
  for (int64_t i = 0; i < y1.numel(); ++i)
    CHECK(y2.data()[i] == doctest::Approx(3.0 * y1.data()[i]));
}

TEST_CASE("van_block: zeroed sub-layer outputs reduce to the identity") {
  ParamRegistry<double> reg;
  nn::Rng rng(19);
  VanBlock<double> block(reg, rng, "b", 8, 4);
  fill(block.proj2.weight, 0.0);
  fill(block.proj2.bias, 0.0);
  fill(block.fc2.weight, 0.0);
  fill(block.fc2.bias, 0.0);
  std::mt19937_64 vr(23);
  auto x = Tensor<double>::from({2, 8, 6, 6}, oracle::random_values(vr, 2 * 8 * 36));
  auto y = block.forward(x, true);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("van_block: shape contract and finite-difference gradients") {
  {
    ParamRegistry<float> reg;
    nn::Rng rng(29);
    VanBlock<float> block(reg, rng, "b", 32, 8);
    auto x = Tensor<float>::zeros({2, 32, 64, 64});
    auto y = block.forward(x, true);
    CHECK(y.shape() == Shape{2, 32, 64, 64});
  }
  ParamRegistry<double> reg;
  nn::Rng rng(31);
  VanBlock<double> block(reg, rng, "b", 8, 2);
  randomize(reg, 99, 0.3);
  std::mt19937_64 vr(37);
  auto x = Tensor<double>::from({1, 8, 8, 8}, oracle::random_values(vr, 8 * 64), true);
  std::vector<Tensor<double>> leaves = {x};
  for (auto& e : reg.entries())
    if (e.trainable) leaves.push_back(e.tensor);
  auto rep = oracle::grad_check(
      leaves, [&] { return oracle::project_to_scalar(block.forward(x, true), 41); }, 1e-4,
      1e-3, 6, 31);
  CHECK(rep.ok);
  CHECK(rep.checked > 50);
}

TEST_CASE("dependency path: stage shapes at 512 and 256") {
  ParamRegistry<float> reg;
  nn::Rng rng(41);
  DependencyPath<float> dep(reg, rng, "dep", VanConfig{});
  {
    auto img = Tensor<float>::zeros({1, 3, 512, 512});
    auto maps = dep.forward(img, false);
    CHECK(maps[0].shape() == Shape{1, 32, 128, 128});
    CHECK(maps[1].shape() == Shape{1, 64, 64, 64});
    CHECK(maps[2].shape() == Shape{1, 160, 32, 32});
    CHECK(maps[3].shape() == Shape{1, 256, 16, 16});
  }
  {
    auto img = Tensor<float>::zeros({1, 3, 256, 256});
    auto maps = dep.forward(img, false);
    CHECK(maps[0].shape() == Shape{1, 32, 64, 64});
    CHECK(maps[1].shape() == Shape{1, 64, 32, 32});
    CHECK(maps[2].shape() == Shape{1, 160, 16, 16});
    CHECK(maps[3].shape() == Shape{1, 256, 8, 8});
  }
  CHECK_THROWS_AS(dep.forward(Tensor<float>::zeros({1, 3, 100, 100}), false),
                  std::invalid_argument);
}

TEST_CASE("dependency path: parameter total near 4.1M") {
  ParamRegistry<float> reg;
  nn::Rng rng(43);
  DependencyPath<float> dep(reg, rng, "dep", VanConfig{});
  const double params = (double)reg.param_count_prefix("dep.");
  MESSAGE("dependency path parameters: ", params);
  CHECK(params > 4.1e6 * 0.85);
  CHECK(params < 4.1e6 * 1.15);
}
