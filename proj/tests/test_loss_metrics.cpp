// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bafnet/complexity.hpp"
#include "bafnet/loss.hpp"
#include "bafnet/metrics.hpp"
#include "support/oracles.hpp"

using namespace bafnet;
namespace oracle = bafnet::testing;

TEST_CASE("ce_loss: hand-worked two-class values") {
  auto y = Tensor<double>::from({1, 2}, {1.0, 0.0});
  auto p1 = Tensor<double>::from({1, 2}, {0.8, 0.2});
  CHECK(ce_loss(p1, y).item() == doctest::Approx(0.4463).epsilon(1e-3));
  CHECK(std::abs(ce_loss(p1, y).item() - (-2.0 * std::log(0.8))) < 1e-9);

  auto p2 = Tensor<double>::from({1, 2}, {0.5, 0.5});
  CHECK(ce_loss(p2, y).item() == doctest::Approx(1.3863).epsilon(1e-3));

  auto perfect = Tensor<double>::from({1, 2}, {1.0, 0.0});
  CHECK(ce_loss(perfect, y).item() <= 2 * 1e-6);

  CHECK_THROWS_AS(ce_loss(Tensor<double>::zeros({1, 3}), y), std::invalid_argument);
}

TEST_CASE("ce_loss: categorical form drops the complement term") {
  auto y = Tensor<double>::from({1, 2}, {1.0, 0.0});
  auto p = Tensor<double>::from({1, 2}, {0.8, 0.2});
  CHECK(ce_loss(p, y, CeForm::Categorical).item() ==
        doctest::Approx(-std::log(0.8)).epsilon(1e-9));
}

TEST_CASE("dice_loss: hand-worked value, perfect prediction, and bounds") {
  auto y = Tensor<double>::from({1, 2}, {1.0, 0.0});
  auto p = Tensor<double>::from({1, 2}, {0.8, 0.2});
  CHECK(dice_loss(p, y).item() == doctest::Approx(0.1111).epsilon(1e-3));
  CHECK(dice_loss(y, y).item() == doctest::Approx(0.0).epsilon(1e-5));

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    auto logits = Tensor<double>::from({5, 4}, oracle::random_values(rng, 20, 2.0));
    auto probs = softmax(logits, 1);
    std::vector<double> oh(20, 0.0);
    for (int i = 0; i < 5; ++i) oh[(size_t)(i * 4 + cls(rng))] = 1.0;
    double v = dice_loss(probs, Tensor<double>::from({5, 4}, oh)).item();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("dice_loss: decreases along the straight line towards the reference") {
  std::mt19937_64 rng(5);
  auto logits = Tensor<double>::from({6, 4}, oracle::random_values(rng, 24, 1.5));
  auto p0 = softmax(logits, 1).detach_copy();
  std::vector<double> oh(24, 0.0);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int i = 0; i < 6; ++i) oh[(size_t)(i * 4 + cls(rng))] = 1.0;
  auto y = Tensor<double>::from({6, 4}, oh);
  double prev = 2.0;
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::vector<double> mix(24);
    for (size_t i = 0; i < 24; ++i)
      mix[i] = (1 - t) * p0.data()[(int64_t)i] + t * oh[i];
    double v = dice_loss(Tensor<double>::from({6, 4}, mix), y).item();
    CHECK(v < prev + 1e-12);
    prev = v;
  }
}

TEST_CASE("hybrid_loss: additivity and gradients through softmax") {
  auto y = Tensor<double>::from({1, 2}, {1.0, 0.0});
  auto p = Tensor<double>::from({1, 2}, {0.8, 0.2});
  auto terms = hybrid_loss(p, y);
  CHECK(terms.total.item() == doctest::Approx(0.5574).epsilon(1e-3));
  CHECK(terms.total.item() == doctest::Approx(terms.ce.item() + terms.dice.item()));

  std::mt19937_64 rng(7);
  auto logits = Tensor<double>::from({2, 3, 4, 4}, oracle::random_values(rng, 96), true);
  std::vector<double> oh(96, 0.0);
  std::uniform_int_distribution<int> cls(0, 2);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 16; ++i)
      oh[(size_t)((b * 3 + cls(rng)) * 16 + i)] = 1.0;
  auto ref = Tensor<double>::from({2, 3, 4, 4}, oh);
  auto rep = oracle::grad_check(
      {logits}, [&] { return hybrid_loss(softmax(logits, 1), ref).total; }, 1e-4, 1e-3, -1,
      7);
  CHECK(rep.ok);
}

TEST_CASE("confusion matrix: hand-enumerated cells and scores") {
  ConfusionMatrix cm(2);
  const std::vector<int32_t> pred = {0, 0, 1, 1};
  const std::vector<int32_t> ref = {0, 1, 1, 1};
  cm.accumulate(pred, ref);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 0);
  CHECK(cm.at(1, 0) == 1);
  CHECK(cm.at(1, 1) == 2);
  CHECK(oa(cm) == doctest::Approx(0.75));
  CHECK(class_score(cm, 0).iou == doctest::Approx(0.5));
  CHECK(class_score(cm, 1).iou == doctest::Approx(2.0 / 3.0));
  CHECK(miou(cm) == doctest::Approx(7.0 / 12.0));
  auto f1 = per_class_f1(cm);
  CHECK(f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(f1[1] == doctest::Approx(0.8));
  CHECK(mean_f1(cm) == doctest::Approx(0.73333).epsilon(1e-4));
  // the alternative compositions differ, deliberately
  CHECK(diagnostics::oa_per_class_normalised(cm) == doctest::Approx(0.375));
  CHECK(diagnostics::macro_composed_f1(cm) == doctest::Approx(0.78947).epsilon(1e-4));
}

TEST_CASE("confusion matrix: empty input, additivity, range errors, ignore label") {
  ConfusionMatrix cm(3);
  cm.accumulate({}, {});
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(oa(cm), std::invalid_argument);

  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int32_t> cls(0, 2);
  std::vector<int32_t> pa(40), ra(40), pb(25), rb(25);
  for (auto* v : {&pa, &ra, &pb, &rb})
    for (auto& x : *v) x = cls(rng);
  ConfusionMatrix two_step(3), one_step(3);
  two_step.accumulate(pa, ra);
  two_step.accumulate(pb, rb);
  std::vector<int32_t> pc(pa), rc(ra);
  pc.insert(pc.end(), pb.begin(), pb.end());
  rc.insert(rc.end(), rb.begin(), rb.end());
  one_step.accumulate(pc, rc);
  CHECK(two_step.counts() == one_step.counts());

  const std::vector<int32_t> bad = {3};
  const std::vector<int32_t> ok = {0};
  CHECK_THROWS_AS(one_step.accumulate(bad, ok), std::invalid_argument);
  CHECK_THROWS_AS(one_step.accumulate(ok, bad), std::invalid_argument);

  ConfusionMatrix ign(3, 255);
  const std::vector<int32_t> p = {0, 1, 2};
  const std::vector<int32_t> r = {0, 255, 2};
  ign.accumulate(p, r);
  CHECK(ign.total() == 2);
}

TEST_CASE("confusion matrix: merge is order independent; perfect prediction scores one") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int32_t> cls(0, 3);
  ConfusionMatrix a(4), b(4);
  std::vector<int32_t> p(100), r(100);
  for (auto& x : p) x = cls(rng);
  for (auto& x : r) x = cls(rng);
  a.accumulate(p, r);
  std::vector<int32_t> p2(60), r2(60);
  for (auto& x : p2) x = cls(rng);
  for (auto& x : r2) x = cls(rng);
  b.accumulate(p2, r2);
  ConfusionMatrix ab(4), ba(4);
  ab.merge(a);
  ab.merge(b);
  ba.merge(b);
  ba.merge(a);
  CHECK(ab.counts() == ba.counts());

  ConfusionMatrix perfect(4);
  perfect.accumulate(r, r);
  CHECK(oa(perfect) == 1.0);
  CHECK(miou(perfect) == 1.0);
  CHECK(mean_f1(perfect) == 1.0);
}

TEST_CASE("metrics: brute-force per-pixel recount oracle on random masks") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 32 * 32, c = 5;
    std::uniform_int_distribution<int32_t> cls(0, (int32_t)c - 1);
    std::vector<int32_t> pred((size_t)n), ref((size_t)n);
    for (auto& x : pred) x = cls(rng);
    for (auto& x : ref) x = cls(rng);
    ConfusionMatrix cm(c);
    cm.accumulate(pred, ref);

    // independent recount
    int64_t correct = 0;
    double iou_sum = 0, f1_sum = 0;
    for (int64_t k = 0; k < c; ++k) {
      int64_t tp = 0, fp = 0, fn = 0;
      for (int64_t i = 0; i < n; ++i) {
        if (pred[(size_t)i] == k && ref[(size_t)i] == k) ++tp;
        if (pred[(size_t)i] == k && ref[(size_t)i] != k) ++fp;
        if (pred[(size_t)i] != k && ref[(size_t)i] == k) ++fn;
      }
      correct += tp;
      iou_sum += (double)tp / (double)(tp + fp + fn);
      double prec = tp + fp ? (double)tp / (tp + fp) : 0.0;
      double rec = tp + fn ? (double)tp / (tp + fn) : 0.0;
      f1_sum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
    CHECK(oa(cm) == (double)correct / (double)n);
    CHECK(miou(cm) == doctest::Approx(iou_sum / c).epsilon(1e-12));
    CHECK(mean_f1(cm) == doctest::Approx(f1_sum / c).epsilon(1e-12));
  }
}

TEST_CASE("metrics: permuting class labels permutes per-class scores only") {
  std::mt19937_64 rng(19);
  const int64_t c = 4;
  std::uniform_int_distribution<int32_t> cls(0, (int32_t)c - 1);
  std::vector<int32_t> pred(200), ref(200);
  for (auto& x : pred) x = cls(rng);
  for (auto& x : ref) x = cls(rng);
  ConfusionMatrix cm(c);
  cm.accumulate(pred, ref);

  std::vector<int32_t> perm = {2, 0, 3, 1};
  std::vector<int32_t> pred_p(pred), ref_p(ref);
  for (auto& x : pred_p) x = perm[(size_t)x];
  for (auto& x : ref_p) x = perm[(size_t)x];
  ConfusionMatrix pm(c);
  pm.accumulate(pred_p, ref_p);

  CHECK(oa(pm) == doctest::Approx(oa(cm)).epsilon(1e-12));
  CHECK(miou(pm) == doctest::Approx(miou(cm)).epsilon(1e-12));
  CHECK(mean_f1(pm) == doctest::Approx(mean_f1(cm)).epsilon(1e-12));
  auto f1 = per_class_f1(cm), f1p = per_class_f1(pm);
  for (int64_t k = 0; k < c; ++k)
    CHECK(f1p[(size_t)perm[(size_t)k]] == doctest::Approx(f1[(size_t)k]).epsilon(1e-12));
}

TEST_CASE("complexity: closed-form conv counts") {
  auto c = conv_cost(16, 32, 3, 1, 8, 8, true);
  CHECK(c.params == 4640);
  CHECK(c.macs == 294912);
  CHECK(c.flops2() == 591872);
}

TEST_CASE("complexity: analytic parameter walk matches the live registry exactly") {
  using A = ModelConfig::Ablation;
  for (A a : {A::CpResnet18, A::CpVan, A::CpLocal, A::CpRemote, A::CpBothSum, A::Full}) {
    auto cfg = ModelConfig::ablation(a);
    BafnetModel<float> model{cfg};
    auto table = model_cost(cfg, 512, 512);
    CHECK(table.total().params == model.reg.param_count());
  }
}

TEST_CASE("complexity: default model near the published budget") {
  auto table = model_cost(ModelConfig{}, 512, 512);
  const double params = (double)table.total().params;
  const double macs = (double)table.total().macs;
  MESSAGE("params ", params, "  macs ", macs, "  2mac-flops ", (double)table.total().flops2());
  CHECK(params > 6.4e6 * 0.85);
  CHECK(params < 6.4e6 * 1.15);
  CHECK(macs > 12.3e9 * 0.80);
  CHECK(macs < 12.3e9 * 1.20);
}
