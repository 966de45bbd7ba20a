// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Inference helpers: plain softmax prediction and multi-scale/flip test-time
// augmentation. Variant predictions are mapped back to the base geometry and
// averaged as probabilities, before any argmax.

#pragma once

#include <cmath>
#include <vector>

#include "bafnet/data.hpp"
#include "bafnet/model.hpp"

namespace bafnet {

namespace detail_tta {

inline std::vector<float> flip_chw(const std::vector<float>& img, int64_t c, int64_t h,
                                   int64_t w, bool horizontal) {
  std::vector<float> out(img.size());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t sy = horizontal ? y : h - 1 - y;
        const int64_t sx = horizontal ? w - 1 - x : x;
        out[(size_t)((ch * h + y) * w + x)] = img[(size_t)((ch * h + sy) * w + sx)];
      }
  return out;
}

}  // namespace detail_tta

// One eval-mode forward; returns per-class probabilities (C,H,W) as float.
template <typename T>
std::vector<float> predict_probs(BafnetModel<T>& model, const std::vector<float>& image,
                                 int64_t h, int64_t w) {
  NoGradGuard ng;
  std::vector<T> in(image.size());
  for (size_t i = 0; i < image.size(); ++i) in[i] = (T)image[i];
  auto x = Tensor<T>::from({1, 3, h, w}, std::move(in));
  auto probs = softmax(model.forward(x, false), 1);
  std::vector<float> out((size_t)probs.numel());
  for (int64_t i = 0; i < probs.numel(); ++i) out[(size_t)i] = (float)probs.data()[i];
  return out;
}

struct TtaConfig {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5};
  bool flips = true;  // horizontal and vertical variants alongside identity
};

// Each variant: resize -> forward -> softmax -> undo flip -> resize back;
// the average is over all variants. With scales={1} and flips off this is
// bit-identical to predict_probs.
template <typename T>
std::vector<float> tta_predict(BafnetModel<T>& model, const std::vector<float>& image,
                               int64_t h, int64_t w, const TtaConfig& cfg = {}) {
  BAFNET_CHECK(!cfg.scales.empty(), "test-time augmentation needs at least one scale");
  const int64_t mult = model.cfg.has_remote_local() ? 8 * model.cfg.rl_window : 32;
  const int64_t classes = model.cfg.num_classes;
  std::vector<float> acc((size_t)(classes * h * w), 0.f);
  int64_t variants = 0;
  for (double s : cfg.scales) {
    int64_t th = (int64_t)std::llround((double)h * s / (double)mult) * mult;
    int64_t tw = (int64_t)std::llround((double)w * s / (double)mult) * mult;
    th = std::max(th, mult);
    tw = std::max(tw, mult);
    const bool scaled = th != h || tw != w;
    const auto base = scaled ? resize_bilinear_chw(image, 3, h, w, th, tw) : image;
    const int n_flips = cfg.flips ? 3 : 1;
    for (int f = 0; f < n_flips; ++f) {
      std::vector<float> in = f == 0 ? base : detail_tta::flip_chw(base, 3, th, tw, f == 1);
      auto probs = predict_probs(model, in, th, tw);
      if (f != 0) probs = detail_tta::flip_chw(probs, classes, th, tw, f == 1);
      if (scaled) probs = resize_bilinear_chw(probs, classes, th, tw, h, w);
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
      ++variants;
    }
  }
  for (auto& v : acc) v /= (float)variants;
  return acc;
}

}  // namespace bafnet
