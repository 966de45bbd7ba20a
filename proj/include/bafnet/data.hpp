// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Tile extraction and stitching, training augmentation, the synthetic scene
// generator, and dataset directory I/O.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bafnet/palette.hpp"

namespace bafnet {

constexpr int32_t kIgnoreLabel = 255;

// A labelled image patch: CHW float image in [0,1], HW class-index mask.
struct TileSample {
  int64_t width = 0, height = 0;
  std::vector<float> image;   // (3, H, W)
  std::vector<int32_t> mask;  // (H, W); kIgnoreLabel marks padding
  std::string source;
  int64_t offset_x = 0, offset_y = 0;
};

struct Scene {
  int64_t width = 0, height = 0;
  std::vector<float> image;
  std::vector<int32_t> mask;
  std::string name;
};

// --- resampling on raw buffers (no tape) -----------------------------------

std::vector<float> resize_bilinear_chw(const std::vector<float>& img, int64_t c, int64_t h,
                                       int64_t w, int64_t oh, int64_t ow);
std::vector<int32_t> resize_nearest_hw(const std::vector<int32_t>& mask, int64_t h,
                                       int64_t w, int64_t oh, int64_t ow);

// --- tiling ------------------------------------------------------------------

// Deterministic grid; the last row/column is shifted so tiles never leave the
// image, and images smaller than `size` are border-reflected with the added
// region flagged ignore.
std::vector<TileSample> tile(const Scene& scene, int64_t size, int64_t stride);

// Accumulates per-tile class probabilities back onto the source extent;
// overlaps average. Feed tiles in the order `tile` produced them.
class StitchAccumulator {
 public:
  StitchAccumulator(int64_t num_classes, int64_t height, int64_t width);
  void add(const TileSample& tile_info, const std::vector<float>& probs_chw);
  std::vector<float> mean_probs() const;  // (C, H, W)
  std::vector<int32_t> argmax() const;    // (H, W)
  bool fully_covered() const;

 private:
  int64_t c_, h_, w_;
  std::vector<float> sum_;
  std::vector<float> count_;
};

// --- augmentation ------------------------------------------------------------

struct AugmentConfig {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5};
  double flip_prob = 0.5;
  bool rotate90 = true;
  bool enabled = true;
};

// Identical geometric transform on image and mask (mask nearest-neighbour);
// the output keeps the input extent via random crop / border reflection.
TileSample augment(const TileSample& in, const AugmentConfig& cfg, std::mt19937_64& rng);

// --- synthetic scenes ----------------------------------------------------------

struct SynthConfig {
  int64_t size = 256;
  int64_t count = 200;
  uint64_t seed = 7;
};

Scene synth_scene(uint64_t seed, int64_t index, int64_t size);
std::vector<Scene> synth_generate(const SynthConfig& cfg);

// --- dataset directories -------------------------------------------------------

// Layout: <dir>/images/*.png, <dir>/labels/*.png, <dir>/manifest.txt with
// "images/NAME labels/NAME" pairs.
void save_dataset(const std::string& dir, const std::vector<Scene>& scenes,
                  const ClassPalette& palette);
std::vector<Scene> load_dataset(const std::string& dir, const ClassPalette& palette);

}  // namespace bafnet
