// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bafnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bafnet/tensor.hpp"

namespace bafnet {

namespace fs = std::filesystem;

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int64_t mirror_index(int64_t q, int64_t n) {
  if (n == 1) return 0;
  while (q < 0 || q >= n) {
    if (q < 0) q = -q;
    if (q >= n) q = 2 * n - 2 - q;
  }
  return q;
}

}  // namespace

std::vector<float> resize_bilinear_chw(const std::vector<float>& img, int64_t c, int64_t h,
                                       int64_t w, int64_t oh, int64_t ow) {
  NoGradGuard ng;
  auto t = Tensor<float>::from({1, c, h, w}, img);
  return bilinear_resize(t, oh, ow).vec();
}

std::vector<int32_t> resize_nearest_hw(const std::vector<int32_t>& mask, int64_t h,
                                       int64_t w, int64_t oh, int64_t ow) {
  std::vector<int32_t> out((size_t)(oh * ow));
  const double ry = (double)h / (double)oh, rx = (double)w / (double)ow;
  for (int64_t y = 0; y < oh; ++y) {
    int64_t sy = std::clamp<int64_t>((int64_t)std::floor((y + 0.5) * ry), 0, h - 1);
    for (int64_t x = 0; x < ow; ++x) {
      int64_t sx = std::clamp<int64_t>((int64_t)std::floor((x + 0.5) * rx), 0, w - 1);
      out[(size_t)(y * ow + x)] = mask[(size_t)(sy * w + sx)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// tiling
// ---------------------------------------------------------------------------

namespace {

std::vector<int64_t> grid_positions(int64_t dim, int64_t size, int64_t stride) {
  std::vector<int64_t> pos;
  if (dim <= size) {
    pos.push_back(0);
    return pos;
  }
  for (int64_t p = 0;; p += stride) {
    if (p + size >= dim) {
      pos.push_back(dim - size);
      break;
    }
    pos.push_back(p);
  }
  return pos;
}

}  // namespace

std::vector<TileSample> tile(const Scene& scene, int64_t size, int64_t stride) {
  BAFNET_CHECK(scene.width > 0 && scene.height > 0, "cannot tile an empty image");
  BAFNET_CHECK(size > 0 && stride > 0, "tile size and stride must be positive");
  const int64_t h = scene.height, w = scene.width;
  auto ys = grid_positions(h, size, stride);
  auto xs = grid_positions(w, size, stride);
  std::vector<TileSample> tiles;
  for (int64_t y0 : ys)
    for (int64_t x0 : xs) {
      TileSample t;
      t.width = t.height = size;
      t.source = scene.name;
      t.offset_x = x0;
      t.offset_y = y0;
      t.image.resize((size_t)(3 * size * size));
      t.mask.resize((size_t)(size * size));
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
          const bool pad = (y0 + y >= h) || (x0 + x >= w);
          const int64_t sy = pad ? mirror_index(y0 + y, h) : y0 + y;
          const int64_t sx = pad ? mirror_index(x0 + x, w) : x0 + x;
          for (int64_t c = 0; c < 3; ++c)
            t.image[(size_t)((c * size + y) * size + x)] =
                scene.image[(size_t)((c * h + sy) * w + sx)];
          t.mask[(size_t)(y * size + x)] =
              pad ? kIgnoreLabel : scene.mask[(size_t)(sy * w + sx)];
        }
      tiles.push_back(std::move(t));
    }
  return tiles;
}

StitchAccumulator::StitchAccumulator(int64_t num_classes, int64_t height, int64_t width)
    : c_(num_classes), h_(height), w_(width), sum_((size_t)(num_classes * height * width), 0.f),
      count_((size_t)(height * width), 0.f) {}

void StitchAccumulator::add(const TileSample& t, const std::vector<float>& probs) {
  BAFNET_CHECK((int64_t)probs.size() == c_ * t.height * t.width,
               "probability map does not match the tile extent");
  for (int64_t y = 0; y < t.height; ++y) {
    const int64_t sy = t.offset_y + y;
    if (sy >= h_) continue;
    for (int64_t x = 0; x < t.width; ++x) {
      const int64_t sx = t.offset_x + x;
      if (sx >= w_) continue;
      for (int64_t c = 0; c < c_; ++c)
        sum_[(size_t)((c * h_ + sy) * w_ + sx)] +=
            probs[(size_t)((c * t.height + y) * t.width + x)];
      count_[(size_t)(sy * w_ + sx)] += 1.f;
    }
  }
}

std::vector<float> StitchAccumulator::mean_probs() const {
  std::vector<float> out(sum_.size());
  for (int64_t p = 0; p < h_ * w_; ++p) {
    const float n = count_[(size_t)p] > 0 ? count_[(size_t)p] : 1.f;
    for (int64_t c = 0; c < c_; ++c)
      out[(size_t)(c * h_ * w_ + p)] = sum_[(size_t)(c * h_ * w_ + p)] / n;
  }
  return out;
}

std::vector<int32_t> StitchAccumulator::argmax() const {
  std::vector<int32_t> out((size_t)(h_ * w_));
  for (int64_t p = 0; p < h_ * w_; ++p) {
    int32_t best = 0;
    float bv = sum_[(size_t)p];
    for (int64_t c = 1; c < c_; ++c) {
      const float v = sum_[(size_t)(c * h_ * w_ + p)];
      if (v > bv) {
        bv = v;
        best = (int32_t)c;
      }
    }
    out[(size_t)p] = best;
  }
  return out;
}

bool StitchAccumulator::fully_covered() const {
  for (float v : count_)
    if (v <= 0.f) return false;
  return true;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

void flip_h(TileSample& t) {
  const int64_t h = t.height, w = t.width;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w / 2; ++x)
        std::swap(t.image[(size_t)((c * h + y) * w + x)],
                  t.image[(size_t)((c * h + y) * w + (w - 1 - x))]);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w / 2; ++x)
      std::swap(t.mask[(size_t)(y * w + x)], t.mask[(size_t)(y * w + (w - 1 - x))]);
}

void flip_v(TileSample& t) {
  const int64_t h = t.height, w = t.width;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h / 2; ++y)
      for (int64_t x = 0; x < w; ++x)
        std::swap(t.image[(size_t)((c * h + y) * w + x)],
                  t.image[(size_t)((c * h + (h - 1 - y)) * w + x)]);
  for (int64_t y = 0; y < h / 2; ++y)
    for (int64_t x = 0; x < w; ++x)
      std::swap(t.mask[(size_t)(y * w + x)], t.mask[(size_t)((h - 1 - y) * w + x)]);
}

// quarter-turn counter-clockwise; square tiles only
void rot90_once(TileSample& t) {
  const int64_t h = t.height, w = t.width;
  std::vector<float> img((size_t)(3 * w * h));
  std::vector<int32_t> msk((size_t)(w * h));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t ny = w - 1 - x, nx = y;
      for (int64_t c = 0; c < 3; ++c)
        img[(size_t)((c * w + ny) * h + nx)] = t.image[(size_t)((c * h + y) * w + x)];
      msk[(size_t)(ny * h + nx)] = t.mask[(size_t)(y * w + x)];
    }
  t.image = std::move(img);
  t.mask = std::move(msk);
  std::swap(t.width, t.height);
}

}  // namespace

TileSample augment(const TileSample& in, const AugmentConfig& cfg, std::mt19937_64& rng) {
  TileSample out = in;
  if (!cfg.enabled) return out;
  BAFNET_CHECK(in.width == in.height, "augmentation expects square tiles");
  const int64_t size = in.width;

  double s = 1.0;
  if (!cfg.scales.empty()) {
    std::uniform_int_distribution<size_t> pick(0, cfg.scales.size() - 1);
    s = cfg.scales[pick(rng)];
  }
  if (s != 1.0) {
    const int64_t os = std::max<int64_t>(1, (int64_t)std::llround(size * s));
    auto img = resize_bilinear_chw(out.image, 3, size, size, os, os);
    auto msk = resize_nearest_hw(out.mask, size, size, os, os);
    out.image.assign((size_t)(3 * size * size), 0.f);
    out.mask.assign((size_t)(size * size), 0);
    if (os >= size) {
      std::uniform_int_distribution<int64_t> off(0, os - size);
      const int64_t y0 = off(rng), x0 = off(rng);
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < size; ++y)
          for (int64_t x = 0; x < size; ++x)
            out.image[(size_t)((c * size + y) * size + x)] =
                img[(size_t)((c * os + y0 + y) * os + x0 + x)];
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x)
          out.mask[(size_t)(y * size + x)] = msk[(size_t)((y0 + y) * os + x0 + x)];
    } else {
      std::uniform_int_distribution<int64_t> off(0, size - os);
      const int64_t y0 = off(rng), x0 = off(rng);
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
          const int64_t sy = mirror_index(y - y0, os), sx = mirror_index(x - x0, os);
          for (int64_t c = 0; c < 3; ++c)
            out.image[(size_t)((c * size + y) * size + x)] =
                img[(size_t)((c * os + sy) * os + sx)];
          out.mask[(size_t)(y * size + x)] = msk[(size_t)(sy * os + sx)];
        }
    }
  }

  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (cfg.flip_prob > 0 && u(rng) < cfg.flip_prob) flip_h(out);
  if (cfg.flip_prob > 0 && u(rng) < cfg.flip_prob) flip_v(out);
  if (cfg.rotate90) {
    std::uniform_int_distribution<int> quarter(0, 3);
    const int k = quarter(rng);
    for (int i = 0; i < k; ++i) rot90_once(out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

namespace {

struct Painter {
  Scene& s;
  std::mt19937_64& rng;

  void set(int64_t y, int64_t x, int32_t cls, float r, float g, float b) {
    if (y < 0 || y >= s.height || x < 0 || x >= s.width) return;
    const int64_t hw = s.height * s.width, i = y * s.width + x;
    s.mask[(size_t)i] = cls;
    s.image[(size_t)i] = r;
    s.image[(size_t)(hw + i)] = g;
    s.image[(size_t)(2 * hw + i)] = b;
  }

  // axis-aligned or rotated rectangle
  void rect(double cx, double cy, double half_w, double half_h, double angle, int32_t cls,
            float r, float g, float b, double stripe = 0.0) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double reach = std::hypot(half_w, half_h) + 1;
    for (int64_t y = (int64_t)(cy - reach); y <= (int64_t)(cy + reach); ++y)
      for (int64_t x = (int64_t)(cx - reach); x <= (int64_t)(cx + reach); ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * ca + dy * sa;
        const double v = -dx * sa + dy * ca;
        if (std::abs(u) <= half_w && std::abs(v) <= half_h) {
          float tex = stripe > 0 ? (float)(1.0 + stripe * std::sin(u * 1.1)) : 1.f;
          set(y, x, cls, r * tex, g * tex, b * tex);
        }
      }
  }

  void disk(double cx, double cy, double radius, int32_t cls, float r, float g, float b,
            double speckle = 0.0) {
    std::uniform_real_distribution<double> u(1.0 - speckle, 1.0 + speckle);
    for (int64_t y = (int64_t)(cy - radius); y <= (int64_t)(cy + radius); ++y)
      for (int64_t x = (int64_t)(cx - radius); x <= (int64_t)(cx + radius); ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= radius * radius) {
          const float tex = speckle > 0 ? (float)u(rng) : 1.f;
          set(y, x, cls, r * tex, g * tex, b * tex);
        }
      }
  }

  // thick band across the whole scene through (px,py) with direction angle
  void ribbon(double px, double py, double angle, double half_width, int32_t cls, float r,
              float g, float b) {
    const double nx = -std::sin(angle), ny = std::cos(angle);
    for (int64_t y = 0; y < s.height; ++y)
      for (int64_t x = 0; x < s.width; ++x) {
        const double d = (x - px) * nx + (y - py) * ny;
        if (std::abs(d) <= half_width) {
          const double along = (x - px) * std::cos(angle) + (y - py) * std::sin(angle);
          float tex = (float)(1.0 + 0.05 * std::sin(along * 0.8));
          const bool lane = std::abs(d) < 1.0 && ((int64_t)std::abs(along) % 24) < 10;
          if (lane) tex *= 1.35f;
          set(y, x, cls, r * tex, g * tex, b * tex);
        }
      }
  }
};

}  // namespace

Scene synth_scene(uint64_t seed, int64_t index, int64_t size) {
  Scene s;
  s.width = s.height = size;
  s.image.assign((size_t)(3 * size * size), 0.f);
  s.mask.assign((size_t)(size * size), 5);  // clutter background
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05lld", (long long)index);
  s.name = buf;

  std::mt19937_64 rng(mix_seed(seed, (uint64_t)index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto ux = [&] { return u01(rng) * size; };
  Painter p{s, rng};

  // clutter background: brownish with soft blotches
  {
    const int64_t hw = size * size;
    for (int64_t i = 0; i < hw; ++i) {
      s.image[(size_t)i] = 0.46f;
      s.image[(size_t)(hw + i)] = 0.41f;
      s.image[(size_t)(2 * hw + i)] = 0.36f;
    }
    const int blotches = 3 + (int)(u01(rng) * 4);
    for (int i = 0; i < blotches; ++i)
      p.disk(ux(), ux(), size * (0.08 + 0.10 * u01(rng)), 5, 0.42f + 0.08f * (float)u01(rng),
             0.38f + 0.06f * (float)u01(rng), 0.33f + 0.06f * (float)u01(rng), 0.05);
  }

  // low vegetation: large speckled ellipse-ish blobs
  {
    const int blobs = 2 + (int)(u01(rng) * 3);
    for (int i = 0; i < blobs; ++i) {
      const double cx = ux(), cy = ux();
      const double r0 = size * (0.10 + 0.14 * u01(rng));
      const int lobes = 3 + (int)(u01(rng) * 3);
      for (int l = 0; l < lobes; ++l)
        p.disk(cx + (u01(rng) - 0.5) * r0, cy + (u01(rng) - 0.5) * r0,
               r0 * (0.6 + 0.4 * u01(rng)), 2, 0.47f, 0.66f, 0.33f, 0.08);
    }
  }

  // impervious surface: 1-3 full-width ribbons
  {
    const int roads = 1 + (int)(u01(rng) * 3);
    for (int i = 0; i < roads; ++i) {
      const double angle = u01(rng) < 0.5 ? (u01(rng) < 0.5 ? 0.0 : 1.5707963)
                                          : u01(rng) * 3.14159265;
      p.ribbon(ux(), ux(), angle, 9.0 + 6.0 * u01(rng), 0, 0.55f, 0.55f, 0.57f);
    }
  }

  // buildings: mid-size rotated rectangles
  {
    const int count = 2 + (int)(u01(rng) * 4);
    const float palettes[3][3] = {
        {0.33f, 0.33f, 0.46f}, {0.48f, 0.30f, 0.27f}, {0.40f, 0.38f, 0.42f}};
    for (int i = 0; i < count; ++i) {
      const auto& c = palettes[(size_t)(u01(rng) * 3) % 3];
      p.rect(ux(), ux(), size * (0.05 + 0.07 * u01(rng)), size * (0.05 + 0.07 * u01(rng)),
             u01(rng) < 0.5 ? 0.0 : u01(rng) * 1.5707963, 1, c[0], c[1], c[2], 0.06);
    }
  }

  // trees: clusters of dark-green disks
  {
    const int clusters = 2 + (int)(u01(rng) * 3);
    for (int i = 0; i < clusters; ++i) {
      const double cx = ux(), cy = ux();
      const int n = 3 + (int)(u01(rng) * 6);
      for (int t = 0; t < n; ++t)
        p.disk(cx + (u01(rng) - 0.5) * size * 0.12, cy + (u01(rng) - 0.5) * size * 0.12,
               6.0 + 8.0 * u01(rng), 3, 0.15f, 0.43f, 0.19f, 0.10);
    }
  }

  // cars: small bright rectangles, preferably on a road
  {
    const int cars = 3 + (int)(u01(rng) * 4);
    const float colors[4][3] = {
        {0.90f, 0.84f, 0.20f}, {0.85f, 0.22f, 0.20f}, {0.92f, 0.92f, 0.92f},
        {0.22f, 0.32f, 0.85f}};
    for (int i = 0; i < cars; ++i) {
      double cx = ux(), cy = ux();
      for (int attempt = 0; attempt < 12; ++attempt) {
        const double tx = ux(), ty = ux();
        if (s.mask[(size_t)((int64_t)ty * size + (int64_t)tx)] == 0) {
          cx = tx;
          cy = ty;
          break;
        }
      }
      const auto& c = colors[(size_t)(u01(rng) * 4) % 4];
      p.rect(cx, cy, 12.0 + 4.0 * u01(rng), 7.0 + 2.0 * u01(rng), u01(rng) * 3.14159265, 4,
             c[0], c[1], c[2]);
    }
  }

  // sensor noise
  {
    std::normal_distribution<double> noise(0.0, 0.035);
    for (auto& v : s.image) v = std::clamp((float)(v + noise(rng)), 0.f, 1.f);
  }
  return s;
}

std::vector<Scene> synth_generate(const SynthConfig& cfg) {
  std::vector<Scene> scenes;
  scenes.reserve((size_t)cfg.count);
  for (int64_t i = 0; i < cfg.count; ++i) scenes.push_back(synth_scene(cfg.seed, i, cfg.size));
  return scenes;
}

// ---------------------------------------------------------------------------
// dataset directories
// ---------------------------------------------------------------------------

void save_dataset(const std::string& dir, const std::vector<Scene>& scenes,
                  const ClassPalette& palette) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (const auto& s : scenes) {
    ImageU8 img;
    img.width = s.width;
    img.height = s.height;
    img.channels = 3;
    img.pixels.resize((size_t)(3 * s.width * s.height));
    const int64_t hw = s.width * s.height;
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t c = 0; c < 3; ++c)
        img.pixels[(size_t)(3 * i + c)] =
            (uint8_t)std::lround(std::clamp(s.image[(size_t)(c * hw + i)], 0.f, 1.f) * 255.f);
    const std::string name = s.name + ".png";
    write_png((fs::path(dir) / "images" / name).string(), img);
    write_png((fs::path(dir) / "labels" / name).string(),
              palette.encode(s.mask, s.height, s.width));
    manifest << "images/" << name << " labels/" << name << "\n";
  }
}

std::vector<Scene> load_dataset(const std::string& dir, const ClassPalette& palette) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("no manifest.txt in " + dir);
  std::vector<Scene> scenes;
  std::string img_rel, lab_rel;
  while (manifest >> img_rel >> lab_rel) {
    auto img = read_png((fs::path(dir) / img_rel).string());
    auto lab = read_png((fs::path(dir) / lab_rel).string());
    BAFNET_CHECK(img.width == lab.width && img.height == lab.height,
                 "image/label extents differ for " << img_rel);
    Scene s;
    s.width = img.width;
    s.height = img.height;
    s.name = fs::path(img_rel).stem().string();
    const int64_t hw = s.width * s.height;
    s.image.resize((size_t)(3 * hw));
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t c = 0; c < 3; ++c)
        s.image[(size_t)(c * hw + i)] = (float)img.pixels[(size_t)(3 * i + c)] / 255.f;
    s.mask = palette.decode(lab);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace bafnet
