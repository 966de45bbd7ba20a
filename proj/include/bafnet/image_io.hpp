// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bafnet {

// Interleaved 8-bit image, row-major. channels is 1 (grey) or 3 (RGB).
struct ImageU8 {
  int64_t width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int64_t y, int64_t x, int64_t c) const {
    return pixels[(size_t)((y * width + x) * channels + c)];
  }
  uint8_t& at(int64_t y, int64_t x, int64_t c) {
    return pixels[(size_t)((y * width + x) * channels + c)];
  }
};

// Throws std::runtime_error on I/O or decode problems. Greyscale, palette and
// RGBA inputs are expanded to RGB.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

}  // namespace bafnet
