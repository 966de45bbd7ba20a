// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Class index <-> RGB legend for label images. The default legend is the
// standard urban one: five foreground categories plus clutter.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bafnet/image_io.hpp"
#include "bafnet/tensor.hpp"

namespace bafnet {

struct ClassPalette {
  struct Entry {
    std::string name;
    std::array<uint8_t, 3> rgb;
  };
  std::vector<Entry> classes;

  static ClassPalette standard_six() {
    return ClassPalette{{
        {"impervious_surface", {255, 255, 255}},
        {"building", {0, 0, 255}},
        {"low_vegetation", {0, 255, 255}},
        {"tree", {0, 255, 0}},
        {"car", {255, 255, 0}},
        {"clutter", {255, 0, 0}},
    }};
  }

  int64_t num_classes() const { return (int64_t)classes.size(); }

  // Indices of the classes included in headline mean metrics (clutter is
  // reported per class but excluded from the means).
  std::vector<int64_t> foreground() const {
    std::vector<int64_t> out;
    for (int64_t k = 0; k < num_classes(); ++k)
      if (classes[(size_t)k].name != "clutter") out.push_back(k);
    return out;
  }

  ImageU8 encode(std::span<const int32_t> mask, int64_t h, int64_t w) const {
    BAFNET_CHECK((int64_t)mask.size() == h * w, "mask size does not match extent");
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize((size_t)(h * w * 3));
    for (int64_t i = 0; i < h * w; ++i) {
      const int32_t k = mask[(size_t)i];
      BAFNET_CHECK(k >= 0 && k < num_classes(), "class index " << k << " outside palette");
      const auto& rgb = classes[(size_t)k].rgb;
      img.pixels[(size_t)(3 * i)] = rgb[0];
      img.pixels[(size_t)(3 * i + 1)] = rgb[1];
      img.pixels[(size_t)(3 * i + 2)] = rgb[2];
    }
    return img;
  }

  // Exact inverse of encode; any colour outside the legend is an error that
  // names the first offending pixel.
  std::vector<int32_t> decode(const ImageU8& img) const {
    BAFNET_CHECK(img.channels == 3, "palette decode expects an RGB image");
    std::vector<int32_t> mask((size_t)(img.width * img.height));
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x) {
        int32_t found = -1;
        for (int64_t k = 0; k < num_classes(); ++k) {
          const auto& rgb = classes[(size_t)k].rgb;
          if (img.at(y, x, 0) == rgb[0] && img.at(y, x, 1) == rgb[1] &&
              img.at(y, x, 2) == rgb[2]) {
            found = (int32_t)k;
            break;
          }
        }
        BAFNET_CHECK(found >= 0, "unknown label colour ("
                                     << (int)img.at(y, x, 0) << "," << (int)img.at(y, x, 1)
                                     << "," << (int)img.at(y, x, 2) << ") at pixel (" << x
                                     << "," << y << ")");
        mask[(size_t)(y * img.width + x)] = found;
      }
    return mask;
  }
};

}  // namespace bafnet
