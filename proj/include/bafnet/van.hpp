// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dependency path: a four-stage encoder built from large-kernel-attention
// blocks, emitting feature maps at 1/4, 1/8, 1/16 and 1/32 resolution.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bafnet/nn.hpp"

namespace bafnet {

// Decomposed large-kernel attention: 5x5 depthwise, 7x7 depthwise with
// dilation 3, then a pointwise conv; the result gates the input.
template <typename T>
struct LkaAttention {
  nn::Conv2d<T> dw, dwd, pw;

  LkaAttention() = default;
  LkaAttention(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t c) {
    dw = nn::Conv2d<T>(reg, rng, prefix + ".dw", c, c, 5,
                       ConvSpec{1, 2, 1, (int)c});
    dwd = nn::Conv2d<T>(reg, rng, prefix + ".dwd", c, c, 7,
                        ConvSpec{1, 9, 3, (int)c});
    pw = nn::Conv2d<T>(reg, rng, prefix + ".pw", c, c, 1);
  }

  Tensor<T> attention_map(const Tensor<T>& x) const {
    return pw.forward(dwd.forward(dw.forward(x)));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return mul(attention_map(x), x); }
};

template <typename T>
struct VanBlock {
  nn::BatchNorm2d<T> norm1, norm2;
  nn::Conv2d<T> proj1, proj2;   // 1x1 around the attention
  LkaAttention<T> lka;
  nn::Conv2d<T> fc1, mlp_dw, fc2;

  VanBlock() = default;
  VanBlock(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t c,
           int64_t mlp_ratio) {
    norm1 = nn::BatchNorm2d<T>(reg, prefix + ".norm1", c);
    proj1 = nn::Conv2d<T>(reg, rng, prefix + ".attn.proj1", c, c, 1);
    lka = LkaAttention<T>(reg, rng, prefix + ".attn.lka", c);
    proj2 = nn::Conv2d<T>(reg, rng, prefix + ".attn.proj2", c, c, 1);
    norm2 = nn::BatchNorm2d<T>(reg, prefix + ".norm2", c);
    const int64_t hidden = c * mlp_ratio;
    fc1 = nn::Conv2d<T>(reg, rng, prefix + ".mlp.fc1", c, hidden, 1);
    mlp_dw = nn::Conv2d<T>(reg, rng, prefix + ".mlp.dw", hidden, hidden, 3,
                           ConvSpec{1, 1, 1, (int)hidden});
    fc2 = nn::Conv2d<T>(reg, rng, prefix + ".mlp.fc2", hidden, c, 1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto a = proj2.forward(lka.forward(gelu(proj1.forward(norm1.forward(x, training)))));
    auto h = add(x, a);
    auto m = fc2.forward(gelu(mlp_dw.forward(fc1.forward(norm2.forward(h, training)))));
    return add(h, m);
  }
};

struct VanConfig {
  std::array<int64_t, 4> dims{32, 64, 160, 256};
  std::array<int, 4> depths{3, 3, 5, 2};
  std::array<int64_t, 4> mlp_ratios{8, 8, 4, 4};
  int64_t in_channels = 3;
};

template <typename T>
struct DependencyPath {
  VanConfig cfg;
  // stride-4 stem: two stride-2 convolutions
  nn::Conv2d<T> stem1, stem2;
  nn::BatchNorm2d<T> stem_bn1, stem_bn2;
  std::array<nn::Conv2d<T>, 3> embed_conv;  // stage i>0 downsampling
  std::array<nn::BatchNorm2d<T>, 3> embed_bn;
  std::array<std::vector<VanBlock<T>>, 4> blocks;

  DependencyPath() = default;
  DependencyPath(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix,
                 VanConfig c)
      : cfg(c) {
    stem1 = nn::Conv2d<T>(reg, rng, prefix + ".stem.conv1", cfg.in_channels, cfg.dims[0], 3,
                          ConvSpec{2, 1, 1, 1});
    stem_bn1 = nn::BatchNorm2d<T>(reg, prefix + ".stem.bn1", cfg.dims[0]);
    stem2 = nn::Conv2d<T>(reg, rng, prefix + ".stem.conv2", cfg.dims[0], cfg.dims[0], 3,
                          ConvSpec{2, 1, 1, 1});
    stem_bn2 = nn::BatchNorm2d<T>(reg, prefix + ".stem.bn2", cfg.dims[0]);
    for (int s = 1; s < 4; ++s) {
      const std::string ep = prefix + ".stage" + std::to_string(s + 1) + ".embed";
      embed_conv[s - 1] = nn::Conv2d<T>(reg, rng, ep + ".conv", cfg.dims[s - 1], cfg.dims[s],
                                        3, ConvSpec{2, 1, 1, 1});
      embed_bn[s - 1] = nn::BatchNorm2d<T>(reg, ep + ".bn", cfg.dims[s]);
    }
    for (int s = 0; s < 4; ++s) {
      for (int j = 0; j < cfg.depths[s]; ++j) {
        blocks[s].emplace_back(reg, rng,
                               prefix + ".stage" + std::to_string(s + 1) + ".block" +
                                   std::to_string(j + 1),
                               cfg.dims[s], cfg.mlp_ratios[s]);
      }
    }
  }

  // Stage 0 consumes the image; stage i>0 consumes the previous stage map
  // (possibly after a path exchange).
  Tensor<T> run_stage(int stage, const Tensor<T>& x, bool training) {
    Tensor<T> h;
    if (stage == 0) {
      BAFNET_CHECK(x.dim(1) == cfg.in_channels,
                   "dependency path expects " << cfg.in_channels << " input channels, got "
                                              << x.dim(1));
      h = gelu(stem_bn1.forward(stem1.forward(x), training));
      h = stem_bn2.forward(stem2.forward(h), training);
    } else {
      h = embed_bn[stage - 1].forward(embed_conv[stage - 1].forward(x), training);
    }
    for (auto& b : blocks[stage]) h = b.forward(h, training);
    return h;
  }

  std::array<Tensor<T>, 4> forward(const Tensor<T>& image, bool training) {
    BAFNET_CHECK(image.rank() == 4, "dependency path expects (B,3,H,W)");
    BAFNET_CHECK(image.dim(2) % 32 == 0 && image.dim(3) % 32 == 0,
                 "input extent " << image.dim(2) << "x" << image.dim(3)
                                 << " must be divisible by 32");
    std::array<Tensor<T>, 4> out;
    Tensor<T> h = image;
    for (int s = 0; s < 4; ++s) {
      h = run_stage(s, h, training);
      out[s] = h;
    }
    return out;
  }
};

// Minimal ResNet18-style baseline backbone for the ablation grid. Same
// stage resolutions as the dependency path (1/4 .. 1/32).
template <typename T>
struct Resnet18Backbone {
  struct BasicBlock {
    nn::Conv2d<T> conv1, conv2;
    nn::BatchNorm2d<T> bn1, bn2;
    std::optional<nn::Conv2d<T>> down_conv;
    std::optional<nn::BatchNorm2d<T>> down_bn;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
      auto h = relu(bn1.forward(conv1.forward(x), training));
      h = bn2.forward(conv2.forward(h), training);
      auto sc = x;
      if (down_conv) sc = down_bn->forward(down_conv->forward(x), training);
      return relu(add(h, sc));
    }
  };

  std::array<int64_t, 4> dims{64, 128, 256, 512};
  nn::Conv2d<T> stem1, stem2;
  nn::BatchNorm2d<T> stem_bn1, stem_bn2;
  std::array<std::vector<BasicBlock>, 4> blocks;

  Resnet18Backbone() = default;
  Resnet18Backbone(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix,
                   int64_t in_channels = 3) {
    stem1 = nn::Conv2d<T>(reg, rng, prefix + ".stem.conv1", in_channels, dims[0], 3,
                          ConvSpec{2, 1, 1, 1});
    stem_bn1 = nn::BatchNorm2d<T>(reg, prefix + ".stem.bn1", dims[0]);
    stem2 = nn::Conv2d<T>(reg, rng, prefix + ".stem.conv2", dims[0], dims[0], 3,
                          ConvSpec{2, 1, 1, 1});
    stem_bn2 = nn::BatchNorm2d<T>(reg, prefix + ".stem.bn2", dims[0]);
    for (int s = 0; s < 4; ++s) {
      int64_t cin = s == 0 ? dims[0] : dims[s - 1];
      for (int j = 0; j < 2; ++j) {
        const std::string bp = prefix + ".stage" + std::to_string(s + 1) + ".block" +
                               std::to_string(j + 1);
        BasicBlock b;
        int stride = (j == 0 && s > 0) ? 2 : 1;
        int64_t bin = j == 0 ? cin : dims[s];
        b.conv1 = nn::Conv2d<T>(reg, rng, bp + ".conv1", bin, dims[s], 3,
                                ConvSpec{stride, 1, 1, 1}, false);
        b.bn1 = nn::BatchNorm2d<T>(reg, bp + ".bn1", dims[s]);
        b.conv2 = nn::Conv2d<T>(reg, rng, bp + ".conv2", dims[s], dims[s], 3,
                                ConvSpec{1, 1, 1, 1}, false);
        b.bn2 = nn::BatchNorm2d<T>(reg, bp + ".bn2", dims[s]);
        if (stride != 1 || bin != dims[s]) {
          b.down_conv = nn::Conv2d<T>(reg, rng, bp + ".down.conv", bin, dims[s], 1,
                                      ConvSpec{stride, 0, 1, 1}, false);
          b.down_bn = nn::BatchNorm2d<T>(reg, bp + ".down.bn", dims[s]);
        }
        blocks[s].push_back(std::move(b));
      }
    }
  }

  Tensor<T> run_stage(int stage, const Tensor<T>& x, bool training) {
    Tensor<T> h = x;
    if (stage == 0) {
      h = relu(stem_bn1.forward(stem1.forward(h), training));
      h = relu(stem_bn2.forward(stem2.forward(h), training));
    }
    for (auto& b : blocks[stage]) h = b.forward(h, training);
    return h;
  }
};

}  // namespace bafnet
