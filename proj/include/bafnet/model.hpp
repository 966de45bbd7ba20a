// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Full network assembly: backbone, remote-local path, the two bidirectional
// path exchanges, the feature aggregation module and the segmentation head.

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bafnet/remote_local.hpp"
#include "bafnet/van.hpp"

namespace bafnet {

enum class FusionKind { Sum, Fam };
enum class BackboneKind { VanB0, Resnet18 };

struct ModelConfig {
  int64_t num_classes = 6;
  int64_t in_channels = 3;
  VanConfig van;
  int64_t rl_channels = 128;
  std::array<int, 3> rl_stage_blocks{2, 1, 1};
  int64_t rl_heads = 4;
  int64_t rl_window = 8;
  int64_t rl_mlp_ratio = 4;
  bool use_rl_local = true;
  bool use_rl_remote = true;
  FusionKind fusion = FusionKind::Fam;
  BackboneKind backbone = BackboneKind::VanB0;
  uint64_t init_seed = 42;

  bool has_remote_local() const { return use_rl_local || use_rl_remote; }

  // The six ablation rows, from the plain baseline up to the full model.
  enum class Ablation { CpResnet18, CpVan, CpLocal, CpRemote, CpBothSum, Full };
  static ModelConfig ablation(Ablation a, int64_t classes = 6, uint64_t seed = 42) {
    ModelConfig c;
    c.num_classes = classes;
    c.init_seed = seed;
    switch (a) {
      case Ablation::CpResnet18:
        c.backbone = BackboneKind::Resnet18;
        c.use_rl_local = c.use_rl_remote = false;
        break;
      case Ablation::CpVan:
        c.use_rl_local = c.use_rl_remote = false;
        break;
      case Ablation::CpLocal:
        c.use_rl_remote = false;
        c.fusion = FusionKind::Sum;
        break;
      case Ablation::CpRemote:
        c.use_rl_local = false;
        c.fusion = FusionKind::Sum;
        break;
      case Ablation::CpBothSum:
        c.fusion = FusionKind::Sum;
        break;
      case Ablation::Full:
        break;
    }
    return c;
  }
};

// One direction of a path exchange. Channels are matched by a 1x1 conv plus
// normalisation; resolution by bilinear upsampling (into the high-resolution
// path) or a chain of stride-2 3x3 convs (into the low-resolution path).
// Projections start at zero, so a fresh exchange is the identity on both
// sides.
template <typename T>
struct ExchangeAdapter {
  nn::Conv2d<T> proj;
  nn::BatchNorm2d<T> proj_bn;
  std::vector<nn::Conv2d<T>> down_convs;
  std::vector<nn::BatchNorm2d<T>> down_bns;
  int up_factor = 1;

  ExchangeAdapter() = default;
  // ratio: source resolution / target resolution as a power of two;
  // > 1 downsamples, < 1 upsamples (expressed as up steps).
  ExchangeAdapter(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix,
                  int64_t cin, int64_t cout, int up_steps, int down_steps) {
    proj = nn::Conv2d<T>(reg, rng, prefix + ".proj", cin, cout, 1, ConvSpec{}, true,
                         nn::WeightInit::Zero);
    proj_bn = nn::BatchNorm2d<T>(reg, prefix + ".bn", cout);
    up_factor = 1 << up_steps;
    for (int i = 0; i < down_steps; ++i) {
      const std::string dp = prefix + ".down" + std::to_string(i + 1);
      down_convs.emplace_back(reg, rng, dp + ".conv", cout, cout, 3, ConvSpec{2, 1, 1, 1});
      down_bns.emplace_back(reg, dp + ".bn", cout);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto h = proj_bn.forward(proj.forward(x), training);
    if (up_factor > 1)
      h = bilinear_resize(h, x.dim(2) * up_factor, x.dim(3) * up_factor);
    for (size_t i = 0; i < down_convs.size(); ++i)
      h = down_bns[i].forward(down_convs[i].forward(h), training);
    return h;
  }
};

// Bidirectional exchange: each side receives the other path's features,
// aligned to its own shape, by element-wise addition.
template <typename T>
struct ExchangePair {
  ExchangeAdapter<T> into_rl, into_dep;
  int ratio;  // dep-path downsampling relative to the remote-local path

  ExchangePair() = default;
  ExchangePair(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix,
               int64_t dep_channels, int64_t rl_channels, int resolution_ratio)
      : ratio(resolution_ratio) {
    int steps = 0;
    for (int r = resolution_ratio; r > 1; r >>= 1) {
      BAFNET_CHECK(r % 2 == 0, prefix << ": resolution ratio " << resolution_ratio
                                      << " must be a power of two");
      ++steps;
    }
    into_rl = ExchangeAdapter<T>(reg, rng, prefix + ".into_rl", dep_channels, rl_channels,
                                 steps, 0);
    into_dep = ExchangeAdapter<T>(reg, rng, prefix + ".into_dep", rl_channels, dep_channels,
                                  0, steps);
  }

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& dep_feat, const Tensor<T>& rl_feat,
                                          bool training) {
    BAFNET_CHECK(rl_feat.dim(2) == dep_feat.dim(2) * ratio &&
                     rl_feat.dim(3) == dep_feat.dim(3) * ratio,
                 "exchange resolution mismatch: dep " << shape_str(dep_feat.shape())
                                                      << " vs rl " << shape_str(rl_feat.shape()));
    auto dep_fused = add(dep_feat, into_dep.forward(rl_feat, training));
    auto rl_fused = add(rl_feat, into_rl.forward(dep_feat, training));
    return {dep_fused, rl_fused};
  }
};

// Feature aggregation: concatenate the upsampled dependency output with the
// remote-local output, then gate the concatenation by per-channel weights
// derived from the pooled features.
template <typename T>
struct Fam {
  nn::Conv2d<T> low_proj;     // 1x1, dep channels -> rl channels
  nn::Conv2d<T> gate_linear;  // 1x1 on the concatenated channels
  nn::Conv2d<T> gate_conv;    // 5x5 depthwise applied after pooling
  nn::BatchNorm2d<T> gate_bn;

  Fam() = default;
  Fam(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t low_channels,
      int64_t high_channels) {
    const int64_t fused = 2 * high_channels;
    low_proj = nn::Conv2d<T>(reg, rng, prefix + ".low_proj", low_channels, high_channels, 1);
    gate_linear = nn::Conv2d<T>(reg, rng, prefix + ".gate_linear", fused, fused, 1);
    gate_conv = nn::Conv2d<T>(reg, rng, prefix + ".gate_conv", fused, fused, 5,
                              ConvSpec{1, 2, 1, (int)fused});
    gate_bn = nn::BatchNorm2d<T>(reg, prefix + ".gate_bn", fused);
  }

  Tensor<T> gate(const Tensor<T>& fused, bool training) {
    auto pooled = global_avg_pool(gate_linear.forward(fused));
    return sigmoid(gate_bn.forward(gate_conv.forward(pooled), training));
  }

  Tensor<T> forward(const Tensor<T>& low, const Tensor<T>& high, bool training) {
    auto low_up = bilinear_resize(low_proj.forward(low), high.dim(2), high.dim(3));
    BAFNET_CHECK(low_up.dim(2) == high.dim(2) && low_up.dim(3) == high.dim(3),
                 "aggregation resolution mismatch");
    auto fused = concat<T>({low_up, high}, 1);
    return mul(gate(fused, training), fused);
  }
};

// 3x3 conv halving the channels, 1x1 conv onto the classes, bilinear
// upsampling back to the input resolution.
template <typename T>
struct SegHead {
  nn::Conv2d<T> conv1, conv2;
  nn::BatchNorm2d<T> bn;
  int up_factor;

  SegHead() = default;
  SegHead(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t cin,
          int64_t classes, int upsample)
      : up_factor(upsample) {
    conv1 = nn::Conv2d<T>(reg, rng, prefix + ".conv1", cin, cin / 2, 3, ConvSpec{1, 1, 1, 1});
    bn = nn::BatchNorm2d<T>(reg, prefix + ".bn", cin / 2);
    conv2 = nn::Conv2d<T>(reg, rng, prefix + ".conv2", cin / 2, classes, 1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto h = relu(bn.forward(conv1.forward(x), training));
    auto logits = conv2.forward(h);
    return bilinear_resize(logits, logits.dim(2) * up_factor, logits.dim(3) * up_factor);
  }
};

// Stage outputs of one forward pass, highest resolution first.
template <typename T>
struct FeatureBundle {
  std::array<Tensor<T>, 4> dependency;   // 1/4, 1/8, 1/16, 1/32
  std::array<Tensor<T>, 3> remote_local; // all 1/8
};

template <typename T>
struct BafnetModel {
  ModelConfig cfg;
  ParamRegistry<T> reg;
  std::optional<DependencyPath<T>> van;
  std::optional<Resnet18Backbone<T>> resnet;
  nn::Conv2d<T> entry_proj;
  nn::BatchNorm2d<T> entry_bn;
  std::optional<RemoteLocalPath<T>> rl;
  ExchangePair<T> xch1, xch2;
  std::optional<Fam<T>> fam;
  nn::Conv2d<T> sum_proj;
  SegHead<T> head;

  explicit BafnetModel(ModelConfig config) : cfg(std::move(config)) {
    nn::Rng rng(cfg.init_seed);
    if (cfg.backbone == BackboneKind::VanB0) {
      VanConfig vc = cfg.van;
      vc.in_channels = cfg.in_channels;
      van.emplace(reg, rng, "dep", vc);
    } else {
      resnet.emplace(reg, rng, "dep", cfg.in_channels);
    }
    const int64_t rc = cfg.rl_channels;
    if (cfg.has_remote_local()) {
      entry_proj = nn::Conv2d<T>(reg, rng, "entry.proj", stage_channels(1), rc, 1);
      entry_bn = nn::BatchNorm2d<T>(reg, "entry.bn", rc);
      RemoteLocalConfig rlc;
      rlc.channels = rc;
      rlc.stage_blocks = cfg.rl_stage_blocks;
      rlc.heads = cfg.rl_heads;
      rlc.window = cfg.rl_window;
      rlc.mlp_ratio = cfg.rl_mlp_ratio;
      rlc.use_local = cfg.use_rl_local;
      rlc.use_remote = cfg.use_rl_remote;
      rl.emplace(reg, rng, "rl", rlc);
      xch1 = ExchangePair<T>(reg, rng, "xch1", stage_channels(2), rc, 2);
      xch2 = ExchangePair<T>(reg, rng, "xch2", stage_channels(3), rc, 4);
      if (cfg.fusion == FusionKind::Fam) {
        fam.emplace(reg, rng, "fam", stage_channels(3), rc);
        head = SegHead<T>(reg, rng, "head", 2 * rc, cfg.num_classes, 8);
      } else {
        sum_proj = nn::Conv2d<T>(reg, rng, "fuse.low_proj", stage_channels(3), rc, 1);
        head = SegHead<T>(reg, rng, "head", rc, cfg.num_classes, 8);
      }
    } else {
      head = SegHead<T>(reg, rng, "head", stage_channels(3), cfg.num_classes, 32);
    }
  }

  const ModelConfig& config() const { return cfg; }
  ParamRegistry<T>& registry() { return reg; }
  const ParamRegistry<T>& registry() const { return reg; }

  int64_t stage_channels(int i) const {
    return cfg.backbone == BackboneKind::VanB0 ? cfg.van.dims[(size_t)i]
                                               : resnet->dims[(size_t)i];
  }

  Tensor<T> run_backbone_stage(int i, const Tensor<T>& x, bool training) {
    return van ? van->run_stage(i, x, training) : resnet->run_stage(i, x, training);
  }

  void check_input(const Tensor<T>& image) const {
    BAFNET_CHECK(image.rank() == 4 && image.dim(1) == cfg.in_channels,
                 "expected (B," << cfg.in_channels << ",H,W) input, got "
                                << shape_str(image.shape()));
    const int64_t need = cfg.has_remote_local() ? 8 * cfg.rl_window : 32;
    BAFNET_CHECK(image.dim(2) % need == 0 && image.dim(3) % need == 0,
                 "input extent " << image.dim(2) << "x" << image.dim(3)
                                 << " must be divisible by " << need);
  }

  Tensor<T> forward(const Tensor<T>& image, bool training,
                    FeatureBundle<T>* bundle = nullptr, DumpSink<T>* dumps = nullptr) {
    check_input(image);
    auto d1 = run_backbone_stage(0, image, training);
    auto d2 = run_backbone_stage(1, d1, training);
    auto d3 = run_backbone_stage(2, d2, training);

    Tensor<T> fused;
    Tensor<T> d4;
    std::array<Tensor<T>, 3> rl_out;
    if (cfg.has_remote_local()) {
      auto r0 = entry_bn.forward(entry_proj.forward(d2), training);
      auto ra = rl->run_stage(0, r0, dumps);
      auto [d3f, raf] = xch1.forward(d3, ra, training);
      d4 = run_backbone_stage(3, d3f, training);
      auto rb = rl->run_stage(1, raf, dumps);
      auto [d4f, rbf] = xch2.forward(d4, rb, training);
      auto rc = rl->run_stage(2, rbf, dumps);
      rl_out = {ra, rb, rc};
      if (cfg.fusion == FusionKind::Fam) {
        fused = fam->forward(d4f, rc, training);
      } else {
        auto low_up = bilinear_resize(sum_proj.forward(d4f), rc.dim(2), rc.dim(3));
        fused = add(low_up, rc);
      }
    } else {
      d4 = run_backbone_stage(3, d3, training);
      fused = d4;
    }
    if (bundle) {
      bundle->dependency = {d1, d2, d3, d4};
      bundle->remote_local = rl_out;
    }
    return head.forward(fused, training);
  }
};

}  // namespace bafnet
