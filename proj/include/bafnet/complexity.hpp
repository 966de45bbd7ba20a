// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Parameter and operation accounting. Convolutions, linear maps and attention
// contractions are counted; normalisation, activations and resampling are not
// (they are two orders of magnitude below the conv cost here).
//
// Two conventions are reported side by side:
//   macs       multiply-accumulates (the convention segmentation papers use
//              when they say "FLOPs")
//   flops2     2*macs + bias adds

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafnet/model.hpp"

namespace bafnet {

struct OpCost {
  int64_t params = 0;
  int64_t macs = 0;
  int64_t adds = 0;  // bias adds

  int64_t flops2() const { return 2 * macs + adds; }
  OpCost& operator+=(const OpCost& o) {
    params += o.params;
    macs += o.macs;
    adds += o.adds;
    return *this;
  }
};

inline OpCost conv_cost(int64_t cin, int64_t cout, int64_t k, int64_t groups, int64_t oh,
                        int64_t ow, bool bias = true) {
  OpCost c;
  const int64_t cg = cin / groups;
  c.params = cout * cg * k * k + (bias ? cout : 0);
  c.macs = cout * cg * k * k * oh * ow;
  c.adds = bias ? cout * oh * ow : 0;
  return c;
}

inline OpCost bn_cost(int64_t c) { return OpCost{2 * c, 0, 0}; }
inline OpCost ln_cost(int64_t c) { return OpCost{2 * c, 0, 0}; }

inline OpCost linear_cost(int64_t in, int64_t out, int64_t tokens, bool bias = true) {
  OpCost c;
  c.params = in * out + (bias ? out : 0);
  c.macs = in * out * tokens;
  c.adds = bias ? out * tokens : 0;
  return c;
}

// Scaled dot-product inside `windows` windows of `tokens` tokens each:
// QK^T and the value mixdown, per head.
inline OpCost window_attention_scores(int64_t windows, int64_t tokens, int64_t heads,
                                      int64_t head_dim) {
  OpCost c;
  c.macs = 2 * windows * heads * tokens * tokens * head_dim;
  return c;
}

struct ModuleCost {
  std::string name;
  OpCost cost;
};

struct CostTable {
  std::vector<ModuleCost> rows;

  void add(const std::string& name, OpCost c) {
    for (auto& r : rows)
      if (r.name == name) {
        r.cost += c;
        return;
      }
    rows.push_back({name, c});
  }

  OpCost total() const {
    OpCost t;
    for (const auto& r : rows) t += r.cost;
    return t;
  }
};

namespace detail_cost {

inline OpCost van_block_cost(int64_t c, int64_t mlp_ratio, int64_t hw) {
  OpCost t;
  t += bn_cost(c);                              // norm1
  t += conv_cost(c, c, 1, 1, 1, hw);            // proj1 (hw folded into ow)
  t += conv_cost(c, c, 5, c, 1, hw);            // lka dw
  t += conv_cost(c, c, 7, c, 1, hw);            // lka dwd
  t += conv_cost(c, c, 1, 1, 1, hw);            // lka pw
  t += conv_cost(c, c, 1, 1, 1, hw);            // proj2
  t += bn_cost(c);                              // norm2
  const int64_t m = c * mlp_ratio;
  t += conv_cost(c, m, 1, 1, 1, hw);            // fc1
  t += conv_cost(m, m, 3, m, 1, hw);            // mlp dw
  t += conv_cost(m, c, 1, 1, 1, hw);            // fc2
  return t;
}

inline OpCost mslam_cost(int64_t c, int64_t hw) {
  OpCost t;
  const int64_t e = 2 * c;
  t += conv_cost(c, e, 1, 1, 1, hw);
  t += conv_cost(e, e, 3, e, 1, hw);
  t += conv_cost(e, e, 5, e, 1, hw);
  t += conv_cost(e, e, 7, e, 1, hw);
  t += conv_cost(e, c, 1, 1, 1, hw);
  t += conv_cost(c, c, 1, 1, 1, hw);  // value
  t += conv_cost(c, c, 1, 1, 1, hw);  // out
  return t;
}

inline OpCost eram_cost(int64_t c, int64_t heads, int64_t window, int64_t mlp_ratio,
                        int64_t h, int64_t w) {
  OpCost t;
  const int64_t hw = h * w;
  const int64_t wins = (h / window) * (w / window);
  t += ln_cost(c);
  t += linear_cost(c, 3 * c, hw);                                  // qkv
  t += window_attention_scores(wins, window * window, heads, c / heads);
  t.params += (2 * window - 1) * (2 * window - 1) * heads;         // relative bias
  t += linear_cost(c, c, hw);                                      // proj
  t += ln_cost(c);
  t += linear_cost(c, c * mlp_ratio, hw);
  t += linear_cost(c * mlp_ratio, c, hw);
  t += conv_cost(c, c, 7, c, 1, hw, false);                        // cross-window mix
  return t;
}

inline OpCost resnet_block_cost(int64_t cin, int64_t cout, int64_t hw, bool down) {
  OpCost t;
  t += conv_cost(cin, cout, 3, 1, 1, hw, false);
  t += bn_cost(cout);
  t += conv_cost(cout, cout, 3, 1, 1, hw, false);
  t += bn_cost(cout);
  if (down) {
    t += conv_cost(cin, cout, 1, 1, 1, hw, false);
    t += bn_cost(cout);
  }
  return t;
}

}  // namespace detail_cost

// Analytic walk over the assembled architecture at the given input extent.
// Mirrors the module constructors; exactness of the parameter column against
// the live registry is enforced by tests.
inline CostTable model_cost(const ModelConfig& cfg, int64_t h, int64_t w) {
  using namespace detail_cost;
  CostTable table;
  const int64_t h4 = h / 4, w4 = w / 4, h8 = h / 8, w8 = w / 8;
  const int64_t h16 = h / 16, w16 = w / 16, h32 = h / 32, w32 = w / 32;

  std::array<int64_t, 4> dims;
  if (cfg.backbone == BackboneKind::VanB0) {
    dims = cfg.van.dims;
    OpCost stem;
    stem += conv_cost(cfg.in_channels, dims[0], 3, 1, h / 2, w / 2);
    stem += bn_cost(dims[0]);
    stem += conv_cost(dims[0], dims[0], 3, 1, h4, w4);
    stem += bn_cost(dims[0]);
    table.add("dep.stem", stem);
    const int64_t hws[4] = {h4 * w4, h8 * w8, h16 * w16, h32 * w32};
    for (int s = 0; s < 4; ++s) {
      OpCost st;
      if (s > 0) {
        st += conv_cost(dims[(size_t)s - 1], dims[(size_t)s], 3, 1, 1, hws[s]);
        st += bn_cost(dims[(size_t)s]);
      }
      for (int j = 0; j < cfg.van.depths[(size_t)s]; ++j)
        st += van_block_cost(dims[(size_t)s], cfg.van.mlp_ratios[(size_t)s], hws[s]);
      table.add("dep.stage" + std::to_string(s + 1), st);
    }
  } else {
    dims = {64, 128, 256, 512};
    OpCost stem;
    stem += conv_cost(cfg.in_channels, 64, 3, 1, h / 2, w / 2);
    stem += bn_cost(64);
    stem += conv_cost(64, 64, 3, 1, h4, w4);
    stem += bn_cost(64);
    table.add("dep.stem", stem);
    const int64_t hws[4] = {h4 * w4, h8 * w8, h16 * w16, h32 * w32};
    for (int s = 0; s < 4; ++s) {
      OpCost st;
      const int64_t cin = s == 0 ? dims[0] : dims[(size_t)s - 1];
      st += resnet_block_cost(cin, dims[(size_t)s], hws[s], s > 0);
      st += resnet_block_cost(dims[(size_t)s], dims[(size_t)s], hws[s], false);
      table.add("dep.stage" + std::to_string(s + 1), st);
    }
  }

  if (cfg.has_remote_local()) {
    const int64_t rc = cfg.rl_channels;
    const int64_t hw8 = h8 * w8;
    {
      OpCost e;
      e += conv_cost(dims[1], rc, 1, 1, h8, w8);
      e += bn_cost(rc);
      table.add("entry", e);
    }
    {
      OpCost r;
      int blocks = 0;
      for (int b : cfg.rl_stage_blocks) blocks += b;
      for (int i = 0; i < blocks; ++i) {
        if (cfg.use_rl_local) r += mslam_cost(rc, hw8);
        if (cfg.use_rl_remote)
          r += eram_cost(rc, cfg.rl_heads, cfg.rl_window, cfg.rl_mlp_ratio, h8, w8);
      }
      table.add("rl", r);
    }
    {
      OpCost x1;
      x1 += conv_cost(dims[2], rc, 1, 1, h16, w16);  // into rl, at 1/16
      x1 += bn_cost(rc);
      x1 += conv_cost(rc, dims[2], 1, 1, h8, w8);    // into dep, at 1/8
      x1 += bn_cost(dims[2]);
      x1 += conv_cost(dims[2], dims[2], 3, 1, h16, w16);
      x1 += bn_cost(dims[2]);
      table.add("xch1", x1);
      OpCost x2;
      x2 += conv_cost(dims[3], rc, 1, 1, h32, w32);
      x2 += bn_cost(rc);
      x2 += conv_cost(rc, dims[3], 1, 1, h8, w8);
      x2 += bn_cost(dims[3]);
      x2 += conv_cost(dims[3], dims[3], 3, 1, h16, w16);
      x2 += bn_cost(dims[3]);
      x2 += conv_cost(dims[3], dims[3], 3, 1, h32, w32);
      x2 += bn_cost(dims[3]);
      table.add("xch2", x2);
    }
    if (cfg.fusion == FusionKind::Fam) {
      OpCost f;
      const int64_t fused = 2 * rc;
      f += conv_cost(dims[3], rc, 1, 1, h32, w32);   // low_proj
      f += conv_cost(fused, fused, 1, 1, h8, w8);    // gate linear
      f += conv_cost(fused, fused, 5, fused, 1, 1);  // gate conv after pooling
      f += bn_cost(fused);
      table.add("fam", f);
      OpCost hd;
      hd += conv_cost(fused, fused / 2, 3, 1, h8, w8);
      hd += bn_cost(fused / 2);
      hd += conv_cost(fused / 2, cfg.num_classes, 1, 1, h8, w8);
      table.add("head", hd);
    } else {
      OpCost f;
      f += conv_cost(dims[3], rc, 1, 1, h32, w32);
      table.add("fuse", f);
      OpCost hd;
      hd += conv_cost(rc, rc / 2, 3, 1, h8, w8);
      hd += bn_cost(rc / 2);
      hd += conv_cost(rc / 2, cfg.num_classes, 1, 1, h8, w8);
      table.add("head", hd);
    }
  } else {
    OpCost hd;
    hd += conv_cost(dims[3], dims[3] / 2, 3, 1, h32, w32);
    hd += bn_cost(dims[3] / 2);
    hd += conv_cost(dims[3] / 2, cfg.num_classes, 1, 1, h32, w32);
    table.add("head", hd);
  }
  return table;
}

}  // namespace bafnet
