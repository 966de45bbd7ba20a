// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Remote-local path: a constant 1/8-resolution branch. Each block pairs a
// multi-scale local attention module with a shift-free windowed
// self-attention module whose cross-window mixing comes from a depthwise
// convolution.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bafnet/nn.hpp"

namespace bafnet {

// (B,C,H,W) -> (B*nWin, w*w, C) tokens, non-overlapping windows.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int64_t w) {
  BAFNET_CHECK(x.rank() == 4, "window_partition expects (B,C,H,W)");
  const int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  BAFNET_CHECK(w > 0 && h % w == 0 && wd % w == 0,
               "window " << w << " must divide " << h << "x" << wd);
  auto t = permute(x, {0, 2, 3, 1});                          // B,H,W,C
  t = reshape(t, {batch, h / w, w, wd / w, w, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});                         // B,nH,nW,w,w,C
  return reshape(t, {batch * (h / w) * (wd / w), w * w, c});
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& tokens, int64_t w, int64_t h, int64_t wd) {
  BAFNET_CHECK(tokens.rank() == 3 && tokens.dim(1) == w * w,
               "window_reverse expects (nWin, w*w, C) tokens");
  const int64_t wins = (h / w) * (wd / w);
  BAFNET_CHECK(tokens.dim(0) % wins == 0, "token count does not match target extent");
  const int64_t batch = tokens.dim(0) / wins, c = tokens.dim(2);
  auto t = reshape(tokens, {batch, h / w, wd / w, w, w, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});                         // B,nH,w,nW,w,C
  t = reshape(t, {batch, h, wd, c});
  return permute(t, {0, 3, 1, 2});                            // B,C,H,W
}

// Multi-head self-attention within one window, with a learned relative
// position bias per head. Scale is 1/sqrt(head_dim).
template <typename T>
struct WindowAttention {
  int64_t channels = 0, heads = 0, window = 0;
  nn::Linear<T> qkv, proj;
  Tensor<T> rel_bias_table;            // ((2w-1)^2, heads)
  std::vector<int64_t> rel_index;      // w^2 * w^2

  WindowAttention() = default;
  WindowAttention(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix,
                  int64_t c, int64_t num_heads, int64_t window_size)
      : channels(c), heads(num_heads), window(window_size) {
    BAFNET_CHECK(c % num_heads == 0, prefix << ": heads must divide channels");
    qkv = nn::Linear<T>(reg, rng, prefix + ".qkv", c, 3 * c);
    proj = nn::Linear<T>(reg, rng, prefix + ".proj", c, c);
    const int64_t span = 2 * window - 1;
    rel_bias_table =
        reg.add_param(prefix + ".rel_bias_table", Tensor<T>::zeros({span * span, heads}));
    const int64_t L = window * window;
    rel_index.resize((size_t)(L * L));
    for (int64_t i = 0; i < L; ++i)
      for (int64_t j = 0; j < L; ++j) {
        int64_t dy = i / window - j / window + window - 1;
        int64_t dx = i % window - j % window + window - 1;
        rel_index[(size_t)(i * L + j)] = dy * span + dx;
      }
  }

  // tokens (nWin, L, C) grouped per window.
  Tensor<T> forward(const Tensor<T>& tokens) const {
    const int64_t nw = tokens.dim(0), L = tokens.dim(1);
    BAFNET_CHECK(tokens.dim(2) == channels,
                 "window attention expects " << channels << " channels, got " << tokens.dim(2));
    const int64_t hd = channels / heads;
    auto qkv_out = qkv.forward(tokens);  // (nw, L, 3C)
    auto split_head = [&](int64_t off) {
      auto t = narrow(qkv_out, 2, off, channels);
      t = reshape(t, {nw, L, heads, hd});
      return permute(t, {0, 2, 1, 3});  // (nw, heads, L, hd)
    };
    auto q = split_head(0);
    auto k = split_head(channels);
    auto v = split_head(2 * channels);
    q = scale(q, (T)(1.0 / std::sqrt((double)hd)));
    auto scores = matmul(q, permute(k, {0, 1, 3, 2}));  // (nw, heads, L, L)
    auto bias = rows_lookup(rel_bias_table, rel_index); // (L*L, heads)
    bias = permute(reshape(bias, {L, L, heads}), {2, 0, 1});
    scores = add(scores, reshape(bias, {1, heads, L, L}));
    auto attn = softmax(scores, -1);
    auto out = matmul(attn, v);                         // (nw, heads, L, hd)
    out = reshape(permute(out, {0, 2, 1, 3}), {nw, L, channels});
    return proj.forward(out);
  }

  // Attention weights only, for the normalisation property tests.
  Tensor<T> attention_weights(const Tensor<T>& tokens) const {
    const int64_t nw = tokens.dim(0), L = tokens.dim(1);
    const int64_t hd = channels / heads;
    auto qkv_out = qkv.forward(tokens);
    auto split_head = [&](int64_t off) {
      auto t = narrow(qkv_out, 2, off, channels);
      return permute(reshape(t, {nw, L, heads, hd}), {0, 2, 1, 3});
    };
    auto q = scale(split_head(0), (T)(1.0 / std::sqrt((double)hd)));
    auto k = split_head(channels);
    auto scores = matmul(q, permute(k, {0, 1, 3, 2}));
    auto bias = rows_lookup(rel_bias_table, rel_index);
    bias = permute(reshape(bias, {L, L, heads}), {2, 0, 1});
    scores = add(scores, reshape(bias, {1, heads, L, L}));
    return softmax(scores, -1);
  }
};

// Multi-scale local attention: an expand/branch/reduce bottleneck whose
// output gates a linear transform of the input (expansion factor 2, branch
// kernels 3/5/7).
template <typename T>
struct Mslam {
  nn::Conv2d<T> expand_pw, dw3, dw5, dw7, reduce_pw, value_pw, out_pw;

  Mslam() = default;
  Mslam(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t c) {
    const int64_t e = 2 * c;
    expand_pw = nn::Conv2d<T>(reg, rng, prefix + ".expand_pw", c, e, 1);
    dw3 = nn::Conv2d<T>(reg, rng, prefix + ".dw3", e, e, 3, ConvSpec{1, 1, 1, (int)e});
    dw5 = nn::Conv2d<T>(reg, rng, prefix + ".dw5", e, e, 5, ConvSpec{1, 2, 1, (int)e});
    dw7 = nn::Conv2d<T>(reg, rng, prefix + ".dw7", e, e, 7, ConvSpec{1, 3, 1, (int)e});
    reduce_pw = nn::Conv2d<T>(reg, rng, prefix + ".reduce_pw", e, c, 1);
    value_pw = nn::Conv2d<T>(reg, rng, prefix + ".value_pw", c, c, 1);
    out_pw = nn::Conv2d<T>(reg, rng, prefix + ".out_pw", c, c, 1);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto expanded = expand_pw.forward(x);
    auto branches =
        add(add(dw3.forward(expanded), dw5.forward(expanded)), dw7.forward(expanded));
    auto attention = reduce_pw.forward(branches);
    auto value = value_pw.forward(x);
    return out_pw.forward(mul(attention, value));
  }
};

// Shift-free window attention block: window MHSA + MLP with the usual
// residuals, then a 7x7 depthwise conv wraps the second sum and carries
// information across window borders. The conv starts as an identity tap so
// the block begins as a plain windowed transformer block.
template <typename T>
struct Eram {
  int64_t window = 8;
  nn::LayerNorm<T> norm1, norm2;
  WindowAttention<T> attn;
  nn::Linear<T> fc1, fc2;
  nn::Conv2d<T> conv_mix;

  Eram() = default;
  Eram(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t c,
       int64_t heads, int64_t window_size, int64_t mlp_ratio)
      : window(window_size) {
    norm1 = nn::LayerNorm<T>(reg, prefix + ".norm1", c);
    attn = WindowAttention<T>(reg, rng, prefix + ".attn", c, heads, window_size);
    norm2 = nn::LayerNorm<T>(reg, prefix + ".norm2", c);
    fc1 = nn::Linear<T>(reg, rng, prefix + ".mlp.fc1", c, c * mlp_ratio);
    fc2 = nn::Linear<T>(reg, rng, prefix + ".mlp.fc2", c * mlp_ratio, c);
    conv_mix = nn::Conv2d<T>(reg, rng, prefix + ".conv_mix", c, c, 7,
                             ConvSpec{1, 3, 1, (int)c}, false, nn::WeightInit::DeltaDepthwise);
  }

  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* window_context = nullptr) const {
    const int64_t h = x.dim(2), w = x.dim(3);
    auto tokens = window_partition(x, window);
    auto attended = add(attn.forward(norm1.forward(tokens)), tokens);
    if (window_context) *window_context = window_reverse(attended, window, h, w);
    auto mlp_out = fc2.forward(gelu(fc1.forward(norm2.forward(attended))));
    auto summed = add(mlp_out, attended);
    return conv_mix.forward(window_reverse(summed, window, h, w));
  }
};

// Feature maps a block exposes for inspection, one set per block.
template <typename T>
struct ContextDump {
  std::string block;
  Tensor<T> local, window, remote, remote_local;
};

template <typename T>
using DumpSink = std::vector<ContextDump<T>>;

// Remote-local attention block: both branches read the block input, their
// sum is the remote-local context, and the block output adds the input back.
template <typename T>
struct Rlab {
  std::string name;
  std::optional<Mslam<T>> local;
  std::optional<Eram<T>> remote;

  Rlab() = default;
  Rlab(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix, int64_t c,
       int64_t heads, int64_t window, int64_t mlp_ratio, bool use_local, bool use_remote)
      : name(prefix) {
    BAFNET_CHECK(use_local || use_remote, prefix << ": block needs at least one branch");
    if (use_local) local.emplace(reg, rng, prefix + ".local", c);
    if (use_remote) remote.emplace(reg, rng, prefix + ".remote", c, heads, window, mlp_ratio);
  }

  Tensor<T> forward(const Tensor<T>& x, DumpSink<T>* dumps = nullptr) const {
    Tensor<T> local_ctx, remote_ctx, window_ctx;
    if (local) local_ctx = local->forward(x);
    if (remote) remote_ctx = remote->forward(x, dumps ? &window_ctx : nullptr);
    Tensor<T> ctx;
    if (local_ctx.defined() && remote_ctx.defined())
      ctx = add(local_ctx, remote_ctx);
    else
      ctx = local_ctx.defined() ? local_ctx : remote_ctx;
    if (dumps)
      dumps->push_back(ContextDump<T>{name, local_ctx, window_ctx, remote_ctx, ctx});
    return add(x, ctx);
  }
};

struct RemoteLocalConfig {
  int64_t channels = 128;
  std::array<int, 3> stage_blocks{2, 1, 1};
  int64_t heads = 4;
  int64_t window = 8;
  int64_t mlp_ratio = 4;
  bool use_local = true;
  bool use_remote = true;
};

template <typename T>
struct RemoteLocalPath {
  RemoteLocalConfig cfg;
  std::array<std::vector<Rlab<T>>, 3> stages;

  RemoteLocalPath() = default;
  RemoteLocalPath(ParamRegistry<T>& reg, nn::Rng& rng, const std::string& prefix,
                  RemoteLocalConfig c)
      : cfg(c) {
    const char* stage_names[3] = {"A", "B", "C"};
    for (int s = 0; s < 3; ++s)
      for (int j = 0; j < cfg.stage_blocks[(size_t)s]; ++j)
        stages[(size_t)s].emplace_back(
            reg, rng,
            prefix + ".stage" + stage_names[s] + ".block" + std::to_string(j + 1),
            cfg.channels, cfg.heads, cfg.window, cfg.mlp_ratio, cfg.use_local,
            cfg.use_remote);
  }

  Tensor<T> run_stage(int stage, const Tensor<T>& x, DumpSink<T>* dumps = nullptr) const {
    BAFNET_CHECK(x.dim(1) == cfg.channels, "remote-local path expects " << cfg.channels
                                                                        << " channels");
    Tensor<T> h = x;
    for (const auto& b : stages[(size_t)stage]) h = b.forward(h, dumps);
    return h;
  }

  int block_count() const {
    int n = 0;
    for (const auto& s : stages) n += (int)s.size();
    return n;
  }
};

}  // namespace bafnet
