// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations. These stay independent of the library
// kernels they check: plain loops, no GEMM, no tape.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "bafnet/tensor.hpp"

namespace bafnet::testing {

// Direct convolution, one nested loop per dimension.
template <typename T>
std::vector<T> naive_conv2d(const std::vector<T>& x, const Shape& xs, const std::vector<T>& w,
                            const Shape& ws, const std::vector<T>* bias, const ConvSpec& sp,
                            Shape* out_shape = nullptr) {
  const int64_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int64_t Cout = ws[0], Cg = ws[1], K = ws[2];
  const int64_t G = sp.groups;
  const int64_t OH = (H + 2 * sp.padding - sp.dilation * (K - 1) - 1) / sp.stride + 1;
  const int64_t OW = (W + 2 * sp.padding - sp.dilation * (K - 1) - 1) / sp.stride + 1;
  const int64_t cout_g = Cout / G;
  std::vector<T> y((size_t)(B * Cout * OH * OW), T(0));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < Cout; ++oc) {
      const int64_t g = oc / cout_g;
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = bias ? (double)(*bias)[(size_t)oc] : 0.0;
          for (int64_t ic = 0; ic < Cg; ++ic)
            for (int64_t ky = 0; ky < K; ++ky)
              for (int64_t kx = 0; kx < K; ++kx) {
                int64_t iy = oy * sp.stride - sp.padding + ky * sp.dilation;
                int64_t ix = ox * sp.stride - sp.padding + kx * sp.dilation;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += (double)w[(size_t)(((oc * Cg + ic) * K + ky) * K + kx)] *
                       (double)x[(size_t)(((b * Cin + g * Cg + ic) * H + iy) * W + ix)];
              }
          y[(size_t)(((b * Cout + oc) * OH + oy) * OW + ox)] = (T)acc;
        }
    }
  if (out_shape) *out_shape = {B, Cout, OH, OW};
  return y;
}

inline std::vector<double> random_values(std::mt19937_64& rng, int64_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v((size_t)n);
  for (auto& x : v) x = d(rng);
  return v;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  bool ok = true;
};

// Central finite differences against the analytic gradients of `make_loss`,
// a callable rebuilding the forward pass from the given leaf tensors.
template <typename MakeLoss>
GradCheckReport grad_check(std::vector<Tensor<double>> leaves, MakeLoss make_loss,
                           double step = 1e-4, double tol = 1e-3,
                           int64_t max_per_leaf = -1, uint64_t seed = 0) {
  for (auto& l : leaves) l.zero_grad();
  {
    auto loss = make_loss();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    analytic.push_back(l.has_grad() ? l.grad() : std::vector<double>(l.numel(), 0.0));
    l.zero_grad();
  }

  GradCheckReport rep;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double atol = tol * 1e-2;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const int64_t n = leaf.numel();
    std::vector<int64_t> picks;
    if (max_per_leaf < 0 || n <= max_per_leaf) {
      picks.resize((size_t)n);
      for (int64_t i = 0; i < n; ++i) picks[(size_t)i] = i;
    } else {
      std::uniform_int_distribution<int64_t> d(0, n - 1);
      for (int64_t i = 0; i < max_per_leaf; ++i) picks.push_back(d(rng));
    }
    for (int64_t idx : picks) {
      const double orig = leaf.data()[idx];
      leaf.data()[idx] = orig + step;
      double lp = make_loss().item();
      leaf.data()[idx] = orig - step;
      double lm = make_loss().item();
      leaf.data()[idx] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double an = analytic[li][(size_t)idx];
      const double err = std::abs(an - fd);
      const double rel = err / std::max({std::abs(an), std::abs(fd), 1e-12});
      ++rep.checked;
      if (err > atol + tol * std::max(std::abs(an), std::abs(fd))) {
        rep.ok = false;
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
      } else {
        rep.max_rel_err = std::max(rep.max_rel_err, std::min(rel, tol));
      }
    }
  }
  return rep;
}

// Random-projection scalarisation: sensitises the loss to every output entry.
inline Tensor<double> project_to_scalar(const Tensor<double>& out, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> r((size_t)out.numel());
  for (auto& v : r) v = d(rng);
  auto weights = Tensor<double>::from(out.shape(), std::move(r));
  return sum(mul(out, weights));
}

}  // namespace bafnet::testing
