// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Layer building blocks. Each module registers its parameters under a
// hierarchical name prefix at construction time.

#pragma once

#include <cmath>
#include <random>
#include <string>

#include "bafnet/registry.hpp"
#include "bafnet/tensor.hpp"

namespace bafnet::nn {

using Rng = std::mt19937_64;

template <typename T>
std::vector<T> normal_values(Rng& rng, int64_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v((size_t)n);
  for (auto& x : v) x = (T)dist(rng);
  return v;
}

// Fan-in scaled normal, the usual choice for conv/linear weights feeding a
// rectifying activation.
template <typename T>
Tensor<T> kaiming_normal(Rng& rng, Shape shape, int64_t fan_in) {
  double stddev = std::sqrt(2.0 / (double)fan_in);
  return Tensor<T>::from(shape, normal_values<T>(rng, shape_numel(shape), stddev));
}

template <typename T>
Tensor<T> normal_init(Rng& rng, Shape shape, double stddev) {
  return Tensor<T>::from(shape, normal_values<T>(rng, shape_numel(shape), stddev));
}

// Depthwise identity kernel: centre tap one, everything else zero.
template <typename T>
Tensor<T> delta_depthwise(int64_t channels, int64_t k) {
  auto t = Tensor<T>::zeros({channels, 1, k, k});
  for (int64_t c = 0; c < channels; ++c) t.data()[c * k * k + (k / 2) * k + (k / 2)] = T(1);
  return t;
}

enum class WeightInit { KaimingNormal, TruncatedSmall, Zero, DeltaDepthwise };

template <typename T>
struct Conv2d {
  Tensor<T> weight, bias;
  ConvSpec spec;

  Conv2d() = default;
  Conv2d(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix, int64_t cin,
         int64_t cout, int64_t k, ConvSpec sp = {}, bool with_bias = true,
         WeightInit init = WeightInit::KaimingNormal) {
    spec = sp;
    BAFNET_CHECK(cin % sp.groups == 0, prefix << ": groups must divide channels");
    Shape ws = {cout, cin / sp.groups, k, k};
    int64_t fan_in = (cin / sp.groups) * k * k;
    Tensor<T> w;
    switch (init) {
      case WeightInit::KaimingNormal: w = kaiming_normal<T>(rng, ws, fan_in); break;
      case WeightInit::TruncatedSmall: w = normal_init<T>(rng, ws, 0.02); break;
      case WeightInit::Zero: w = Tensor<T>::zeros(ws); break;
      case WeightInit::DeltaDepthwise:
        BAFNET_CHECK(sp.groups == cin && cout == cin, prefix << ": delta init is depthwise only");
        w = delta_depthwise<T>(cout, k);
        break;
    }
    weight = reg.add_param(prefix + ".weight", std::move(w));
    if (with_bias) bias = reg.add_param(prefix + ".bias", Tensor<T>::zeros({cout}), false);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, spec); }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta, running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() = default;
  BatchNorm2d(ParamRegistry<T>& reg, const std::string& prefix, int64_t c) {
    gamma = reg.add_param(prefix + ".gamma", Tensor<T>::filled({c}, T(1)), false);
    beta = reg.add_param(prefix + ".beta", Tensor<T>::zeros({c}), false);
    running_mean = reg.add_buffer(prefix + ".running_mean", Tensor<T>::zeros({c}));
    running_var = reg.add_buffer(prefix + ".running_var", Tensor<T>::filled({c}, T(1)));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma, beta, &running_mean, &running_var, training, momentum, eps);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamRegistry<T>& reg, const std::string& prefix, int64_t c) {
    gamma = reg.add_param(prefix + ".gamma", Tensor<T>::filled({c}, T(1)), false);
    beta = reg.add_param(prefix + ".beta", Tensor<T>::zeros({c}), false);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
};

// Dense layer over the last axis of a token tensor (..., in) -> (..., out).
template <typename T>
struct Linear {
  Tensor<T> weight;  // (in, out)
  Tensor<T> bias;    // (out)

  Linear() = default;
  Linear(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix, int64_t in,
         int64_t out, bool with_bias = true) {
    weight = reg.add_param(prefix + ".weight", normal_init<T>(rng, {in, out}, 0.02));
    if (with_bias) bias = reg.add_param(prefix + ".bias", Tensor<T>::zeros({out}), false);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    if (!bias.defined()) return y;
    Shape bs(y.shape().size(), 1);
    bs.back() = bias.numel();
    return add(y, reshape(bias, bs));
  }
};

}  // namespace bafnet::nn
