// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "bafnet/registry.hpp"

namespace bafnet {

// lr(t) = 0.5 * lr0 * (1 + cos(pi * t / total)), clamped at zero.
inline double cosine_lr(int64_t step, int64_t total, double lr0) {
  BAFNET_CHECK(total > 0, "cosine schedule needs a positive horizon");
  BAFNET_CHECK(step >= 0 && step <= total, "cosine schedule step " << step
                                                                   << " outside [0," << total
                                                                   << "]");
  const double v = 0.5 * lr0 * (1.0 + std::cos(M_PI * (double)step / (double)total));
  return v > 0 ? v : 0.0;
}

// Decoupled weight decay; bias-corrected moments. Entries flagged no-decay
// (norm scales/shifts, biases) skip the decay term entirely.
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-4;

  void attach(const ParamRegistry<T>& reg) {
    m_.clear();
    v_.clear();
    for (const auto& e : reg.entries()) {
      m_.emplace_back(e.trainable ? e.tensor.numel() : 0, T(0));
      v_.emplace_back(e.trainable ? e.tensor.numel() : 0, T(0));
    }
    t_ = 0;
  }

  int64_t steps_taken() const { return t_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_steps_taken(int64_t t) { t_ = t; }

  void step(ParamRegistry<T>& reg, double lr) {
    BAFNET_CHECK(m_.size() == reg.entries().size(),
                 "optimizer state does not match the registry");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, (double)t_);
    const double bc2 = 1.0 - std::pow(beta2, (double)t_);
    for (size_t i = 0; i < reg.entries().size(); ++i) {
      auto& e = reg.entries()[i];
      if (!e.trainable) continue;
      const int64_t n = e.tensor.numel();
      BAFNET_CHECK((int64_t)m_[i].size() == n, "optimizer moment shape drifted for " << e.name);
      T* p = e.tensor.data();
      const bool has_grad = e.tensor.has_grad();
      const T* g = has_grad ? e.tensor.grad().data() : nullptr;
      T* m = m_[i].data();
      T* v = v_[i].data();
      const double decay = e.decay ? weight_decay : 0.0;
#pragma omp parallel for schedule(static)
      for (int64_t j = 0; j < n; ++j) {
        const double gj = g ? (double)g[j] : 0.0;
        const double mj = beta1 * (double)m[j] + (1.0 - beta1) * gj;
        const double vj = beta2 * (double)v[j] + (1.0 - beta2) * gj * gj;
        m[j] = (T)mj;
        v[j] = (T)vj;
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double pj = (double)p[j];
        pj -= lr * decay * pj;
        pj -= lr * mhat / (std::sqrt(vhat) + eps);
        p[j] = (T)pj;
      }
    }
  }

 private:
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace bafnet
