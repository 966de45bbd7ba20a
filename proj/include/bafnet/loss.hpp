// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Hybrid segmentation loss: per-class binary cross entropy plus soft dice,
// both driven by softmax probabilities and one-hot references.

#pragma once

#include <cmath>

#include "bafnet/tensor.hpp"

namespace bafnet {

// The default form keeps the (1-y)log(1-p) term of the per-class binary
// cross entropy; Categorical drops it, giving the standard CE.
enum class CeForm { PerClassBinary, Categorical };

namespace detail_loss {

inline void check_pair(const Shape& p, const Shape& y) {
  BAFNET_CHECK(p == y, "loss expects matching prob/one-hot shapes, got " << shape_str(p)
                                                                         << " vs "
                                                                         << shape_str(y));
  BAFNET_CHECK(p.size() >= 2, "loss expects at least (N,C) shaped inputs");
}

// Class axis is 1; everything else indexes pixels.
inline int64_t class_count(const Shape& s) { return s[1]; }

}  // namespace detail_loss

// Cross entropy per Eq. form: -(1/N) sum_i sum_c [ y log p + (1-y) log(1-p) ],
// probabilities clamped to [1e-7, 1-1e-7] before the logs.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& probs, const Tensor<T>& onehot,
                  CeForm form = CeForm::PerClassBinary) {
  detail_loss::check_pair(probs.shape(), onehot.shape());
  const int64_t c = detail_loss::class_count(probs.shape());
  const int64_t total = probs.numel();
  const int64_t n_pixels = total / c;
  const double lo = 1e-7, hi = 1.0 - 1e-7;

  double acc = 0;
  const T* p = probs.data();
  const T* y = onehot.data();
  for (int64_t i = 0; i < total; ++i) {
    const double pc = std::clamp((double)p[i], lo, hi);
    const double yc = (double)y[i];
    acc += yc * std::log(pc);
    if (form == CeForm::PerClassBinary) acc += (1.0 - yc) * std::log(1.0 - pc);
  }
  const double loss = -acc / (double)n_pixels;

  auto pn = probs.node();
  auto yn = onehot.node();
  return custom_op<T>(
      {1}, {(T)loss}, {probs, onehot},
      [pn, yn, total, n_pixels, lo, hi, form](detail::Node<T>& out) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const T g = out.grad[0];
        const T* p = pn->data.data();
        const T* y = yn->data.data();
        T* dp = pn->grad.data();
        const double inv_n = 1.0 / (double)n_pixels;
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < total; ++i) {
          const double pc = (double)p[i];
          if (pc <= lo || pc >= hi) continue;  // clamp region: flat
          double d = (double)y[i] / pc;
          if (form == CeForm::PerClassBinary) d -= (1.0 - (double)y[i]) / (1.0 - pc);
          dp[i] += g * (T)(-d * inv_n);
        }
      });
}

// Soft dice per pixel: 1 - (2/N) sum_i sum_c p*y / (p + y + eps).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& onehot, double eps = 1e-6) {
  detail_loss::check_pair(probs.shape(), onehot.shape());
  const int64_t c = detail_loss::class_count(probs.shape());
  const int64_t total = probs.numel();
  const int64_t n_pixels = total / c;

  double acc = 0;
  const T* p = probs.data();
  const T* y = onehot.data();
  for (int64_t i = 0; i < total; ++i) {
    const double pc = (double)p[i], yc = (double)y[i];
    acc += pc * yc / (pc + yc + eps);
  }
  const double loss = 1.0 - 2.0 * acc / (double)n_pixels;

  auto pn = probs.node();
  auto yn = onehot.node();
  return custom_op<T>(
      {1}, {(T)loss}, {probs, onehot},
      [pn, yn, total, n_pixels, eps](detail::Node<T>& out) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const T g = out.grad[0];
        const T* p = pn->data.data();
        const T* y = yn->data.data();
        T* dp = pn->grad.data();
        const double k = 2.0 / (double)n_pixels;
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < total; ++i) {
          const double pc = (double)p[i], yc = (double)y[i];
          const double den = pc + yc + eps;
          dp[i] += g * (T)(-k * (yc * yc + eps * yc) / (den * den));
        }
      });
}

template <typename T>
struct LossTerms {
  Tensor<T> ce, dice, total;
};

template <typename T>
LossTerms<T> hybrid_loss(const Tensor<T>& probs, const Tensor<T>& onehot,
                         CeForm form = CeForm::PerClassBinary) {
  LossTerms<T> t;
  t.ce = ce_loss(probs, onehot, form);
  t.dice = dice_loss(probs, onehot);
  t.total = add(t.ce, t.dice);
  return t;
}

// Plain record for logs and reports.
struct LossReport {
  double ce = 0, dice = 0, total = 0;
};

template <typename T>
LossReport to_report(const LossTerms<T>& t) {
  return LossReport{(double)t.ce.item(), (double)t.dice.item(), (double)t.total.item()};
}

}  // namespace bafnet
