// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Cumulative confusion matrix and the scores derived from it. Rows index the
// reference class, columns the predicted class.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bafnet/tensor.hpp"

namespace bafnet {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t num_classes, int64_t ignore_label = -1)
      : c_(num_classes), ignore_(ignore_label), counts_((size_t)(num_classes * num_classes), 0) {
    BAFNET_CHECK(num_classes > 0, "confusion matrix needs at least one class");
  }

  int64_t num_classes() const { return c_; }
  int64_t ignore_label() const { return ignore_; }

  int64_t at(int64_t ref, int64_t pred) const { return counts_[(size_t)(ref * c_ + pred)]; }
  const std::vector<int64_t>& counts() const { return counts_; }

  int64_t total() const {
    int64_t t = 0;
    for (int64_t v : counts_) t += v;
    return t;
  }

  // Reference pixels carrying the ignore label are skipped.
  void accumulate(std::span<const int32_t> pred, std::span<const int32_t> ref) {
    BAFNET_CHECK(pred.size() == ref.size(), "mask sizes differ: " << pred.size() << " vs "
                                                                  << ref.size());
    for (size_t i = 0; i < pred.size(); ++i) {
      if (ref[i] == ignore_) continue;
      BAFNET_CHECK(ref[i] >= 0 && ref[i] < c_ && pred[i] >= 0 && pred[i] < c_,
                   "class index out of range at pixel " << i << ": ref " << ref[i]
                                                        << " pred " << pred[i]);
      ++counts_[(size_t)(ref[i] * c_ + pred[i])];
    }
  }

  void merge(const ConfusionMatrix& other) {
    BAFNET_CHECK(other.c_ == c_, "cannot merge confusion matrices of different sizes");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  int64_t tp(int64_t k) const { return at(k, k); }
  int64_t fp(int64_t k) const {
    int64_t s = 0;
    for (int64_t r = 0; r < c_; ++r)
      if (r != k) s += at(r, k);
    return s;
  }
  int64_t fn(int64_t k) const {
    int64_t s = 0;
    for (int64_t p = 0; p < c_; ++p)
      if (p != k) s += at(k, p);
    return s;
  }
  int64_t tn(int64_t k) const { return total() - tp(k) - fp(k) - fn(k); }

 private:
  int64_t c_;
  int64_t ignore_;
  std::vector<int64_t> counts_;
};

struct ClassScore {
  double iou = 0, f1 = 0, precision = 0, recall = 0;
  bool defined = false;  // false when the class never appears in ref or pred
};

inline ClassScore class_score(const ConfusionMatrix& cm, int64_t k) {
  ClassScore s;
  const double tp = (double)cm.tp(k), fp = (double)cm.fp(k), fn = (double)cm.fn(k);
  const double iou_den = tp + fp + fn;
  s.defined = iou_den > 0;
  s.iou = s.defined ? tp / iou_den : 0.0;
  s.precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
  s.recall = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
  const double pr = s.precision + s.recall;
  s.f1 = pr > 0 ? 2.0 * s.precision * s.recall / pr : 0.0;
  return s;
}

// Overall accuracy: correctly classified pixels over all scored pixels.
inline double oa(const ConfusionMatrix& cm) {
  const int64_t t = cm.total();
  BAFNET_CHECK(t > 0, "metrics on an empty confusion matrix");
  int64_t diag = 0;
  for (int64_t k = 0; k < cm.num_classes(); ++k) diag += cm.tp(k);
  return (double)diag / (double)t;
}

// `included` restricts the mean to those classes (foreground-only reporting);
// empty means all classes.
inline double miou(const ConfusionMatrix& cm, std::span<const int64_t> included = {}) {
  BAFNET_CHECK(cm.total() > 0, "metrics on an empty confusion matrix");
  std::vector<int64_t> all;
  if (included.empty()) {
    for (int64_t k = 0; k < cm.num_classes(); ++k) all.push_back(k);
    included = all;
  }
  double s = 0;
  for (int64_t k : included) s += class_score(cm, k).iou;
  return s / (double)included.size();
}

inline std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<double> out;
  for (int64_t k = 0; k < cm.num_classes(); ++k) out.push_back(class_score(cm, k).f1);
  return out;
}

inline double mean_f1(const ConfusionMatrix& cm, std::span<const int64_t> included = {}) {
  BAFNET_CHECK(cm.total() > 0, "metrics on an empty confusion matrix");
  std::vector<int64_t> all;
  if (included.empty()) {
    for (int64_t k = 0; k < cm.num_classes(); ++k) all.push_back(k);
    included = all;
  }
  double s = 0;
  for (int64_t k : included) s += class_score(cm, k).f1;
  return s / (double)included.size();
}

// Diagnostics: the alternative normalisations/compositions, kept alongside the
// defaults used for reporting.
namespace diagnostics {

// Accuracy normalised by sum_k (TP+FP+TN+FN) = C * total.
inline double oa_per_class_normalised(const ConfusionMatrix& cm) {
  return oa(cm) / (double)cm.num_classes();
}

// F1 of the macro-averaged precision and recall rather than the mean of
// per-class F1 scores.
inline double macro_composed_f1(const ConfusionMatrix& cm,
                                std::span<const int64_t> included = {}) {
  std::vector<int64_t> all;
  if (included.empty()) {
    for (int64_t k = 0; k < cm.num_classes(); ++k) all.push_back(k);
    included = all;
  }
  double p = 0, r = 0;
  for (int64_t k : included) {
    auto s = class_score(cm, k);
    p += s.precision;
    r += s.recall;
  }
  p /= (double)included.size();
  r /= (double)included.size();
  return (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace diagnostics

}  // namespace bafnet
