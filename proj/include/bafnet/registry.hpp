// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bafnet/tensor.hpp"

namespace bafnet {

// Ordered name -> tensor map. Registration order is fixed by model
// construction, which makes initialisation and checkpoints deterministic.
template <typename T>
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
    bool decay = true;  // false for norm scales/shifts and biases
  };

  Tensor<T>& add_param(const std::string& name, Tensor<T> t, bool decay = true) {
    t.set_requires_grad(true);
    return emplace(name, std::move(t), true, decay);
  }

  Tensor<T>& add_buffer(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(false);
    return emplace(name, std::move(t), false, false);
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    BAFNET_CHECK(it != index_.end(), "no registry entry named '" << name << "'");
    return entries_[it->second].tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ParamRegistry*>(this)->at(name);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

  int64_t param_count_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable && e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.trainable) e.tensor.zero_grad();
  }

 private:
  Tensor<T>& emplace(const std::string& name, Tensor<T> t, bool trainable, bool decay) {
    BAFNET_CHECK(!index_.count(name), "duplicate registry entry '" << name << "'");
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(t), trainable, decay});
    return entries_.back().tensor;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace bafnet
