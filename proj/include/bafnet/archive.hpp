// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Portable tensor container. Layout (all integers little-endian):
//
//   bytes 0..3   magic "BFTA"
//   u32          format version (1)
//   u64          entry count
//   per entry:   u16 name length, name bytes,
//                u8 dtype (0 = f32, 1 = f64),
//                u8 rank, i64 dims[rank],
//                u64 payload bytes, payload (row-major scalars)
//   u64          manifest length, manifest bytes (JSON)
//
// Round-trips are bit-exact: payloads are the raw scalar bytes.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafnet/registry.hpp"

namespace bafnet {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

struct ArchiveEntry {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<char> payload;

  template <typename T>
  static ArchiveEntry make(const std::string& name, const Shape& shape,
                           const std::vector<T>& values) {
    ArchiveEntry e;
    e.name = name;
    e.dtype = dtype_of<T>();
    e.shape = shape;
    e.payload.resize(values.size() * sizeof(T));
    std::memcpy(e.payload.data(), values.data(), e.payload.size());
    return e;
  }

  template <typename T>
  std::vector<T> values() const {
    BAFNET_CHECK(dtype == dtype_of<T>(), "archive entry '" << name << "' holds a different dtype");
    std::vector<T> out(payload.size() / sizeof(T));
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
  }
};

struct TensorArchive {
  std::vector<ArchiveEntry> entries;
  std::string manifest_json;

  const ArchiveEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);
};

// Every registry entry (parameters and buffers) into an archive, in
// registration order.
template <typename T>
void archive_registry(const ParamRegistry<T>& reg, TensorArchive& ar,
                      const std::string& prefix = "") {
  for (const auto& e : reg.entries())
    ar.entries.push_back(
        ArchiveEntry::make<T>(prefix + e.name, e.tensor.shape(), e.tensor.vec()));
}

// Strict restore: every registry entry must be present with matching shape.
template <typename T>
void restore_registry(ParamRegistry<T>& reg, const TensorArchive& ar,
                      const std::string& prefix = "") {
  for (auto& e : reg.entries()) {
    const ArchiveEntry* src = ar.find(prefix + e.name);
    BAFNET_CHECK(src, "checkpoint is missing tensor '" << prefix + e.name << "'");
    BAFNET_CHECK(src->shape == e.tensor.shape(),
                 "checkpoint shape mismatch for '" << e.name << "': stored "
                                                   << shape_str(src->shape) << ", model "
                                                   << shape_str(e.tensor.shape()));
    e.tensor.vec() = src->values<T>();
  }
}

}  // namespace bafnet
