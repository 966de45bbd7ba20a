// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bafnet/archive.hpp"

#include <cstring>
#include <fstream>

namespace bafnet {

namespace {

constexpr char kMagic[4] = {'B', 'F', 'T', 'A'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("truncated tensor archive");
  return v;
}

}  // namespace

void TensorArchive::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write archive: " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  put<uint64_t>(os, entries.size());
  for (const auto& e : entries) {
    BAFNET_CHECK(e.name.size() < 65536, "archive entry name too long");
    put<uint16_t>(os, (uint16_t)e.name.size());
    os.write(e.name.data(), (std::streamsize)e.name.size());
    put<uint8_t>(os, (uint8_t)e.dtype);
    put<uint8_t>(os, (uint8_t)e.shape.size());
    for (int64_t d : e.shape) put<int64_t>(os, d);
    put<uint64_t>(os, e.payload.size());
    os.write(e.payload.data(), (std::streamsize)e.payload.size());
  }
  put<uint64_t>(os, manifest_json.size());
  os.write(manifest_json.data(), (std::streamsize)manifest_json.size());
  if (!os) throw std::runtime_error("write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open archive: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a tensor archive: " + path);
  const uint32_t version = take<uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("unsupported archive version");
  TensorArchive ar;
  const uint64_t n = take<uint64_t>(is);
  ar.entries.resize(n);
  for (auto& e : ar.entries) {
    const uint16_t len = take<uint16_t>(is);
    e.name.resize(len);
    is.read(e.name.data(), len);
    e.dtype = (DType)take<uint8_t>(is);
    const uint8_t rank = take<uint8_t>(is);
    e.shape.resize(rank);
    for (auto& d : e.shape) d = take<int64_t>(is);
    const uint64_t bytes = take<uint64_t>(is);
    e.payload.resize(bytes);
    is.read(e.payload.data(), (std::streamsize)bytes);
    if (!is) throw std::runtime_error("truncated tensor archive: " + path);
  }
  const uint64_t mlen = take<uint64_t>(is);
  ar.manifest_json.resize(mlen);
  is.read(ar.manifest_json.data(), (std::streamsize)mlen);
  if (!is) throw std::runtime_error("truncated tensor archive: " + path);
  return ar;
}

}  // namespace bafnet
