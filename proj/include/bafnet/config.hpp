// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Training configuration and its plain key=value text form. The same keys
// work in config files and as CLI overrides; the canonical serialisation is
// what gets hashed into checkpoints.

#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "bafnet/model.hpp"

namespace bafnet {

// Thrown on non-finite training state; the CLI maps it to exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr0 = 2e-4;
  double weight_decay = 1e-4;
  int64_t epochs = 60;
  int64_t batch_size = 16;
  uint64_t seed = 0;
  int64_t crop = 512;
  double val_fraction = 0.1;
  int64_t val_every = 1;
  std::string precision = "f32";  // f32 | f64
  bool augment = true;
  bool include_clutter_in_mean = false;
  std::string ce_form = "per_class_binary";  // | categorical
  ModelConfig model;

  CeForm ce() const {
    return ce_form == "categorical" ? CeForm::Categorical : CeForm::PerClassBinary;
  }
};

inline std::string to_kv(const TrainConfig& c) {
  std::ostringstream os;
  os << "lr0=" << c.lr0 << "\n";
  os << "weight_decay=" << c.weight_decay << "\n";
  os << "epochs=" << c.epochs << "\n";
  os << "batch_size=" << c.batch_size << "\n";
  os << "seed=" << c.seed << "\n";
  os << "crop=" << c.crop << "\n";
  os << "val_fraction=" << c.val_fraction << "\n";
  os << "val_every=" << c.val_every << "\n";
  os << "precision=" << c.precision << "\n";
  os << "augment=" << (c.augment ? "true" : "false") << "\n";
  os << "include_clutter_in_mean=" << (c.include_clutter_in_mean ? "true" : "false") << "\n";
  os << "ce_form=" << c.ce_form << "\n";
  os << "num_classes=" << c.model.num_classes << "\n";
  os << "backbone=" << (c.model.backbone == BackboneKind::VanB0 ? "van_b0" : "resnet18_stub")
     << "\n";
  os << "use_rl_local=" << (c.model.use_rl_local ? "true" : "false") << "\n";
  os << "use_rl_remote=" << (c.model.use_rl_remote ? "true" : "false") << "\n";
  os << "fusion=" << (c.model.fusion == FusionKind::Fam ? "fam" : "sum") << "\n";
  os << "rl_channels=" << c.model.rl_channels << "\n";
  os << "window=" << c.model.rl_window << "\n";
  os << "heads=" << c.model.rl_heads << "\n";
  os << "rl_mlp_ratio=" << c.model.rl_mlp_ratio << "\n";
  return os.str();
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

// Applies one key=value pair; throws std::invalid_argument on unknown keys or
// malformed values.
inline void apply_kv(TrainConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "lr0") c.lr0 = std::stod(value);
    else if (key == "weight_decay") c.weight_decay = std::stod(value);
    else if (key == "epochs") c.epochs = std::stoll(value);
    else if (key == "batch_size") c.batch_size = std::stoll(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "crop") c.crop = std::stoll(value);
    else if (key == "val_fraction") c.val_fraction = std::stod(value);
    else if (key == "val_every") c.val_every = std::stoll(value);
    else if (key == "precision") {
      if (value != "f32" && value != "f64")
        throw std::invalid_argument("precision must be f32 or f64");
      c.precision = value;
    } else if (key == "augment") c.augment = parse_bool(value);
    else if (key == "include_clutter_in_mean") c.include_clutter_in_mean = parse_bool(value);
    else if (key == "ce_form") {
      if (value != "per_class_binary" && value != "categorical")
        throw std::invalid_argument("ce_form must be per_class_binary or categorical");
      c.ce_form = value;
    } else if (key == "num_classes") c.model.num_classes = std::stoll(value);
    else if (key == "backbone") {
      if (value == "van_b0") c.model.backbone = BackboneKind::VanB0;
      else if (value == "resnet18_stub") c.model.backbone = BackboneKind::Resnet18;
      else throw std::invalid_argument("backbone must be van_b0 or resnet18_stub");
    } else if (key == "use_rl_local") c.model.use_rl_local = parse_bool(value);
    else if (key == "use_rl_remote") c.model.use_rl_remote = parse_bool(value);
    else if (key == "fusion") {
      if (value == "fam") c.model.fusion = FusionKind::Fam;
      else if (value == "sum") c.model.fusion = FusionKind::Sum;
      else throw std::invalid_argument("fusion must be fam or sum");
    } else if (key == "rl_channels") c.model.rl_channels = std::stoll(value);
    else if (key == "window") c.model.rl_window = std::stoll(value);
    else if (key == "heads") c.model.rl_heads = std::stoll(value);
    else if (key == "rl_mlp_ratio") c.model.rl_mlp_ratio = std::stoll(value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value for config key '" + key + "': '" + value + "'");
  }
  BAFNET_CHECK(c.lr0 > 0 && c.epochs > 0 && c.batch_size > 0,
               "lr0, epochs and batch_size must stay positive");
}

// key=value lines; '#' starts a comment.
inline void apply_kv_text(TrainConfig& c, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto ltrim = line.find_first_not_of(" \t\r");
    if (ltrim == std::string::npos) continue;
    auto rtrim = line.find_last_not_of(" \t\r");
    line = line.substr(ltrim, rtrim - ltrim + 1);
    auto eq = line.find('=');
    BAFNET_CHECK(eq != std::string::npos, "config line is not key=value: '" << line << "'");
    apply_kv(c, line.substr(0, eq), line.substr(eq + 1));
  }
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const TrainConfig& c) {
  std::ostringstream os;
  os << std::hex << fnv1a64(to_kv(c));
  return os.str();
}

}  // namespace bafnet
