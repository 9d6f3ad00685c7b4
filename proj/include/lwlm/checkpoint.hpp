// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <string>

#include "lwlm/layers.hpp"

namespace lwlm::ckpt {

/// Checkpoint container: 8-byte magic, little-endian u64 header length, a
/// JSON header (user metadata plus the ordered tensor directory), then raw
/// row-major float64 tensor data. Doubles are stored exactly, so reloading
/// reproduces eval-mode outputs bit-for-bit on the same platform.
inline constexpr char kMagic[8] = {'L', 'W', 'L', 'M', 'C', 'K', 'P', '1'};

using VisitAll = std::function<void(const nn::ParamVisitor&)>;

void save(const std::filesystem::path& path, const nlohmann::json& meta, const VisitAll& weights);

struct Loaded {
  nlohmann::json meta;
  std::map<std::string, nn::Matrix> tensors;
};

Loaded load(const std::filesystem::path& path);

/// Header only (for reconstructing configs before allocating weights).
nlohmann::json peek_meta(const std::filesystem::path& path);

/// Copies tensors into the visited parameters by name; resets gradient and
/// optimizer state. Throws on a missing name or shape mismatch.
void assign(const Loaded& loaded, const VisitAll& weights);

}  // namespace lwlm::ckpt
