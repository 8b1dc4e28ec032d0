// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "earn/model.hpp"

namespace earn {

/// Layout: "EARN", uint32 LE format version, uint64 LE header byte length,
/// header text with one "name rows cols offset" line per tensor (offset in
/// bytes from the start of the payload), then little-endian float32 payloads.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Weights<float>& weights);
/// Throws ParseError (line 0 for binary framing problems) on malformed input.
Weights<float> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Weights<float>& weights);
Weights<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace earn
