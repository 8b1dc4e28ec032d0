// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace earn {

using TokenId = std::int32_t;

/// Role of a token in the input. Roles always appear in this block order.
enum class Role : std::uint8_t { PrefixRegister, Prompt, SuffixRegister, Generated };

std::string_view to_string(Role role) noexcept;

inline bool is_register(Role role) noexcept {
  return role == Role::PrefixRegister || role == Role::SuffixRegister;
}

/// Decoder hyper-parameters.
struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int num_kv_heads = 4;  // == num_heads: MHA, divisor of num_heads: GQA
  int head_dim = 16;
  int hidden_dim = 64;   // == num_heads * head_dim
  int ffn_dim = 128;
  int vocab_size = 64;
  double rope_base = 10000.0;
  int max_positions = 8192;
  double norm_eps = 1e-6;

  /// Throws ConfigError naming the first inconsistent field.
  void validate() const;

  int group_size() const noexcept { return num_heads / num_kv_heads; }
  int q_width() const noexcept { return num_heads * head_dim; }
  int kv_width() const noexcept { return num_kv_heads * head_dim; }
};

/// Register tokens and the register layer depth k. Layers are numbered
/// 1..N; layers after k see no prompt tokens. k == N disables pruning.
struct RegisterSpec {
  int n_prefix = 1;
  int n_suffix = 1;
  int register_layer = 1;

  void validate(const ModelConfig& config) const;

  int count() const noexcept { return n_prefix + n_suffix; }
  bool prunes_layer(int layer) const noexcept { return layer > register_layer; }

  /// k = ceil(N/4) with one prefix and one suffix register.
  static RegisterSpec recommended(const ModelConfig& config) noexcept;
  /// Same registers, pruning disabled (k = N).
  RegisterSpec unpruned(const ModelConfig& config) const noexcept {
    return {n_prefix, n_suffix, config.num_layers};
  }
};

/// Token ids with per-token role and absolute position. Register tokens use
/// virtual ids starting at vocab_size: prefix i -> V + i, suffix j -> V + n_prefix + j.
struct SequenceLayout {
  std::vector<TokenId> tokens;
  std::vector<Role> roles;
  std::vector<std::int32_t> positions;

  /// [prefix registers; prompt; suffix registers], positions 0..n-1.
  static SequenceLayout assemble(const RegisterSpec& spec, std::span<const TokenId> prompt, int vocab_size);

  void append_generated(TokenId token);

  std::size_t size() const noexcept { return tokens.size(); }
  std::size_t count(Role role) const noexcept;
  std::int32_t next_position() const noexcept {
    return positions.empty() ? 0 : positions.back() + 1;
  }

  /// Checks block order, contiguous positions and token-id ranges.
  void validate(const ModelConfig& config, const RegisterSpec& spec) const;
};

}  // namespace earn
