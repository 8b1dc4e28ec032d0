// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/layout.hpp"

#include <algorithm>
#include <string>

#include "earn/error.hpp"

namespace earn {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::PrefixRegister:
      return "prefix_register";
    case Role::Prompt:
      return "prompt";
    case Role::SuffixRegister:
      return "suffix_register";
    case Role::Generated:
      return "generated";
  }
  return "unknown";
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers", "must be >= 1");
  if (num_heads < 1) throw ConfigError("num_heads", "must be >= 1");
  if (num_kv_heads < 1 || num_heads % num_kv_heads != 0) {
    throw ConfigError("num_kv_heads", "must be >= 1 and divide num_heads");
  }
  if (head_dim < 2 || head_dim % 2 != 0) throw ConfigError("head_dim", "must be even and >= 2");
  if (hidden_dim != num_heads * head_dim) throw ConfigError("hidden_dim", "must equal num_heads * head_dim");
  if (ffn_dim < 1) throw ConfigError("ffn_dim", "must be >= 1");
  if (vocab_size < 1) throw ConfigError("vocab_size", "must be >= 1");
  if (!(rope_base > 0.0)) throw ConfigError("rope_base", "must be positive");
  if (max_positions < 1) throw ConfigError("max_positions", "must be >= 1");
  if (!(norm_eps >= 0.0)) throw ConfigError("norm_eps", "must be non-negative");
}

void RegisterSpec::validate(const ModelConfig& config) const {
  if (n_prefix < 0) throw ConfigError("n_prefix", "must be >= 0");
  if (n_suffix < 0) throw ConfigError("n_suffix", "must be >= 0");
  if (register_layer < 1 || register_layer > config.num_layers) {
    throw ConfigError("register_layer", "must satisfy 1 <= k <= num_layers");
  }
}

RegisterSpec RegisterSpec::recommended(const ModelConfig& config) noexcept {
  return {1, 1, std::max(1, (config.num_layers + 3) / 4)};
}

SequenceLayout SequenceLayout::assemble(const RegisterSpec& spec, std::span<const TokenId> prompt, int vocab_size) {
  SequenceLayout layout;
  const std::size_t n = static_cast<std::size_t>(spec.count()) + prompt.size();
  layout.tokens.reserve(n);
  layout.roles.reserve(n);
  layout.positions.reserve(n);
  auto push = [&](TokenId token, Role role) {
    layout.positions.push_back(static_cast<std::int32_t>(layout.tokens.size()));
    layout.tokens.push_back(token);
    layout.roles.push_back(role);
  };
  for (int i = 0; i < spec.n_prefix; ++i) push(vocab_size + i, Role::PrefixRegister);
  for (TokenId t : prompt) push(t, Role::Prompt);
  for (int j = 0; j < spec.n_suffix; ++j) push(vocab_size + spec.n_prefix + j, Role::SuffixRegister);
  return layout;
}

void SequenceLayout::append_generated(TokenId token) {
  positions.push_back(next_position());
  tokens.push_back(token);
  roles.push_back(Role::Generated);
}

std::size_t SequenceLayout::count(Role role) const noexcept {
  return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), role));
}

void SequenceLayout::validate(const ModelConfig& config, const RegisterSpec& spec) const {
  EARN_EXPECTS(tokens.size() == roles.size() && tokens.size() == positions.size(),
               "layout: tokens, roles and positions differ in length");
  const int vocab = config.vocab_size;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      EARN_EXPECTS(static_cast<int>(roles[i]) >= static_cast<int>(roles[i - 1]), "layout: roles out of block order");
    }
    EARN_EXPECTS(positions[i] == static_cast<std::int32_t>(i), "layout: positions must be 0,1,2,...");
    const TokenId t = tokens[i];
    switch (roles[i]) {
      case Role::PrefixRegister:
        EARN_EXPECTS(t >= vocab && t < vocab + spec.n_prefix, "layout: bad prefix register id");
        break;
      case Role::SuffixRegister:
        EARN_EXPECTS(t >= vocab + spec.n_prefix && t < vocab + spec.count(), "layout: bad suffix register id");
        break;
      case Role::Prompt:
      case Role::Generated:
        EARN_EXPECTS(t >= 0 && t < vocab, "layout: token id outside vocabulary");
        break;
    }
  }
}

}  // namespace earn
