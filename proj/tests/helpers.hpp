// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "earn/layout.hpp"

namespace earn::testing {

inline ModelConfig tiny_config(int layers = 3, int heads = 2, int kv_heads = 2, int head_dim = 4, int vocab = 16) {
  ModelConfig c;
  c.num_layers = layers;
  c.num_heads = heads;
  c.num_kv_heads = kv_heads;
  c.head_dim = head_dim;
  c.hidden_dim = heads * head_dim;
  c.ffn_dim = 2 * heads * head_dim;
  c.vocab_size = vocab;
  c.max_positions = 512;
  return c;
}

template <class Rng>
std::vector<TokenId> random_prompt(Rng& rng, std::size_t n, int vocab) {
  std::vector<TokenId> p(n);
  for (auto& t : p) t = static_cast<TokenId>(rng() % static_cast<unsigned>(vocab));
  return p;
}

}  // namespace earn::testing
