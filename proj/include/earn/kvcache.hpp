// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "earn/layout.hpp"
#include "earn/numkernel.hpp"

namespace earn {

/// Key/value store for one decoder layer. Each cached token holds one
/// head_dim vector per kv-head for keys and for values, plus its role and
/// absolute position. Entries stay in position order.
///
/// A cache built for a pruned layer (layer > k) refuses Prompt entries, so
/// prompt keys never exist past the register layer.
template <class T>
class BasicLayerKvCache {
 public:
  BasicLayerKvCache() = default;
  BasicLayerKvCache(int layer, int num_kv_heads, int head_dim, bool rejects_prompt)
      : layer_(layer),
        num_kv_heads_(num_kv_heads),
        head_dim_(head_dim),
        rejects_prompt_(rejects_prompt),
        keys_(0, static_cast<std::size_t>(num_kv_heads) * head_dim),
        values_(0, static_cast<std::size_t>(num_kv_heads) * head_dim) {}

  /// `key` and `value` are num_kv_heads*head_dim wide (kv-heads concatenated).
  void append(std::span<const T> key, std::span<const T> value, Role role, std::int32_t position);

  /// Keeps the first `n_initial` and last `n_recent` entries; drops the rest.
  void retain_window(std::size_t n_initial, std::size_t n_recent);

  std::size_t size() const noexcept { return roles_.size(); }
  bool empty() const noexcept { return roles_.empty(); }
  int layer() const noexcept { return layer_; }
  int num_kv_heads() const noexcept { return num_kv_heads_; }
  int head_dim() const noexcept { return head_dim_; }
  bool rejects_prompt() const noexcept { return rejects_prompt_; }

  std::span<const T> key(std::size_t token, int kv_head) const noexcept {
    return keys_.row(token).subspan(static_cast<std::size_t>(kv_head) * head_dim_, head_dim_);
  }
  std::span<const T> value(std::size_t token, int kv_head) const noexcept {
    return values_.row(token).subspan(static_cast<std::size_t>(kv_head) * head_dim_, head_dim_);
  }
  const BasicMatrix<T>& keys() const noexcept { return keys_; }
  const BasicMatrix<T>& values() const noexcept { return values_; }
  const std::vector<Role>& roles() const noexcept { return roles_; }
  const std::vector<std::int32_t>& positions() const noexcept { return positions_; }

 private:
  int layer_ = 0;
  int num_kv_heads_ = 0;
  int head_dim_ = 0;
  bool rejects_prompt_ = false;
  BasicMatrix<T> keys_;
  BasicMatrix<T> values_;
  std::vector<Role> roles_;
  std::vector<std::int32_t> positions_;
};

using LayerKvCache = BasicLayerKvCache<float>;

/// Live key/value pair counts. Allocator slack is not counted.
struct CacheStats {
  std::vector<std::uint64_t> pairs_per_layer;
  std::uint64_t total_pairs = 0;

  static CacheStats from_counts(std::vector<std::uint64_t> per_layer);
  CacheStats& operator+=(const CacheStats& other);
};

/// total_pairs × n_kv × d_a × 2 (keys and values) × element_bytes.
std::uint64_t bytes(const CacheStats& stats, int num_kv_heads, int head_dim, int element_bytes);

/// Per-kv-head pair count after prefill of L_total tokens (registers
/// included) and g decode steps: k·(L_total+g) + (N−k)·(r+g).
std::uint64_t expected_pairs(int num_layers, int register_layer, std::uint64_t total_len, std::uint64_t registers,
                             std::uint64_t generated);

/// Fraction of vanilla cache pairs removed: (N−k)(L_total−r)/(N·L_total).
double reduction_ratio(int num_layers, int register_layer, std::uint64_t total_len, std::uint64_t registers);

}  // namespace earn
