// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/kvcache.hpp"

#include <string>

namespace earn {

template <class T>
void BasicLayerKvCache<T>::append(std::span<const T> key, std::span<const T> value, Role role,
                                  std::int32_t position) {
  if (rejects_prompt_ && role == Role::Prompt) {
    throw ContractViolation("kv cache: prompt entry offered to pruned layer " + std::to_string(layer_));
  }
  const std::size_t width = static_cast<std::size_t>(num_kv_heads_) * head_dim_;
  EARN_EXPECTS(key.size() == width && value.size() == width, "kv cache: entry width mismatch");
  EARN_EXPECTS(positions_.empty() || position > positions_.back(), "kv cache: positions must increase");
  keys_.append_row(key);
  values_.append_row(value);
  roles_.push_back(role);
  positions_.push_back(position);
}

template <class T>
void BasicLayerKvCache<T>::retain_window(std::size_t n_initial, std::size_t n_recent) {
  const std::size_t n = size();
  if (n_initial + n_recent >= n) return;
  const std::size_t width = keys_.cols();
  BasicMatrix<T> keys(0, width);
  BasicMatrix<T> values(0, width);
  std::vector<Role> roles;
  std::vector<std::int32_t> positions;
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= n_initial && i < n - n_recent) continue;
    keys.append_row(keys_.row(i));
    values.append_row(values_.row(i));
    roles.push_back(roles_[i]);
    positions.push_back(positions_[i]);
  }
  keys_ = std::move(keys);
  values_ = std::move(values);
  roles_ = std::move(roles);
  positions_ = std::move(positions);
}

template class BasicLayerKvCache<float>;
template class BasicLayerKvCache<double>;

CacheStats CacheStats::from_counts(std::vector<std::uint64_t> per_layer) {
  CacheStats s;
  s.pairs_per_layer = std::move(per_layer);
  for (auto c : s.pairs_per_layer) s.total_pairs += c;
  return s;
}

CacheStats& CacheStats::operator+=(const CacheStats& other) {
  if (pairs_per_layer.size() < other.pairs_per_layer.size()) pairs_per_layer.resize(other.pairs_per_layer.size(), 0);
  for (std::size_t i = 0; i < other.pairs_per_layer.size(); ++i) pairs_per_layer[i] += other.pairs_per_layer[i];
  total_pairs += other.total_pairs;
  return *this;
}

std::uint64_t bytes(const CacheStats& stats, int num_kv_heads, int head_dim, int element_bytes) {
  return stats.total_pairs * static_cast<std::uint64_t>(num_kv_heads) * static_cast<std::uint64_t>(head_dim) * 2u *
         static_cast<std::uint64_t>(element_bytes);
}

std::uint64_t expected_pairs(int num_layers, int register_layer, std::uint64_t total_len, std::uint64_t registers,
                             std::uint64_t generated) {
  EARN_EXPECTS(register_layer >= 0 && register_layer <= num_layers, "expected_pairs: k must lie in [0, N]");
  EARN_EXPECTS(registers <= total_len, "expected_pairs: r exceeds L_total");
  const auto k = static_cast<std::uint64_t>(register_layer);
  const auto pruned = static_cast<std::uint64_t>(num_layers - register_layer);
  return k * (total_len + generated) + pruned * (registers + generated);
}

double reduction_ratio(int num_layers, int register_layer, std::uint64_t total_len, std::uint64_t registers) {
  EARN_EXPECTS(register_layer >= 0 && register_layer <= num_layers, "reduction_ratio: k must lie in [0, N]");
  EARN_EXPECTS(registers <= total_len && total_len > 0, "reduction_ratio: need 0 <= r <= L_total, L_total > 0");
  return static_cast<double>(num_layers - register_layer) * static_cast<double>(total_len - registers) /
         (static_cast<double>(num_layers) * static_cast<double>(total_len));
}

}  // namespace earn
