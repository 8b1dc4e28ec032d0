// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "earn/numkernel.hpp"

namespace earn {

/// Captured attention. `last_row[l][h]` is the distribution of the final
/// query row of layer l+1, head h, over the keys it can see. `full[l][h]`
/// holds every query row and is filled only in full-capture mode.
struct AttentionTrace {
  std::vector<std::vector<std::vector<float>>> last_row;
  std::vector<std::vector<Matrix>> full;

  bool empty() const noexcept { return last_row.empty(); }
  std::size_t num_layers() const noexcept { return last_row.size(); }
};

inline constexpr double kDefaultSparsityThreshold = 0.05;
inline constexpr std::size_t kSinkWindow = 3;

/// Fraction of entries strictly above `epsilon`.
double sparsity(std::span<const float> p, double epsilon = kDefaultSparsityThreshold);

/// Mass on the first three positions. Needs n >= 6.
double sink_head(std::span<const float> p);

/// Mass on the last three positions. Needs n >= 6.
double sink_tail(std::span<const float> p);

struct HeadStats {
  std::size_t layer = 0;  // 1-based
  std::size_t head = 0;
  double sparsity = 0.0;
  // Empty when the distribution is shorter than two sink windows.
  std::optional<double> sink_head;
  std::optional<double> sink_tail;
};

struct StatsAggregate {
  std::optional<double> sparsity;
  std::optional<double> sink_head;
  std::optional<double> sink_tail;
};

struct AttentionStats {
  std::vector<HeadStats> rows;  // layers × heads, layer-major
  std::size_t early_layer_cutoff = 0;
  StatsAggregate early;   // layers <= cutoff (Sp_early)
  StatsAggregate latter;  // layers > cutoff (Sp_latter); empty when no such layer
  StatsAggregate overall;
};

AttentionStats summarize(const AttentionTrace& trace, std::size_t early_layer_cutoff,
                         double epsilon = kDefaultSparsityThreshold);

/// Several traces of the same model: each (layer, head) row is the mean over
/// traces; the aggregates pool every (trace, head) value.
AttentionStats summarize(std::span<const AttentionTrace> traces, std::size_t early_layer_cutoff,
                         double epsilon = kDefaultSparsityThreshold);

/// CSV with columns layer,head,sparsity,sink_head,sink_tail followed by
/// footer rows `early`, `latter`, `all` (head column `mean`). Missing values print as NA.
void write_csv(std::ostream& out, const AttentionStats& stats);

}  // namespace earn
