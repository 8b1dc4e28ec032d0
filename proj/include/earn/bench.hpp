// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "earn/model.hpp"
#include "earn/runtime.hpp"

namespace earn {

enum class BenchMethod { Vanilla, Earn, SkipLayers, WindowCache };

std::string_view to_string(BenchMethod method) noexcept;
BenchMethod parse_bench_method(std::string_view text);

struct BenchConfig {
  std::vector<BenchMethod> methods{BenchMethod::Vanilla, BenchMethod::Earn};
  std::vector<std::size_t> batch_sizes{1};
  std::vector<std::size_t> lengths{1024};  // padded input length L, registers included
  std::size_t decode_steps = 4;
  std::size_t repeats = 5;
  std::size_t warmups = 2;
  int skip_cut = 0;                        // SkipLayers depth; 0 uses N/2
  CacheWindow window;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::uint64_t memory_budget_bytes = 0;   // 0: unlimited
  double unstable_spread = 0.2;            // IQR/median above this flags the row

  void validate() const;
};

struct BenchResult {
  std::string method;
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t decode_steps = 0;
  double omega = 0.0;          // vanilla median / method median
  double tau = 0.0;            // committed tokens per second
  double gamma_pct = 0.0;      // cache pairs removed vs vanilla after prefill, percent
  std::uint64_t sigma_bytes = 0;
  std::uint64_t cache_pairs = 0;
  double median_seconds = 0.0;
  double spread = 0.0;         // IQR / median
  std::string status;          // ok | unstable | oom
};

/// Every (batch, length) configuration is timed end to end (prefill plus
/// decode_steps greedy steps for each of `batch` independent sessions).
/// Vanilla always runs as the reference. Warmups are excluded; the median of
/// `repeats` is reported. Repeats alternate between methods.
std::vector<BenchResult> run_bench(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                                   const BenchConfig& bench);

/// CSV columns method,batch,length,omega,tau_tokens_per_s,gamma_pct,sigma_bytes,status.
void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& rows);

/// Runs only the first `cut` layers, then final norm and output head.
ForwardResult<float> skiplayers_forward(const Weights<float>& weights, const ModelConfig& config,
                                        const SequenceLayout& layout, int cut);

/// Unpruned prefill whose caches then keep only the first `n_initial` and
/// last `n_recent` prompt-time entries; decode appends as usual.
Session window_cache_session(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                             SequenceLayout layout, std::size_t n_initial, std::size_t n_recent);

/// Deterministic prompt of `length - spec.count()` ordinary tokens for a seed.
SequenceLayout padded_layout(const ModelConfig& config, const RegisterSpec& spec, std::size_t length,
                             std::uint64_t seed);

}  // namespace earn
