// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "earn/attnstats.hpp"
#include "earn/kvcache.hpp"
#include "earn/model.hpp"

namespace earn {

/// Keep the first `n_initial` and the last `n_recent` prompt entries of every
/// layer after prefill; generated tokens are always kept.
struct CacheWindow {
  std::size_t n_initial = 4;
  std::size_t n_recent = 64;
};

struct SessionOptions {
  int active_layers = 0;              // run only the first n layers (SkipLayers); 0 runs all
  std::optional<CacheWindow> window;  // window-cache baseline
  bool capture_attention = false;     // last prefill query row per layer and head
  bool full_attention = false;
};

/// One inference request: prefill once, then decode token by token against
/// the per-layer caches. Layers <= k cache every token; later layers cache
/// registers and generated tokens only.
///
/// The caller keeps `weights` alive for the session's lifetime. Forks share
/// the prefill cache read-only and own their decode entries.
class Session {
 public:
  static Session prefill(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                         SequenceLayout layout, SessionOptions options = {});

  /// Next-token logits (vocab_size wide).
  std::span<const float> logits() const noexcept { return logits_; }

  /// Appends `token` as a Generated entry at the next position and returns
  /// the following next-token logits.
  std::span<const float> decode_step(TokenId token);

  Session fork() const { return *this; }

  CacheStats cache_stats() const;
  /// Roles of the cached entries of layer `layer` (1-based), in cache order.
  std::vector<Role> cached_roles(int layer) const;

  const SequenceLayout& layout() const noexcept { return layout_; }
  const std::vector<TokenId>& generated() const noexcept { return generated_; }
  const ModelConfig& config() const noexcept { return config_; }
  const RegisterSpec& spec() const noexcept { return spec_; }
  int active_layers() const noexcept { return static_cast<int>(tail_.size()); }

  std::uint64_t prefill_flops() const noexcept { return prefill_flops_; }
  std::uint64_t decode_flops() const noexcept { return decode_flops_; }
  double prefill_seconds() const noexcept { return prefill_seconds_; }
  double decode_seconds() const noexcept { return decode_seconds_; }
  const AttentionTrace& prefill_attention() const noexcept { return attention_; }

 private:
  Session() = default;

  const Weights<float>* weights_ = nullptr;
  ModelConfig config_;
  RegisterSpec spec_;
  SessionOptions options_;
  SequenceLayout layout_;
  std::vector<std::shared_ptr<const LayerKvCache>> base_;
  std::vector<LayerKvCache> tail_;
  std::vector<float> logits_;
  std::vector<TokenId> generated_;
  std::uint64_t prefill_flops_ = 0;
  std::uint64_t decode_flops_ = 0;
  double prefill_seconds_ = 0.0;
  double decode_seconds_ = 0.0;
  AttentionTrace attention_;
};

/// log-softmax in double precision.
std::vector<double> log_softmax(std::span<const float> logits);

/// Repeated argmax (ties: smallest token id); every chosen token is fed back
/// through decode_step, so the session ends with `steps` generated entries.
std::vector<TokenId> generate_greedy(Session& session, std::size_t steps);

struct Hypothesis {
  std::vector<TokenId> tokens;
  double score = 0.0;  // total log-probability

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

/// Ranked by score (descending), ties by lexicographic token order.
struct GenerationResult {
  std::vector<Hypothesis> ranked;

  friend bool operator==(const GenerationResult&, const GenerationResult&) = default;
};

inline constexpr std::size_t kIdentifierLength = 4;
inline constexpr std::size_t kDefaultBeamWidth = 20;

/// Fixed-length beam search over token log-probabilities.
GenerationResult generate_beam(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                               const SequenceLayout& layout, std::size_t beam_width,
                               std::size_t steps = kIdentifierLength);

}  // namespace earn
