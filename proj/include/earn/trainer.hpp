// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "earn/model.hpp"
#include "earn/recdata.hpp"

namespace earn {

/// vanilla: finetune with pruning disabled (k = N), evaluate unpruned.
/// earn: register training under the pruned mask, evaluate pruned.
/// earn-no-rt: no updates; evaluate the given weights with pruning.
enum class TrainMode { Vanilla, Earn, EarnNoRT };

std::string_view to_string(TrainMode mode) noexcept;
TrainMode parse_train_mode(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-3;
  double warmup_ratio = 0.02;
  std::size_t effective_batch = 128;  // examples per optimizer step (gradient accumulation)
  int epochs = 3;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t valid_limit = 0;        // 0 evaluates every validation example
  std::size_t beam_width = 20;

  void validate() const;
};

/// Input X = [prefix; prompt; suffix] and the identifier Y to predict.
struct TrainExample {
  SequenceLayout input;
  std::vector<TokenId> target;
  std::vector<std::uint8_t> target_mask;  // empty: every target token is scored
  std::int64_t item = -1;                 // catalog item behind `target`, if known

  static TrainExample make(const RegisterSpec& spec, std::span<const TokenId> prompt, std::vector<TokenId> target,
                           int vocab_size);
};

/// Builds model examples from recommendation examples.
std::vector<TrainExample> build_examples(std::span<const RecExample> examples, const Catalog& catalog,
                                         const PromptFormat& format, const RegisterSpec& spec, int vocab_size);

/// −Σ_j log P(Y_j | X, Y_<j) under the pruned forward of `spec`.
template <class T>
T loss_nll(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
           const TrainExample& example);

/// Adds d(loss)/d(weights) into `grads` and returns the loss.
template <class T>
T accumulate_gradients(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
                       const TrainExample& example, Weights<T>& grads);

template <class T>
struct LossAndGradients {
  T loss;
  Weights<T> grads;
};

template <class T>
LossAndGradients<T> backward(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
                             const TrainExample& example);

struct AdamState {
  Weights<float> m;
  Weights<float> v;
  std::int64_t step = 0;

  static AdamState for_weights(const ModelConfig& config, const RegisterSpec& spec);
};

/// AdamW with bias correction and decoupled weight decay (norm gains exempt).
void adamw_step(Weights<float>& weights, const Weights<float>& grads, AdamState& state, double lr,
                const TrainConfig& config);

/// Linear warmup over warmup_ratio·total_steps, then cosine decay to 0.
double cosine_lr(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak_lr);

struct RankingReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::size_t examples = 0;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// Beam search per example; hypotheses are mapped to catalog items in rank
/// order, unmatched and repeated items skipped.
RankingReport evaluate_ranking(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                               std::span<const TrainExample> examples, const Catalog& catalog, std::size_t beam_width,
                               std::vector<std::size_t> ks);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double valid_recall10 = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainResult {
  Weights<float> weights;
  std::vector<EpochLog> log;
};

/// Register layer used for training and for evaluation in `mode`.
RegisterSpec effective_spec(TrainMode mode, const ModelConfig& config, const RegisterSpec& spec);

TrainResult train(Weights<float> weights, const ModelConfig& config, const RegisterSpec& spec,
                  std::span<const TrainExample> train_set, std::span<const TrainExample> valid_set,
                  const Catalog& catalog, const TrainConfig& train_config, TrainMode mode);

}  // namespace earn
