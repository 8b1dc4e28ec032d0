// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "earn/attnstats.hpp"
#include "earn/layout.hpp"
#include "earn/numkernel.hpp"

namespace earn {

template <class T>
struct LayerWeights {
  BasicMatrix<T> wq;         // d_h × (n_h·d_a)
  BasicMatrix<T> wk;         // d_h × (n_kv·d_a)
  BasicMatrix<T> wv;         // d_h × (n_kv·d_a)
  BasicMatrix<T> wo;         // (n_h·d_a) × d_h
  BasicMatrix<T> w_up;       // d_h × d_f
  BasicMatrix<T> w_down;     // d_f × d_h
  BasicMatrix<T> attn_norm;  // 1 × d_h
  BasicMatrix<T> ffn_norm;   // 1 × d_h

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

template <class T>
struct Weights {
  BasicMatrix<T> token_embedding;     // V × d_h
  BasicMatrix<T> prefix_registers;    // n_prefix × d_h
  BasicMatrix<T> suffix_registers;    // n_suffix × d_h
  std::vector<LayerWeights<T>> layers;
  BasicMatrix<T> final_norm;          // 1 × d_h
  BasicMatrix<T> output_head;         // d_h × V

  /// Every tensor with a stable dotted name, in a fixed order.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  friend bool operator==(const Weights&, const Weights&) = default;

 private:
  template <class Self, class F>
  static void visit(Self& w, F& f) {
    f(std::string("token_embedding"), w.token_embedding);
    f(std::string("prefix_registers"), w.prefix_registers);
    f(std::string("suffix_registers"), w.suffix_registers);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      auto& l = w.layers[i];
      f(p + "wq", l.wq);
      f(p + "wk", l.wk);
      f(p + "wv", l.wv);
      f(p + "wo", l.wo);
      f(p + "w_up", l.w_up);
      f(p + "w_down", l.w_down);
      f(p + "attn_norm", l.attn_norm);
      f(p + "ffn_norm", l.ffn_norm);
    }
    f(std::string("final_norm"), w.final_norm);
    f(std::string("output_head"), w.output_head);
  }
};

/// Norm gains have a single row; weight decay skips them.
inline bool is_norm_gain(const std::string& name) {
  return name.ends_with("norm");
}

/// Zero-filled weights with the shapes of `config` and `spec`.
template <class T>
Weights<T> zero_weights(const ModelConfig& config, const RegisterSpec& spec);

template <class To, class From>
Weights<To> weights_cast(const Weights<From>& w) {
  Weights<To> out;
  out.token_embedding = matrix_cast<To>(w.token_embedding);
  out.prefix_registers = matrix_cast<To>(w.prefix_registers);
  out.suffix_registers = matrix_cast<To>(w.suffix_registers);
  for (const auto& l : w.layers) {
    out.layers.push_back({matrix_cast<To>(l.wq), matrix_cast<To>(l.wk), matrix_cast<To>(l.wv), matrix_cast<To>(l.wo),
                          matrix_cast<To>(l.w_up), matrix_cast<To>(l.w_down), matrix_cast<To>(l.attn_norm),
                          matrix_cast<To>(l.ffn_norm)});
  }
  out.final_norm = matrix_cast<To>(w.final_norm);
  out.output_head = matrix_cast<To>(w.output_head);
  return out;
}

/// Checks every tensor shape against the configuration.
template <class T>
void check_shapes(const Weights<T>& w, const ModelConfig& config, const RegisterSpec& spec);

/// Seeded initialization. Linear weights and all embeddings (token and
/// register) ~ U(-a, a) with a = sqrt(3 / fan_in); norm gains are 1.
Weights<float> init_weights(const ModelConfig& config, const RegisterSpec& spec, std::uint64_t seed);

/// Whether a query at `query_pos` attends to a key at `key_pos` in layer
/// `layer` (1-based): causal, and past the register layer prompt keys are gone.
bool attention_visibility(int layer, Role query_role, Role key_role, std::int32_t query_pos, std::int32_t key_pos,
                          int register_layer) noexcept;

struct ForwardOptions {
  bool keep_hidden = false;
  bool capture_attention = false;
  bool full_attention = false;  // capture every query row (debug)
  int layer_limit = 0;          // run only the first `layer_limit` layers; 0 runs all
  /// Layout indices whose logits are wanted; default is every retained row.
  std::optional<std::vector<std::size_t>> logit_rows;
};

template <class T>
struct ForwardResult {
  BasicMatrix<T> logits;                   // one row per entry of logit_rows
  std::vector<std::size_t> logit_rows;     // layout indices
  std::vector<std::size_t> retained_rows;  // layout indices alive after the last layer
  std::vector<BasicMatrix<T>> hidden;      // hidden[l]: output of layer l+1
  std::vector<std::vector<std::size_t>> hidden_rows;
  std::vector<std::uint64_t> layer_flops;  // matmul FLOPs per layer
  std::uint64_t head_flops = 0;            // output projection
  AttentionTrace attention;
};

/// Causal pre-norm decoder over every token of the layout.
template <class T>
ForwardResult<T> forward_vanilla(const Weights<T>& weights, const ModelConfig& config, const SequenceLayout& layout,
                                 const ForwardOptions& options = {});

/// Layers 1..k run over every token; Prompt rows are dropped at the output of
/// layer k and the remaining layers run only on register and generated rows,
/// which keep their absolute rotary positions.
template <class T>
ForwardResult<T> forward_earn(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
                              const SequenceLayout& layout, const ForwardOptions& options = {});

}  // namespace earn
