// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

// Building blocks shared by the stateless forward, the inference session and
// the trainer. Not part of the stable surface.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "earn/kvcache.hpp"
#include "earn/model.hpp"

namespace earn::detail {

/// Activations of one decoder layer kept for the backward pass.
template <class T>
struct LayerTape {
  std::vector<std::int32_t> positions;
  BasicMatrix<T> input;
  std::vector<T> attn_inv_rms;
  BasicMatrix<T> attn_in;               // normalized input
  BasicMatrix<T> q;                     // rotated, scaled by 1/sqrt(d_a)
  BasicMatrix<T> k;                     // rotated
  BasicMatrix<T> v;
  std::vector<BasicMatrix<T>> probs;    // per query head: rows × keys
  BasicMatrix<T> attn_out;              // heads concatenated, before W_O
  BasicMatrix<T> mid;                   // residual stream after attention
  std::vector<T> ffn_inv_rms;
  BasicMatrix<T> ffn_in;
  BasicMatrix<T> up;
  BasicMatrix<T> act;
};

struct LayerCapture {
  bool full = false;
  std::vector<std::vector<float>> last_row;  // per query head
  std::vector<Matrix> full_rows;             // per query head
};

template <class T>
BasicMatrix<T> embed_tokens(const Weights<T>& weights, const ModelConfig& config, std::span<const TokenId> tokens);

/// One pre-norm decoder layer over a block of new rows. The block's keys and
/// values are appended to `tail`; queries attend causally (by position) over
/// the `shared` segments followed by `tail`.
template <class T>
BasicMatrix<T> decoder_layer(const LayerWeights<T>& w, const ModelConfig& config, const BasicMatrix<T>& x,
                             std::span<const std::int32_t> positions, std::span<const Role> roles,
                             std::span<const BasicLayerKvCache<T>* const> shared, BasicLayerKvCache<T>& tail,
                             LayerTape<T>* tape, LayerCapture* capture);

template <class T>
struct ForwardTape {
  std::vector<LayerTape<T>> layers;
  std::vector<std::vector<std::size_t>> layer_rows;  // layout indices of each layer's input rows
  std::vector<std::size_t> final_rows;
  BasicMatrix<T> final_hidden;
  std::vector<std::size_t> logit_local;  // position of each logit row within final_rows
  std::vector<T> final_inv_rms;
  BasicMatrix<T> final_normed;
};

/// Shared forward driver. `register_layer` = N disables pruning. When
/// `caches` is non-null it receives one populated cache per executed layer.
template <class T>
ForwardResult<T> run_forward(const Weights<T>& weights, const ModelConfig& config, int register_layer,
                             const SequenceLayout& layout, const ForwardOptions& options, ForwardTape<T>* tape,
                             std::vector<BasicLayerKvCache<T>>* caches = nullptr);

/// Final norm and output head over selected rows of the last hidden state.
template <class T>
BasicMatrix<T> project_logits(const Weights<T>& weights, const ModelConfig& config, const BasicMatrix<T>& hidden,
                              std::vector<T>* inv_rms = nullptr, BasicMatrix<T>* normed = nullptr);

}  // namespace earn::detail
