// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "earn/layout.hpp"

namespace earn {

/// Hardware envelope: compute rate v_c (FLOP/s) and memory bandwidth v_m (B/s).
struct CostEnv {
  double flops_per_second = 989e12;
  double bytes_per_second = 3.35e12;
  int element_bytes = 2;

  void validate() const;
};

struct CostEstimate {
  double flops_prefill = 0;
  double flops_per_decode_step = 0;
  double flops_attn_per_decode_step = 0;
  double flops_ffn_per_decode_step = 0;
  double cache_bytes = 0;
  double t_prefill = 0;            // seconds
  double t_decode_per_token = 0;   // seconds
  double t_total = 0;              // t_prefill + n_generate · t_decode_per_token
};

/// Vanilla and register-pruned estimates for one configuration.
struct CostComparison {
  CostEstimate vanilla;
  CostEstimate earn;
  double gamma_attn = 0;
  double gamma_cache = 0;
  double omega = 0;            // theoretical speedup N/k
  double omega_estimated = 0;  // vanilla.t_total / earn.t_total
};

/// n_h(8L·d_h·d_a + 4L²·d_a)
std::uint64_t flops_mha(std::uint64_t len, const ModelConfig& config);

/// 4L[n_h·d_a(2d_h + L) + d_h·d_f]
std::uint64_t flops_layer(std::uint64_t len, const ModelConfig& config);

/// 4L·d_h·d_f
std::uint64_t flops_ffn(std::uint64_t len, const ModelConfig& config);

/// k/N + (1 − k/N)·FLOPs_layer(r)/FLOPs_layer(L)
double gamma_attn(int num_layers, int register_layer, std::uint64_t len, std::uint64_t registers,
                  const ModelConfig& config);

/// (N−k)(L−r)/(N·L)
double gamma_cache(int num_layers, int register_layer, std::uint64_t len, std::uint64_t registers);

/// N/k
double theoretical_speedup(int num_layers, int register_layer);

/// T = T_P + n_generate·T_d with T_P = FLOPs_prefill/v_c and
/// T_d = max(Cache/v_m, FLOPs_attn/v_c) + FLOPs_FFN/v_c, for L prompt tokens
/// (registers included) and the register layer of `spec`.
CostComparison time_estimate(const CostEnv& env, const ModelConfig& config, const RegisterSpec& spec,
                             std::uint64_t len, std::uint64_t n_generate);

struct CostRow {
  int num_layers;
  int register_layer;
  std::uint64_t len;
  std::uint64_t registers;
  CostComparison cost;
};

/// CSV columns N,k,L,r,gamma_attn,gamma_cache,omega,t_prefill,t_decode
/// (times are the pruned configuration's).
void write_cost_csv(std::ostream& out, const std::vector<CostRow>& rows);

}  // namespace earn
