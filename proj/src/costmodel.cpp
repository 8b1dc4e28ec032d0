// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/costmodel.hpp"

#include <algorithm>

#include "earn/error.hpp"
#include "earn/kvcache.hpp"

namespace earn {

namespace {

using u64 = std::uint64_t;

u64 as_u64(int v) { return static_cast<u64>(v); }

// Attention-module FLOPs for `queries` new rows against `keys` cached rows.
double attn_flops(double queries, double keys, const ModelConfig& c) {
  const double nh = c.num_heads, da = c.head_dim, dh = c.hidden_dim;
  return nh * (8.0 * queries * dh * da + 4.0 * queries * keys * da);
}

CostEstimate estimate(const CostEnv& env, const ModelConfig& c, int k, u64 len, u64 registers, u64 n_generate) {
  const int n = c.num_layers;
  CostEstimate e;
  e.flops_prefill = static_cast<double>(k) * static_cast<double>(flops_layer(len, c)) +
                    static_cast<double>(n - k) * static_cast<double>(flops_layer(registers, c));
  e.flops_attn_per_decode_step = static_cast<double>(k) * attn_flops(1, static_cast<double>(len), c) +
                                 static_cast<double>(n - k) * attn_flops(1, static_cast<double>(registers), c);
  e.flops_ffn_per_decode_step = static_cast<double>(n) * static_cast<double>(flops_ffn(1, c));
  e.flops_per_decode_step = e.flops_attn_per_decode_step + e.flops_ffn_per_decode_step;
  const double pairs = static_cast<double>(expected_pairs(n, k, len, registers, 0));
  e.cache_bytes = pairs * c.num_kv_heads * c.head_dim * 2.0 * env.element_bytes;
  e.t_prefill = e.flops_prefill / env.flops_per_second;
  e.t_decode_per_token = std::max(e.cache_bytes / env.bytes_per_second,
                                  e.flops_attn_per_decode_step / env.flops_per_second) +
                         e.flops_ffn_per_decode_step / env.flops_per_second;
  e.t_total = e.t_prefill + static_cast<double>(n_generate) * e.t_decode_per_token;
  return e;
}

}  // namespace

void CostEnv::validate() const {
  if (!(flops_per_second > 0)) throw ConfigError("v_c", "must be positive");
  if (!(bytes_per_second > 0)) throw ConfigError("v_m", "must be positive");
  if (element_bytes < 1) throw ConfigError("element_bytes", "must be >= 1");
}

u64 flops_mha(u64 len, const ModelConfig& c) {
  const u64 nh = as_u64(c.num_heads), dh = as_u64(c.hidden_dim), da = as_u64(c.head_dim);
  return nh * (8 * len * dh * da + 4 * len * len * da);
}

u64 flops_ffn(u64 len, const ModelConfig& c) {
  return 4 * len * as_u64(c.hidden_dim) * as_u64(c.ffn_dim);
}

u64 flops_layer(u64 len, const ModelConfig& c) {
  const u64 nh = as_u64(c.num_heads), dh = as_u64(c.hidden_dim), da = as_u64(c.head_dim), df = as_u64(c.ffn_dim);
  return 4 * len * (nh * da * (2 * dh + len) + dh * df);
}

double gamma_attn(int num_layers, int register_layer, u64 len, u64 registers, const ModelConfig& config) {
  EARN_EXPECTS(register_layer >= 1 && register_layer <= num_layers, "gamma_attn: need 1 <= k <= N");
  EARN_EXPECTS(registers <= len && len > 0, "gamma_attn: need r <= L, L > 0");
  const double frac = static_cast<double>(register_layer) / num_layers;
  return frac + (1.0 - frac) * static_cast<double>(flops_layer(registers, config)) /
                    static_cast<double>(flops_layer(len, config));
}

double gamma_cache(int num_layers, int register_layer, u64 len, u64 registers) {
  return reduction_ratio(num_layers, register_layer, len, registers);
}

double theoretical_speedup(int num_layers, int register_layer) {
  EARN_EXPECTS(register_layer >= 1 && register_layer <= num_layers, "theoretical_speedup: need 1 <= k <= N");
  return static_cast<double>(num_layers) / static_cast<double>(register_layer);
}

CostComparison time_estimate(const CostEnv& env, const ModelConfig& config, const RegisterSpec& spec, u64 len,
                             u64 n_generate) {
  env.validate();
  const auto r = static_cast<u64>(spec.count());
  EARN_EXPECTS(r <= len && len > 0, "time_estimate: need r <= L, L > 0");
  CostComparison out;
  out.vanilla = estimate(env, config, config.num_layers, len, r, n_generate);
  out.earn = estimate(env, config, spec.register_layer, len, r, n_generate);
  out.gamma_attn = gamma_attn(config.num_layers, spec.register_layer, len, r, config);
  out.gamma_cache = gamma_cache(config.num_layers, spec.register_layer, len, r);
  out.omega = theoretical_speedup(config.num_layers, spec.register_layer);
  out.omega_estimated = out.vanilla.t_total / out.earn.t_total;
  return out;
}

void write_cost_csv(std::ostream& out, const std::vector<CostRow>& rows) {
  const auto old_precision = out.precision(10);
  out << "N,k,L,r,gamma_attn,gamma_cache,omega,t_prefill,t_decode\n";
  for (const auto& row : rows) {
    out << row.num_layers << ',' << row.register_layer << ',' << row.len << ',' << row.registers << ','
        << row.cost.gamma_attn << ',' << row.cost.gamma_cache << ',' << row.cost.omega << ','
        << row.cost.earn.t_prefill << ',' << row.cost.earn.t_decode_per_token << '\n';
  }
  out.precision(old_precision);
}

}  // namespace earn
