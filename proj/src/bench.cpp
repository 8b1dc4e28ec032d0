// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include "earn/engine.hpp"
#include "earn/error.hpp"
#include "earn/kvcache.hpp"

namespace earn {

namespace {

using Clock = std::chrono::steady_clock;

struct MethodSetup {
  RegisterSpec spec;
  SessionOptions options;
};

MethodSetup setup_for(BenchMethod method, const ModelConfig& config, const RegisterSpec& spec,
                      const BenchConfig& bench) {
  MethodSetup s{spec.unpruned(config), {}};
  switch (method) {
    case BenchMethod::Vanilla:
      break;
    case BenchMethod::Earn:
      s.spec = spec;
      break;
    case BenchMethod::SkipLayers:
      s.options.active_layers = bench.skip_cut > 0 ? bench.skip_cut : std::max(1, config.num_layers / 2);
      break;
    case BenchMethod::WindowCache:
      s.options.window = bench.window;
      break;
  }
  return s;
}

// Per-session pairs after prefill, predicted without running the model.
std::uint64_t predicted_pairs(BenchMethod method, const MethodSetup& s, const ModelConfig& config, std::size_t len) {
  const auto r = static_cast<std::uint64_t>(s.spec.count());
  switch (method) {
    case BenchMethod::SkipLayers:
      return static_cast<std::uint64_t>(s.options.active_layers) * len;
    case BenchMethod::WindowCache:
      return static_cast<std::uint64_t>(config.num_layers) *
             std::min<std::uint64_t>(len, s.options.window->n_initial + s.options.window->n_recent);
    default:
      return expected_pairs(config.num_layers, s.spec.register_layer, len, r, 0);
  }
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

struct BatchRun {
  double seconds = 0.0;
  CacheStats prefill_stats;
};

// One timed pass over every session of the batch.
BatchRun run_batch(const Weights<float>& weights, const ModelConfig& config, const MethodSetup& setup,
                   const std::vector<SequenceLayout>& layouts, std::size_t steps, std::size_t workers) {
  std::vector<CacheStats> stats(layouts.size());
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < layouts.size(); i += workers) {
        Session s = Session::prefill(weights, config, setup.spec, layouts[i], setup.options);
        stats[i] = s.cache_stats();
        generate_greedy(s, steps);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  const auto start = Clock::now();
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  BatchRun out;
  out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& s : stats) {
    if (out.prefill_stats.pairs_per_layer.empty()) {
      out.prefill_stats = s;
    } else {
      out.prefill_stats += s;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(BenchMethod method) noexcept {
  switch (method) {
    case BenchMethod::Vanilla: return "vanilla";
    case BenchMethod::Earn: return "earn";
    case BenchMethod::SkipLayers: return "skiplayers";
    case BenchMethod::WindowCache: return "window";
  }
  return "?";
}

BenchMethod parse_bench_method(std::string_view text) {
  if (text == "vanilla") return BenchMethod::Vanilla;
  if (text == "earn") return BenchMethod::Earn;
  if (text == "skiplayers") return BenchMethod::SkipLayers;
  if (text == "window") return BenchMethod::WindowCache;
  throw ConfigError("methods", "unknown bench method '" + std::string(text) + "'");
}

void BenchConfig::validate() const {
  if (methods.empty()) throw ConfigError("methods", "at least one method required");
  if (batch_sizes.empty()) throw ConfigError("batch_sizes", "at least one batch size required");
  if (lengths.empty()) throw ConfigError("lengths", "at least one length required");
  for (auto b : batch_sizes) {
    if (b < 1) throw ConfigError("batch_sizes", "batch sizes must be >= 1");
  }
  if (decode_steps < 1) throw ConfigError("decode_steps", "must be >= 1");
  if (repeats < 1) throw ConfigError("repeats", "must be >= 1");
  if (skip_cut < 0) throw ConfigError("skip_cut", "must be >= 0");
  if (window.n_initial + window.n_recent < 1) throw ConfigError("window", "n_initial + n_recent must be >= 1");
  if (workers < 1) throw ConfigError("workers", "must be >= 1");
  if (!(unstable_spread > 0)) throw ConfigError("unstable_spread", "must be positive");
}

SequenceLayout padded_layout(const ModelConfig& config, const RegisterSpec& spec, std::size_t length,
                             std::uint64_t seed) {
  const auto r = static_cast<std::size_t>(spec.count());
  EARN_EXPECTS(length >= r, "padded_layout: length shorter than the register count");
  std::mt19937_64 rng(seed);
  std::vector<TokenId> prompt(length - r);
  for (auto& t : prompt) t = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(config.vocab_size));
  return SequenceLayout::assemble(spec, prompt, config.vocab_size);
}

ForwardResult<float> skiplayers_forward(const Weights<float>& weights, const ModelConfig& config,
                                        const SequenceLayout& layout, int cut) {
  EARN_EXPECTS(cut >= 1 && cut <= config.num_layers, "skiplayers: need 1 <= cut <= N");
  ForwardOptions fo;
  fo.layer_limit = cut;
  return detail::run_forward<float>(weights, config, config.num_layers, layout, fo, nullptr);
}

Session window_cache_session(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                             SequenceLayout layout, std::size_t n_initial, std::size_t n_recent) {
  EARN_EXPECTS(n_initial + n_recent >= 1, "window cache: n_initial + n_recent must be >= 1");
  SessionOptions options;
  options.window = CacheWindow{n_initial, n_recent};
  return Session::prefill(weights, config, spec.unpruned(config), std::move(layout), options);
}

std::vector<BenchResult> run_bench(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                                   const BenchConfig& bench) {
  config.validate();
  spec.validate(config);
  bench.validate();

  std::vector<BenchMethod> methods{BenchMethod::Vanilla};
  for (auto m : bench.methods) {
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }

  std::vector<BenchResult> rows;
  for (std::size_t batch : bench.batch_sizes) {
    for (std::size_t len : bench.lengths) {
      std::vector<SequenceLayout> layouts;
      for (std::size_t i = 0; i < batch; ++i) layouts.push_back(padded_layout(config, spec, len, bench.seed + i));
      const std::size_t workers = std::min(bench.workers, batch);

      // Repeats are interleaved across methods so slow drift in machine speed
      // hits every method alike.
      struct Slot {
        BenchMethod method;
        MethodSetup setup;
        BenchResult row;
        std::vector<double> times;
        CacheStats stats;
        bool done = false;  // oom
      };
      std::vector<Slot> slots;
      for (auto method : methods) {
        Slot slot{method, setup_for(method, config, spec, bench), {}, {}, {}, false};
        slot.row.method = std::string(to_string(method));
        slot.row.batch = batch;
        slot.row.length = len;
        slot.row.decode_steps = bench.decode_steps;
        const std::uint64_t predicted =
            predicted_pairs(method, slot.setup, config, len) * batch *
            static_cast<std::uint64_t>(config.num_kv_heads * config.head_dim) * 2 * sizeof(float);
        if (bench.memory_budget_bytes > 0 && predicted > bench.memory_budget_bytes) {
          slot.row.status = "oom";
          slot.done = true;
        }
        slots.push_back(std::move(slot));
      }
      auto run_slot = [&](Slot& slot, bool record) {
        if (slot.done) return;
        try {
          BatchRun run = run_batch(weights, config, slot.setup, layouts, bench.decode_steps, workers);
          if (!record) return;
          if (slot.times.empty()) slot.stats = std::move(run.prefill_stats);
          slot.times.push_back(run.seconds);
        } catch (const std::bad_alloc&) {
          slot.row.status = "oom";
          slot.done = true;
        }
      };
      for (std::size_t w = 0; w < bench.warmups; ++w) {
        for (auto& slot : slots) run_slot(slot, false);
      }
      for (std::size_t rep = 0; rep < bench.repeats; ++rep) {
        for (auto& slot : slots) run_slot(slot, true);
      }

      std::optional<double> vanilla_median;
      std::optional<std::uint64_t> vanilla_pairs;
      for (auto& slot : slots) {
        BenchResult& row = slot.row;
        if (!slot.done) {
          row.median_seconds = quantile(slot.times, 0.5);
          row.spread = (quantile(slot.times, 0.75) - quantile(slot.times, 0.25)) / row.median_seconds;
          row.cache_pairs = slot.stats.total_pairs;
          row.sigma_bytes = bytes(slot.stats, config.num_kv_heads, config.head_dim, sizeof(float));
          row.tau = static_cast<double>(batch * bench.decode_steps) / row.median_seconds;
          row.status = row.spread > bench.unstable_spread ? "unstable" : "ok";
          if (slot.method == BenchMethod::Vanilla) {
            vanilla_median = row.median_seconds;
            vanilla_pairs = row.cache_pairs;
          }
          if (vanilla_median && vanilla_pairs && *vanilla_pairs > 0) {
            row.omega = *vanilla_median / row.median_seconds;
            row.gamma_pct =
                100.0 * (1.0 - static_cast<double>(row.cache_pairs) / static_cast<double>(*vanilla_pairs));
          }
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& rows) {
  const auto old_precision = out.precision(10);
  out << "method,batch,length,omega,tau_tokens_per_s,gamma_pct,sigma_bytes,status\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.batch << ',' << r.length << ',';
    if (r.status == "oom") {
      out << "NA,NA,NA,NA,oom\n";
      continue;
    }
    out << r.omega << ',' << r.tau << ',' << r.gamma_pct << ',' << r.sigma_bytes << ',' << r.status << '\n';
  }
  out.precision(old_precision);
}

}  // namespace earn
