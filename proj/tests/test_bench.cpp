// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include "doctest.h"
#include "earn/bench.hpp"
#include "earn/error.hpp"
#include "helpers.hpp"

using namespace earn;
using earn::testing::tiny_config;

TEST_CASE("bench method names") {
  for (auto m : {BenchMethod::Vanilla, BenchMethod::Earn, BenchMethod::SkipLayers, BenchMethod::WindowCache}) {
    CHECK(parse_bench_method(to_string(m)) == m);
  }
  try {
    parse_bench_method("turbo");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "methods");
  }
}

TEST_CASE("padded_layout is deterministic and exact length") {
  const ModelConfig c = tiny_config();
  const RegisterSpec spec{1, 1, 1};
  const auto a = padded_layout(c, spec, 40, 3);
  CHECK(a.size() == 40);
  CHECK(a.count(Role::Prompt) == 38);
  CHECK(a.tokens == padded_layout(c, spec, 40, 3).tokens);
  CHECK_FALSE(a.tokens == padded_layout(c, spec, 40, 4).tokens);
  CHECK_THROWS_AS(padded_layout(c, spec, 1, 0), ContractViolation);
}

TEST_CASE("skiplayers_forward: full depth equals vanilla, shallow cut differs") {
  const ModelConfig c = tiny_config(4);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 2);
  const auto layout = padded_layout(c, spec, 12, 1);
  CHECK(skiplayers_forward(w, c, layout, 4).logits == forward_vanilla(w, c, layout).logits);
  const auto cut = skiplayers_forward(w, c, layout, 2);
  CHECK(cut.layer_flops.size() == 2);
  CHECK_FALSE(cut.logits == forward_vanilla(w, c, layout).logits);
  CHECK_THROWS_AS(skiplayers_forward(w, c, layout, 5), ContractViolation);
}

TEST_CASE("window_cache_session keeps the window plus generated entries") {
  const ModelConfig c = tiny_config(3);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 2);
  auto s = window_cache_session(w, c, spec, padded_layout(c, spec, 30, 1), 2, 5);
  for (auto p : s.cache_stats().pairs_per_layer) CHECK(p == 7);
  s.decode_step(1);
  s.decode_step(2);
  for (auto p : s.cache_stats().pairs_per_layer) CHECK(p == 9);
  auto wide = window_cache_session(w, c, spec, padded_layout(c, spec, 6, 1), 4, 4);
  for (auto p : wide.cache_stats().pairs_per_layer) CHECK(p == 6);
}

TEST_CASE("run_bench: rows, cache accounting, oom and CSV") {
  const ModelConfig c = tiny_config(4);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 2);
  BenchConfig b;
  b.methods = {BenchMethod::Earn, BenchMethod::SkipLayers, BenchMethod::WindowCache};
  b.batch_sizes = {1, 2};
  b.lengths = {32};
  b.repeats = 3;
  b.warmups = 0;
  b.window = {2, 6};
  b.workers = 2;
  const auto rows = run_bench(w, c, spec, b);
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].method == "vanilla");
  CHECK(rows[0].omega == 1.0);
  CHECK(rows[0].gamma_pct == 0.0);
  CHECK(rows[0].cache_pairs == 4 * 32);
  CHECK(rows[1].method == "earn");
  CHECK(rows[1].cache_pairs == expected_pairs(4, 1, 32, 2, 0));
  CHECK(rows[1].gamma_pct == doctest::Approx(100.0 * reduction_ratio(4, 1, 32, 2)));
  CHECK(rows[1].sigma_bytes == rows[1].cache_pairs * 2 * 4 * 2 * 4);
  CHECK(rows[2].cache_pairs == 2 * 32);
  CHECK(rows[3].cache_pairs == 4 * 8);
  CHECK(rows[5].cache_pairs == 2 * expected_pairs(4, 1, 32, 2, 0));  // batch 2
  for (const auto& r : rows) {
    CHECK(r.median_seconds > 0);
    CHECK(r.tau > 0);
    CHECK((r.status == "ok" || r.status == "unstable"));
  }

  b.memory_budget_bytes = 4 * 32 * 64 - 1;  // vanilla needs exactly 4·32 pairs of 64 bytes
  b.batch_sizes = {1};
  const auto tight = run_bench(w, c, spec, b);
  CHECK(tight[0].status == "oom");
  CHECK(tight[1].status != "oom");
  std::ostringstream out;
  write_bench_csv(out, tight);
  const std::string csv = out.str();
  CHECK(csv.starts_with("method,batch,length,omega,tau_tokens_per_s,gamma_pct,sigma_bytes,status\n"
                        "vanilla,1,32,NA,NA,NA,NA,oom\n"));

  b.repeats = 0;
  CHECK_THROWS_AS(run_bench(w, c, spec, b), ConfigError);
}
