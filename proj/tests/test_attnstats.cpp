// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <sstream>

#include "doctest.h"
#include "earn/attnstats.hpp"
#include "earn/runtime.hpp"
#include "helpers.hpp"

using namespace earn;

namespace {

std::vector<float> uniform(std::size_t n) { return std::vector<float>(n, 1.0f / static_cast<float>(n)); }

}  // namespace

TEST_CASE("sparsity and sinks: trivial distributions") {
  CHECK(sparsity(uniform(100)) == 0.0);
  CHECK(sparsity(uniform(10)) == 1.0);
  CHECK(sink_head(uniform(10)) == doctest::Approx(0.3));
  CHECK(sink_tail(uniform(10)) == doctest::Approx(0.3));

  std::vector<float> onehot(8, 0.0f);
  onehot[0] = 1.0f;
  CHECK(sparsity(onehot) == doctest::Approx(1.0 / 8));
  CHECK(sink_head(onehot) == 1.0);
  CHECK(sink_tail(onehot) == 0.0);

  std::vector<float> last(6, 0.0f);
  last[5] = 1.0f;
  CHECK(sink_tail(last) == 1.0);
  CHECK(sparsity(last, 0.99) == doctest::Approx(1.0 / 6));
  CHECK(sparsity(last, 1.0) == 0.0);  // strictly above
}

TEST_CASE("sparsity and sinks: errors") {
  CHECK_THROWS_AS(sink_head(uniform(5)), ContractViolation);
  CHECK_THROWS_AS(sink_tail(uniform(5)), ContractViolation);
  CHECK_THROWS_AS(sparsity(std::vector<float>{0.5f, 0.1f}), ContractViolation);
  CHECK_THROWS_AS(sparsity(std::vector<float>{}), ContractViolation);
  CHECK_THROWS_AS(sparsity(std::vector<float>{1.5f, -0.5f}), ContractViolation);
}

TEST_CASE("sparsity and sinks stay in [0, 1] (property)") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 6 + rng() % 60;
    std::vector<float> p(n);
    double sum = 0;
    for (auto& x : p) sum += x = static_cast<float>(rng() % 1000) + 1.0f;
    for (auto& x : p) x = static_cast<float>(x / sum);
    const double s = sparsity(p);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    CHECK(sink_head(p) + sink_tail(p) <= 1.0 + 1e-6);
    CHECK(sparsity(p, 0.0) == 1.0);
  }
}

TEST_CASE("summarize: split at the cutoff, NA for short rows") {
  AttentionTrace t;
  t.last_row = {{uniform(10), uniform(10)}, {uniform(100), uniform(4)}};
  const auto s = summarize(t, 1);
  REQUIRE(s.rows.size() == 4);
  CHECK(s.rows[2].layer == 2);
  CHECK(s.rows[3].head == 1);
  CHECK_FALSE(s.rows[3].sink_head.has_value());
  CHECK(*s.early.sparsity == 1.0);
  CHECK(*s.latter.sparsity == doctest::Approx(0.5));
  CHECK(*s.latter.sink_head == doctest::Approx(0.03));
  CHECK(*s.overall.sparsity == doctest::Approx(0.75));

  const auto all_early = summarize(t, 2);
  CHECK_FALSE(all_early.latter.sparsity.has_value());

  std::ostringstream out;
  write_csv(out, all_early);
  const std::string csv = out.str();
  CHECK(csv.starts_with("layer,head,sparsity,sink_head,sink_tail\n1,0,1,0.3"));
  CHECK(csv.find("2,1,1,NA,NA\n") != std::string::npos);
  CHECK(csv.find("latter,mean,NA,NA,NA\n") != std::string::npos);
}

TEST_CASE("traces captured from a prefill are distributions over visible keys") {
  std::mt19937 rng(42);
  const ModelConfig c = earn::testing::tiny_config(4);
  const RegisterSpec spec{1, 1, 2};
  const auto w = init_weights(c, spec, 3);
  const auto layout = SequenceLayout::assemble(spec, earn::testing::random_prompt(rng, 12, 16), 16);
  SessionOptions opt;
  opt.capture_attention = true;
  const auto s = Session::prefill(w, c, spec, layout, opt);
  const auto& t = s.prefill_attention();
  REQUIRE(t.num_layers() == 4);
  for (std::size_t l = 0; l < 4; ++l) {
    const std::size_t keys = l < 2 ? layout.size() : 2;  // registers only after layer k
    for (const auto& p : t.last_row[l]) {
      CHECK(p.size() == keys);
      double sum = 0;
      for (float x : p) sum += x;
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
  }
  const auto stats = summarize(t, 2);
  CHECK(stats.rows.size() == 8);
  CHECK(stats.early.sink_head.has_value());
  CHECK_FALSE(stats.latter.sink_head.has_value());
}

TEST_CASE("summarize over several traces averages each head") {
  AttentionTrace a, b;
  std::vector<float> onehot(10, 0.0f);
  onehot[0] = 1.0f;
  a.last_row = {{uniform(10)}, {uniform(100)}};
  b.last_row = {{onehot}, {uniform(100)}};
  const std::vector<AttentionTrace> both{a, b};
  const auto s = summarize(std::span<const AttentionTrace>(both), 1);
  REQUIRE(s.rows.size() == 2);
  CHECK(s.rows[0].sparsity == doctest::Approx(0.55));
  CHECK(*s.rows[0].sink_head == doctest::Approx(0.65));
  CHECK(*s.rows[0].sink_tail == doctest::Approx(0.15));
  CHECK(*s.early.sparsity == doctest::Approx(0.55));
  CHECK(*s.latter.sparsity == 0.0);

  AttentionTrace deeper;
  deeper.last_row = {{uniform(10)}, {uniform(10)}, {uniform(10)}};
  const std::vector<AttentionTrace> mixed{a, deeper};
  CHECK_THROWS_AS(summarize(std::span<const AttentionTrace>(mixed), 1), ContractViolation);
}
