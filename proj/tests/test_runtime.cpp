// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "earn/runtime.hpp"
#include "helpers.hpp"
#include "reference.hpp"

using namespace earn;
using earn::testing::random_prompt;
using earn::testing::tiny_config;

namespace {

std::vector<float> row_of(const Matrix& m, std::size_t r) {
  return {m.row(r).begin(), m.row(r).end()};
}

// Total log-probability of `ident` by one stateless forward per token.
double chained_score(const Weights<float>& w, const ModelConfig& c, const RegisterSpec& spec,
                     const SequenceLayout& input, const std::vector<TokenId>& ident) {
  SequenceLayout layout = input;
  double score = 0;
  for (std::size_t j = 0; j < ident.size(); ++j) {
    const auto r = forward_earn(w, c, spec, layout);
    const auto logp = log_softmax(r.logits.row(r.logits.rows() - 1));
    score += logp[static_cast<std::size_t>(ident[j])];
    layout.append_generated(ident[j]);
  }
  return score;
}

}  // namespace

TEST_CASE("prefill and decode with k = N equal the vanilla forward bit for bit") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelConfig c = tiny_config(3, 2, trial % 2 ? 1 : 2, 4, 16);
    const RegisterSpec spec{1, 1, 3};
    const auto w = init_weights(c, spec, rng());
    auto layout = SequenceLayout::assemble(spec, random_prompt(rng, 1 + rng() % 15, 16), 16);
    auto s = Session::prefill(w, c, spec, layout);
    CHECK(std::vector<float>(s.logits().begin(), s.logits().end()) ==
          row_of(forward_vanilla(w, c, layout).logits, layout.size() - 1));
    for (int g = 0; g < 4; ++g) {
      const auto tok = static_cast<TokenId>(rng() % 16);
      s.decode_step(tok);
      layout.append_generated(tok);
      CHECK(std::vector<float>(s.logits().begin(), s.logits().end()) ==
            row_of(forward_vanilla(w, c, layout).logits, layout.size() - 1));
    }
    CHECK(s.layout().tokens == layout.tokens);
    CHECK(s.generated().size() == 4);
  }
}

TEST_CASE("decode after pruned prefill matches the masked reference") {
  std::mt19937 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelConfig c = tiny_config(4, 2, 2, 4, 16);
    const RegisterSpec spec{1, 1, 1 + static_cast<int>(rng() % 3)};
    const auto w = init_weights(c, spec, rng());
    auto layout = SequenceLayout::assemble(spec, random_prompt(rng, 2 + rng() % 15, 16), 16);
    auto s = Session::prefill(w, c, spec, layout);
    for (int g = 0; g < 3; ++g) {
      const auto tok = static_cast<TokenId>(rng() % 16);
      s.decode_step(tok);
      layout.append_generated(tok);
    }
    const auto ref = earn::testing::reference_forward(weights_cast<double>(w), c, layout, spec.register_layer);
    CHECK(earn::testing::relative_error(s.logits(), ref.logits.back()) < 1e-5);
  }
}

TEST_CASE("fork: children do not disturb the parent") {
  std::mt19937 rng(23);
  const ModelConfig c = tiny_config(3);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 9);
  auto parent = Session::prefill(w, c, spec, SequenceLayout::assemble(spec, random_prompt(rng, 8, 16), 16));
  const std::vector<float> before(parent.logits().begin(), parent.logits().end());
  auto child = parent.fork();
  child.decode_step(3);
  child.decode_step(4);
  CHECK(std::vector<float>(parent.logits().begin(), parent.logits().end()) == before);
  CHECK(parent.cache_stats().total_pairs + 2 * 3 == child.cache_stats().total_pairs);
  auto sibling = parent.fork();
  sibling.decode_step(3);
  auto again = parent.fork();
  again.decode_step(3);
  CHECK(std::vector<float>(sibling.logits().begin(), sibling.logits().end()) ==
        std::vector<float>(again.logits().begin(), again.logits().end()));
}

TEST_CASE("decode: capacity error at max_positions") {
  ModelConfig c = tiny_config(2);
  c.max_positions = 6;
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 1);
  auto s = Session::prefill(w, c, spec, SequenceLayout::assemble(spec, std::vector<TokenId>{1, 2, 3}, 16));
  s.decode_step(1);
  CHECK_THROWS_AS(s.decode_step(2), CapacityError);
}

TEST_CASE("greedy equals beam width 1 and is deterministic") {
  std::mt19937 rng(24);
  const ModelConfig c = tiny_config(3);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto layout = SequenceLayout::assemble(spec, random_prompt(rng, 6 + trial, 16), 16);
    auto s = Session::prefill(w, c, spec, layout);
    const auto greedy = generate_greedy(s, kIdentifierLength);
    CHECK(greedy.size() == 4);
    CHECK(s.generated() == greedy);
    const auto beam = generate_beam(w, c, spec, layout, 1);
    REQUIRE(beam.ranked.size() == 1);
    CHECK(beam.ranked[0].tokens == greedy);
    auto s2 = Session::prefill(w, c, spec, layout);
    CHECK(generate_greedy(s2, kIdentifierLength) == greedy);
  }
}

TEST_CASE("exhaustive beam equals brute-force enumeration") {
  std::mt19937 rng(25);
  for (int k : {1, 2, 3}) {
    const ModelConfig c = tiny_config(3, 2, 2, 4, 4);
    const RegisterSpec spec{1, 1, k};
    const auto w = init_weights(c, spec, 100 + k);
    const auto layout = SequenceLayout::assemble(spec, random_prompt(rng, 7, 4), 4);
    const std::size_t steps = 3;
    const auto beam = generate_beam(w, c, spec, layout, 64, steps);
    REQUIRE(beam.ranked.size() == 64);

    std::vector<Hypothesis> all;
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        for (int d = 0; d < 4; ++d) {
          std::vector<TokenId> ident{a, b, d};
          all.push_back({ident, chained_score(w, c, spec, layout, ident)});
        }
      }
    }
    std::sort(all.begin(), all.end(), [](const Hypothesis& x, const Hypothesis& y) {
      return x.score != y.score ? x.score > y.score : x.tokens < y.tokens;
    });
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(beam.ranked[i].tokens == all[i].tokens);
      CHECK(beam.ranked[i].score == doctest::Approx(all[i].score).epsilon(1e-6));
    }
  }
}

TEST_CASE("beam: ordering, distinctness, determinism, width monotonicity") {
  std::mt19937 rng(26);
  const ModelConfig c = tiny_config(3);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 8);
  const auto layout = SequenceLayout::assemble(spec, random_prompt(rng, 10, 16), 16);
  const auto r = generate_beam(w, c, spec, layout, kDefaultBeamWidth);
  REQUIRE(r.ranked.size() == kDefaultBeamWidth);
  std::set<std::vector<TokenId>> seen;
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    CHECK(r.ranked[i].tokens.size() == kIdentifierLength);
    CHECK(seen.insert(r.ranked[i].tokens).second);
    if (i > 0) CHECK(r.ranked[i].score <= r.ranked[i - 1].score);
  }
  CHECK(generate_beam(w, c, spec, layout, kDefaultBeamWidth) == r);

  double prev = -1e300;
  for (std::size_t width : {1u, 2u, 4u, 8u, 16u, 32u}) {
    const double top = generate_beam(w, c, spec, layout, width).ranked[0].score;
    CHECK(top >= prev);
    prev = top;
  }
}

TEST_CASE("pruned prefill does fewer FLOPs than vanilla") {
  std::mt19937 rng(27);
  const ModelConfig c = tiny_config(4);
  const RegisterSpec spec{1, 1, 1};
  const auto w = init_weights(c, spec, 6);
  const auto layout = SequenceLayout::assemble(spec, random_prompt(rng, 20, 16), 16);
  const auto earn_s = Session::prefill(w, c, spec, layout);
  const auto van_s = Session::prefill(w, c, spec.unpruned(c), layout);
  CHECK(earn_s.prefill_flops() < van_s.prefill_flops());
}
