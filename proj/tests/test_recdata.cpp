// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "earn/error.hpp"
#include "earn/recdata.hpp"

using namespace earn;

TEST_CASE("recall and ndcg hand-computed cases") {
  const std::vector<std::int64_t> ranked{5, 9, 3, 7};
  CHECK(recall_at_k(ranked, 3, 3) == 1.0);
  CHECK(recall_at_k(ranked, 3, 2) == 0.0);
  CHECK(ndcg_at_k(ranked, 3, 10) == doctest::Approx(0.5));
  CHECK(ndcg_at_k(ranked, 5, 1) == 1.0);
  CHECK(ndcg_at_k(ranked, 9, 10) == doctest::Approx(1.0 / std::log2(3.0)));
  CHECK(recall_at_k(ranked, 42, 10) == 0.0);
  CHECK(ndcg_at_k(ranked, 42, 10) == 0.0);
  CHECK(recall_at_k({}, 1, 5) == 0.0);
  CHECK_THROWS_AS(recall_at_k(ranked, 3, 0), ContractViolation);
}

TEST_CASE("metric CSV") {
  std::ostringstream out;
  write_metric_csv(out, {{"earn", 10, 0.5, 0.25}});
  CHECK(out.str() == "method,K,recall,ndcg\nearn,10,0.5,0.25\n");
}

TEST_CASE("identifier scheme and catalog") {
  const IdentifierScheme s;
  CHECK(s.vocab_size() == 36);
  CHECK(s.token(0, 0) == 4);
  CHECK(s.token(3, 7) == 35);
  CHECK(s.instruction_tokens() == std::vector<TokenId>{0, 1, 2, 3});

  const Catalog cat = make_catalog(200, 8, s);
  CHECK(cat.size() == 200);
  std::set<Identifier> idents;
  for (const auto& [item, ident] : cat.items()) {
    CHECK(idents.insert(ident).second);
    CHECK(ident[0] == s.token(0, item_cluster(item, 8)));
    for (std::size_t slot = 0; slot < 4; ++slot) {
      CHECK(ident[slot] >= s.token(slot, 0));
      CHECK(ident[slot] <= s.token(slot, 7));
    }
    CHECK(cat.find(ident) == item);
  }
  CHECK_FALSE(cat.find(std::vector<TokenId>{4, 12, 20}).has_value());
  CHECK_FALSE(cat.find(std::vector<TokenId>{4, 4, 4, 4}).has_value());

  Catalog dup;
  dup.add(1, {4, 12, 20, 28});
  CHECK_THROWS_AS(dup.add(1, {5, 12, 20, 28}), ContractViolation);
  CHECK_THROWS_AS(dup.add(2, {4, 12, 20, 28}), ContractViolation);
  CHECK_THROWS_AS(dup.identifier(3), ContractViolation);
}

TEST_CASE("synthetic config validation names the field") {
  SyntheticConfig c;
  c.n_clusters = 9;  // exceeds codebook size 8
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "n_clusters");
  }
  c = SyntheticConfig{};
  c.max_length = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SyntheticConfig{};
  c.within_cluster = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("generate_synthetic: deterministic, well-formed, clustered") {
  const SyntheticConfig c;
  const auto a = generate_synthetic(c, 11);
  const auto b = generate_synthetic(c, 11);
  CHECK(a.log == b.log);
  CHECK(a.catalog == b.catalog);
  CHECK_FALSE(generate_synthetic(c, 12).log == a.log);

  std::map<std::string, std::vector<Interaction>> by_user;
  for (const auto& r : a.log) {
    CHECK(r.item >= 0);
    CHECK(r.item < c.n_items);
    by_user[r.user].push_back(r);
  }
  CHECK(by_user.size() == 500);
  std::size_t same = 0, moves = 0;
  for (const auto& [user, rows] : by_user) {
    CHECK(rows.size() >= 5);
    CHECK(rows.size() <= 20);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(rows[i].ts > rows[i - 1].ts);
      same += item_cluster(rows[i].item, 8) == item_cluster(rows[i - 1].item, 8);
      ++moves;
    }
  }
  const double p = static_cast<double>(same) / static_cast<double>(moves);
  CHECK(p == doctest::Approx(0.8).epsilon(0.05));
}

TEST_CASE("JSONL round trips and parse errors") {
  SyntheticConfig c;
  c.n_users = 20;
  const auto data = generate_synthetic(c, 5);
  std::stringstream log_io, cat_io;
  write_log_jsonl(log_io, data.log);
  write_catalog_jsonl(cat_io, data.catalog);
  CHECK(log_io.str().starts_with("{\"user\":\"u0\",\"item\":"));
  CHECK(read_log_jsonl(log_io) == data.log);
  CHECK(read_catalog_jsonl(cat_io) == data.catalog);

  std::istringstream bad("{\"user\":\"a\",\"item\":1,\"ts\":2}\n{\"user\":\"a\",\"item\":\"x\",\"ts\":3}\n");
  try {
    read_log_jsonl(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream broken("{\"user\":\"a\",\"item\":1,\"ts\":2}\n\n{nope\n");
  try {
    read_log_jsonl(broken);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream missing("{\"user\":\"a\",\"item\":1}\n");
  CHECK_THROWS_AS(read_log_jsonl(missing), ParseError);
  std::istringstream short_ident("{\"item\":1,\"ident\":[4,12,20]}\n");
  CHECK_THROWS_AS(read_catalog_jsonl(short_ident), ParseError);
  CHECK_THROWS_AS(ingest("/nonexistent/log.jsonl"), std::runtime_error);
  CHECK_THROWS_AS(ingest("/nonexistent/log.jsonl", "csv"), ConfigError);
}

TEST_CASE("split_sizes examples and property") {
  CHECK(split_sizes(10) == std::array<std::size_t, 3>{8, 1, 1});
  CHECK(split_sizes(9) == std::array<std::size_t, 3>{7, 1, 1});
  CHECK(split_sizes(100) == std::array<std::size_t, 3>{80, 10, 10});
  CHECK(split_sizes(1) == std::array<std::size_t, 3>{1, 0, 0});
  for (std::size_t n = 0; n < 500; ++n) {
    const auto s = split_sizes(n);
    CHECK(s[0] + s[1] + s[2] == n);
    for (std::size_t i = 0; i < 3; ++i) {
      const double quota = n * (i == 0 ? 0.8 : 0.1);
      CHECK(std::abs(static_cast<double>(s[i]) - quota) < 1.0);
    }
  }
}

TEST_CASE("chronological_split: hand example") {
  const InteractionLog log{{"a", 1, 10}, {"b", 2, 5},  {"a", 3, 20}, {"b", 4, 30}, {"a", 5, 40},
                           {"c", 6, 1},  {"c", 7, 50}, {"a", 8, 60}, {"b", 9, 70}, {"a", 10, 80}};
  // Time order: c6 b2 a1 a3 b4 a5 c7 a8 | b9 | a10
  const auto s = chronological_split(log, 2);
  CHECK(s.interactions == std::array<std::size_t, 3>{8, 1, 1});
  REQUIRE(s.train.size() == 5);
  CHECK(s.train[0] == RecExample{"a", {1}, 3, 20});
  CHECK(s.train[1] == RecExample{"b", {2}, 4, 30});
  CHECK(s.train[2] == RecExample{"a", {1, 3}, 5, 40});
  CHECK(s.train[3] == RecExample{"c", {6}, 7, 50});
  CHECK(s.train[4] == RecExample{"a", {3, 5}, 8, 60});
  REQUIRE(s.valid.size() == 1);
  CHECK(s.valid[0] == RecExample{"b", {2, 4}, 9, 70});
  REQUIRE(s.test.size() == 1);
  CHECK(s.test[0] == RecExample{"a", {5, 8}, 10, 80});
  CHECK_THROWS_AS(chronological_split({}), ContractViolation);
}

TEST_CASE("chronological_split: regions are time-ordered, histories causal (property)") {
  const auto data = generate_synthetic(SyntheticConfig{}, 9);
  const auto s = chronological_split(data.log, 20);
  std::int64_t prev_max = std::numeric_limits<std::int64_t>::min();
  for (const auto* region : {&s.train, &s.valid, &s.test}) {
    REQUIRE_FALSE(region->empty());
    std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = prev_max;
    for (const auto& ex : *region) {
      lo = std::min(lo, ex.ts);
      hi = std::max(hi, ex.ts);
      CHECK_FALSE(ex.history.empty());
      CHECK(ex.history.size() <= 20);
    }
    CHECK(lo >= prev_max);
    prev_max = hi;
  }
  CHECK(s.train.size() + s.valid.size() + s.test.size() == data.log.size() - 500);
}

TEST_CASE("prompt format") {
  Catalog cat;
  cat.add(1, {4, 12, 20, 28});
  cat.add(2, {5, 13, 21, 29});
  const PromptFormat fmt{{0, 1}};
  const std::vector<std::int64_t> hist{2, 1};
  CHECK(fmt.build(cat, hist) == std::vector<TokenId>{0, 1, 5, 13, 21, 29, 4, 12, 20, 28});
  CHECK(fmt.build(cat, {}) == std::vector<TokenId>{0, 1});
}
