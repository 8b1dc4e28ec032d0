// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "earn/layout.hpp"

namespace earn {

struct Interaction {
  std::string user;
  std::int64_t item = 0;
  std::int64_t ts = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

using InteractionLog = std::vector<Interaction>;

inline constexpr std::size_t kIdentifierTokens = 4;
using Identifier = std::array<TokenId, kIdentifierTokens>;

/// Token ids 0..n_instruction_tokens-1 are task-instruction tokens; then four
/// blocks of `codebook_size` identifier tokens, one block per identifier slot.
struct IdentifierScheme {
  int n_instruction_tokens = 4;
  int codebook_size = 8;

  void validate() const;

  TokenId first_identifier_token() const noexcept { return n_instruction_tokens; }
  int vocab_size() const noexcept { return n_instruction_tokens + static_cast<int>(kIdentifierTokens) * codebook_size; }
  TokenId token(std::size_t slot, int code) const noexcept {
    return n_instruction_tokens + static_cast<TokenId>(slot) * codebook_size + code;
  }
  std::vector<TokenId> instruction_tokens() const;
};

/// Item id -> 4-token identifier, unique in both directions.
class Catalog {
 public:
  /// Throws ContractViolation on a repeated item or identifier.
  void add(std::int64_t item, const Identifier& ident);

  const Identifier& identifier(std::int64_t item) const;
  bool contains(std::int64_t item) const { return by_item_.contains(item); }
  std::optional<std::int64_t> find(std::span<const TokenId> tokens) const;

  std::size_t size() const noexcept { return by_item_.size(); }
  const std::map<std::int64_t, Identifier>& items() const noexcept { return by_item_; }

  friend bool operator==(const Catalog& a, const Catalog& b) { return a.by_item_ == b.by_item_; }

 private:
  std::map<std::int64_t, Identifier> by_item_;
  std::map<Identifier, std::int64_t> by_ident_;
};

struct SyntheticConfig {
  int n_users = 500;
  int n_items = 200;
  int min_length = 5;
  int max_length = 20;
  int n_clusters = 8;
  double within_cluster = 0.8;  // probability the next item stays in the current cluster
  double zipf_exponent = 1.0;
  IdentifierScheme scheme;

  void validate() const;
};

struct SyntheticData {
  InteractionLog log;
  Catalog catalog;
};

/// Cluster of item i is i mod n_clusters. The first identifier code is the
/// cluster; the other three are the base-C digits of the item's index within it.
int item_cluster(std::int64_t item, int n_clusters) noexcept;
Catalog make_catalog(int n_items, int n_clusters, const IdentifierScheme& scheme);

/// Seeded first-order Markov users over clustered items with Zipf popularity
/// inside each cluster.
SyntheticData generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// JSON lines {"user": string, "item": integer, "ts": integer}.
void write_log_jsonl(std::ostream& out, const InteractionLog& log);
InteractionLog read_log_jsonl(std::istream& in);
/// JSON lines {"item": integer, "ident": [4 integers]}.
void write_catalog_jsonl(std::ostream& out, const Catalog& catalog);
Catalog read_catalog_jsonl(std::istream& in);

/// Reads an interaction log; `format` must be "jsonl".
InteractionLog ingest(const std::filesystem::path& path, const std::string& format = "jsonl");

/// Target interaction plus the same user's earlier interactions.
struct RecExample {
  std::string user;
  std::vector<std::int64_t> history;  // oldest first
  std::int64_t target = 0;
  std::int64_t ts = 0;

  friend bool operator==(const RecExample&, const RecExample&) = default;
};

struct SplitDataset {
  std::vector<RecExample> train;
  std::vector<RecExample> valid;
  std::vector<RecExample> test;
  std::array<std::size_t, 3> interactions{};  // per-split interaction counts
};

/// 8:1:1 split sizes: floors of the quotas, leftovers to the largest
/// fractional parts (ties: train, then valid, then test).
std::array<std::size_t, 3> split_sizes(std::size_t n);

/// Stable global sort by timestamp, then consecutive 8:1:1 regions. Each
/// interaction becomes an example of its region whose history is the user's
/// earlier interactions (any region), truncated to the last `max_history`.
/// Interactions without history yield no example.
SplitDataset chronological_split(const InteractionLog& log, std::size_t max_history = 20);

/// Instruction tokens followed by the identifiers of the history items.
struct PromptFormat {
  std::vector<TokenId> instruction;

  std::vector<TokenId> build(const Catalog& catalog, std::span<const std::int64_t> history) const;
};

/// Per-example metrics; `ranked` is best first and holds distinct items.
double recall_at_k(std::span<const std::int64_t> ranked, std::int64_t truth, std::size_t k);
double ndcg_at_k(std::span<const std::int64_t> ranked, std::int64_t truth, std::size_t k);

struct MetricRow {
  std::string method;
  std::size_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

/// CSV columns method,K,recall,ndcg.
void write_metric_csv(std::ostream& out, const std::vector<MetricRow>& rows);

}  // namespace earn
