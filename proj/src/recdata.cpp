// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/recdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "earn/error.hpp"

namespace earn {

namespace {

using ojson = nlohmann::ordered_json;

// Portable draws: std distributions differ across standard libraries.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t int_draw(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<std::int64_t>(rng() % span);
}

std::size_t weighted_draw(std::mt19937_64& rng, const std::vector<double>& cumulative) {
  const double u = unit_draw(rng) * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

template <class F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(number, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(number, "expected a JSON object");
    try {
      f(j, number);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(number, e.what());
    }
  }
}

const ojson& field(const ojson& j, const char* name, std::size_t line) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(line, std::string("missing field '") + name + "'");
  return *it;
}

}  // namespace

void IdentifierScheme::validate() const {
  if (n_instruction_tokens < 0) throw ConfigError("n_instruction_tokens", "must be >= 0");
  if (codebook_size < 2) throw ConfigError("codebook_size", "must be >= 2");
}

std::vector<TokenId> IdentifierScheme::instruction_tokens() const {
  std::vector<TokenId> out(static_cast<std::size_t>(n_instruction_tokens));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

void Catalog::add(std::int64_t item, const Identifier& ident) {
  EARN_EXPECTS(!by_item_.contains(item), "catalog: item " + std::to_string(item) + " listed twice");
  EARN_EXPECTS(!by_ident_.contains(ident), "catalog: identifier of item " + std::to_string(item) + " is not unique");
  by_item_.emplace(item, ident);
  by_ident_.emplace(ident, item);
}

const Identifier& Catalog::identifier(std::int64_t item) const {
  auto it = by_item_.find(item);
  EARN_EXPECTS(it != by_item_.end(), "catalog: unknown item " + std::to_string(item));
  return it->second;
}

std::optional<std::int64_t> Catalog::find(std::span<const TokenId> tokens) const {
  if (tokens.size() != kIdentifierTokens) return std::nullopt;
  Identifier key;
  std::copy(tokens.begin(), tokens.end(), key.begin());
  auto it = by_ident_.find(key);
  if (it == by_ident_.end()) return std::nullopt;
  return it->second;
}

void SyntheticConfig::validate() const {
  scheme.validate();
  if (n_users < 1) throw ConfigError("n_users", "must be >= 1");
  if (n_items < 2) throw ConfigError("n_items", "must be >= 2");
  if (min_length < 1) throw ConfigError("min_length", "must be >= 1");
  if (max_length < min_length) throw ConfigError("max_length", "must be >= min_length");
  if (n_clusters < 1 || n_clusters > n_items) throw ConfigError("n_clusters", "must be in [1, n_items]");
  if (n_clusters > scheme.codebook_size) throw ConfigError("n_clusters", "must not exceed codebook_size");
  const auto c = static_cast<std::int64_t>(scheme.codebook_size);
  const std::int64_t per_cluster = (n_items + n_clusters - 1) / n_clusters;
  if (per_cluster > c * c * c) throw ConfigError("n_items", "too many items per cluster for codebook_size");
  if (!(within_cluster >= 0.0 && within_cluster <= 1.0)) throw ConfigError("within_cluster", "must be in [0, 1]");
  if (n_clusters == 1 && within_cluster < 1.0) throw ConfigError("within_cluster", "must be 1 with a single cluster");
  if (!(zipf_exponent >= 0.0)) throw ConfigError("zipf_exponent", "must be >= 0");
}

int item_cluster(std::int64_t item, int n_clusters) noexcept {
  return static_cast<int>(item % n_clusters);
}

Catalog make_catalog(int n_items, int n_clusters, const IdentifierScheme& scheme) {
  Catalog catalog;
  const int c = scheme.codebook_size;
  for (std::int64_t item = 0; item < n_items; ++item) {
    std::int64_t within = item / n_clusters;
    Identifier ident;
    ident[0] = scheme.token(0, item_cluster(item, n_clusters));
    for (std::size_t slot = kIdentifierTokens; slot-- > 1;) {
      ident[slot] = scheme.token(slot, static_cast<int>(within % c));
      within /= c;
    }
    catalog.add(item, ident);
  }
  return catalog;
}

SyntheticData generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  const int nc = config.n_clusters;
  std::vector<std::vector<std::int64_t>> members(static_cast<std::size_t>(nc));
  for (std::int64_t item = 0; item < config.n_items; ++item) {
    members[static_cast<std::size_t>(item_cluster(item, nc))].push_back(item);
  }
  std::vector<std::vector<double>> popularity(members.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    double acc = 0.0;
    for (std::size_t rank = 0; rank < members[c].size(); ++rank) {
      acc += 1.0 / std::pow(static_cast<double>(rank + 1), config.zipf_exponent);
      popularity[c].push_back(acc);
    }
  }

  std::mt19937_64 rng(seed);
  SyntheticData data;
  data.catalog = make_catalog(config.n_items, nc, config.scheme);
  for (int u = 0; u < config.n_users; ++u) {
    const std::string user = "u" + std::to_string(u);
    const auto length = int_draw(rng, config.min_length, config.max_length);
    const auto start = int_draw(rng, 0, 999'999);
    const auto gap = int_draw(rng, 1, 100'000);
    int cluster = static_cast<int>(int_draw(rng, 0, nc - 1));
    for (std::int64_t step = 0; step < length; ++step) {
      if (step > 0 && unit_draw(rng) >= config.within_cluster) {
        // Uniform over the other clusters.
        const int offset = static_cast<int>(int_draw(rng, 1, nc - 1));
        cluster = (cluster + offset) % nc;
      }
      const auto c = static_cast<std::size_t>(cluster);
      const std::int64_t item = members[c][weighted_draw(rng, popularity[c])];
      data.log.push_back({user, item, start + step * gap});
    }
  }
  return data;
}

void write_log_jsonl(std::ostream& out, const InteractionLog& log) {
  for (const auto& r : log) {
    ojson j;
    j["user"] = r.user;
    j["item"] = r.item;
    j["ts"] = r.ts;
    out << j.dump() << '\n';
  }
}

InteractionLog read_log_jsonl(std::istream& in) {
  InteractionLog log;
  for_each_line(in, [&](const ojson& j, std::size_t line) {
    const auto& user = field(j, "user", line);
    const auto& item = field(j, "item", line);
    const auto& ts = field(j, "ts", line);
    if (!user.is_string()) throw ParseError(line, "'user' must be a string");
    if (!item.is_number_integer()) throw ParseError(line, "'item' must be an integer");
    if (!ts.is_number_integer()) throw ParseError(line, "'ts' must be an integer");
    log.push_back({user.get<std::string>(), item.get<std::int64_t>(), ts.get<std::int64_t>()});
  });
  return log;
}

void write_catalog_jsonl(std::ostream& out, const Catalog& catalog) {
  for (const auto& [item, ident] : catalog.items()) {
    ojson j;
    j["item"] = item;
    j["ident"] = ident;
    out << j.dump() << '\n';
  }
}

Catalog read_catalog_jsonl(std::istream& in) {
  Catalog catalog;
  for_each_line(in, [&](const ojson& j, std::size_t line) {
    const auto& item = field(j, "item", line);
    const auto& ident = field(j, "ident", line);
    if (!item.is_number_integer()) throw ParseError(line, "'item' must be an integer");
    if (!ident.is_array() || ident.size() != kIdentifierTokens) {
      throw ParseError(line, "'ident' must be an array of 4 integers");
    }
    Identifier id;
    for (std::size_t i = 0; i < kIdentifierTokens; ++i) {
      if (!ident[i].is_number_integer()) throw ParseError(line, "'ident' must be an array of 4 integers");
      id[i] = ident[i].get<TokenId>();
    }
    try {
      catalog.add(item.get<std::int64_t>(), id);
    } catch (const ContractViolation& e) {
      throw ParseError(line, e.what());
    }
  });
  return catalog;
}

InteractionLog ingest(const std::filesystem::path& path, const std::string& format) {
  if (format != "jsonl") throw ConfigError("format", "unsupported log format '" + format + "'");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_log_jsonl(in);
}

std::array<std::size_t, 3> split_sizes(std::size_t n) {
  constexpr std::array<std::size_t, 3> parts{8, 1, 1};
  std::array<std::size_t, 3> sizes{};
  std::array<std::size_t, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    sizes[i] = n * parts[i] / 10;
    remainder[i] = n * parts[i] % 10;
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i]];
  return sizes;
}

SplitDataset chronological_split(const InteractionLog& log, std::size_t max_history) {
  EARN_EXPECTS(!log.empty(), "chronological_split: empty log");
  std::vector<std::size_t> order(log.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return log[a].ts < log[b].ts; });

  SplitDataset out;
  out.interactions = split_sizes(log.size());
  std::map<std::string, std::vector<std::int64_t>> seen;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& r = log[order[rank]];
    auto& history = seen[r.user];
    if (!history.empty()) {
      RecExample ex;
      ex.user = r.user;
      const std::size_t from = history.size() > max_history ? history.size() - max_history : 0;
      ex.history.assign(history.begin() + static_cast<std::ptrdiff_t>(from), history.end());
      ex.target = r.item;
      ex.ts = r.ts;
      if (rank < out.interactions[0]) {
        out.train.push_back(std::move(ex));
      } else if (rank < out.interactions[0] + out.interactions[1]) {
        out.valid.push_back(std::move(ex));
      } else {
        out.test.push_back(std::move(ex));
      }
    }
    history.push_back(r.item);
  }
  return out;
}

std::vector<TokenId> PromptFormat::build(const Catalog& catalog, std::span<const std::int64_t> history) const {
  std::vector<TokenId> out = instruction;
  out.reserve(instruction.size() + history.size() * kIdentifierTokens);
  for (std::int64_t item : history) {
    const auto& ident = catalog.identifier(item);
    out.insert(out.end(), ident.begin(), ident.end());
  }
  return out;
}

double recall_at_k(std::span<const std::int64_t> ranked, std::int64_t truth, std::size_t k) {
  EARN_EXPECTS(k >= 1, "recall_at_k: K must be >= 1");
  const std::size_t n = std::min(k, ranked.size());
  return std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), truth) !=
                 ranked.begin() + static_cast<std::ptrdiff_t>(n)
             ? 1.0
             : 0.0;
}

double ndcg_at_k(std::span<const std::int64_t> ranked, std::int64_t truth, std::size_t k) {
  EARN_EXPECTS(k >= 1, "ndcg_at_k: K must be >= 1");
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked[i] == truth) return 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return 0.0;
}

void write_metric_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  const auto old_precision = out.precision(10);
  out << "method,K,recall,ndcg\n";
  for (const auto& r : rows) out << r.method << ',' << r.k << ',' << r.recall << ',' << r.ndcg << '\n';
  out.precision(old_precision);
}

}  // namespace earn
