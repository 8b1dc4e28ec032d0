// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "earn/engine.hpp"

namespace earn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

Session Session::prefill(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                         SequenceLayout layout, SessionOptions options) {
  config.validate();
  spec.validate(config);
  layout.validate(config, spec);
  EARN_EXPECTS(!layout.tokens.empty(), "prefill: empty layout");

  Session s;
  s.weights_ = &weights;
  s.config_ = config;
  s.spec_ = spec;
  s.options_ = options;
  s.layout_ = std::move(layout);

  const int active = options.active_layers > 0 ? std::min(options.active_layers, config.num_layers) : config.num_layers;
  // The next-token row is the last input row still alive after the final layer.
  std::size_t last = s.layout_.size();
  for (std::size_t i = s.layout_.size(); i-- > 0;) {
    if (active <= spec.register_layer || s.layout_.roles[i] != Role::Prompt) {
      last = i;
      break;
    }
  }
  EARN_EXPECTS(last < s.layout_.size(), "prefill: no row survives pruning");

  ForwardOptions fo;
  fo.layer_limit = active;
  fo.capture_attention = options.capture_attention;
  fo.full_attention = options.full_attention;
  fo.logit_rows = std::vector<std::size_t>{last};

  const auto start = Clock::now();
  flops::Scope scope;
  std::vector<LayerKvCache> caches;
  auto result = detail::run_forward<float>(weights, config, spec.register_layer, s.layout_, fo, nullptr, &caches);
  for (auto& c : caches) {
    if (options.window) c.retain_window(options.window->n_initial, options.window->n_recent);
    const int layer = c.layer();
    s.tail_.emplace_back(layer, config.num_kv_heads, config.head_dim, c.rejects_prompt());
    s.base_.push_back(std::make_shared<const LayerKvCache>(std::move(c)));
  }
  s.logits_.assign(result.logits.row(0).begin(), result.logits.row(0).end());
  s.attention_ = std::move(result.attention);
  s.prefill_flops_ = scope.elapsed();
  s.prefill_seconds_ = seconds_since(start);
  return s;
}

std::span<const float> Session::decode_step(TokenId token) {
  EARN_EXPECTS(weights_ != nullptr, "decode_step: session not prefilled");
  EARN_EXPECTS(token >= 0 && token < config_.vocab_size, "decode_step: token outside vocabulary");
  if (layout_.size() + 1 > static_cast<std::size_t>(config_.max_positions)) {
    throw CapacityError("decode_step: max_positions reached");
  }
  const auto start = Clock::now();
  flops::Scope scope;

  const std::int32_t pos = layout_.next_position();
  layout_.append_generated(token);
  generated_.push_back(token);

  const TokenId tok[1] = {token};
  const std::int32_t positions[1] = {pos};
  const Role roles[1] = {Role::Generated};
  Matrix x = detail::embed_tokens(*weights_, config_, tok);
  for (std::size_t l = 0; l < tail_.size(); ++l) {
    const LayerKvCache* shared[1] = {base_[l].get()};
    x = detail::decoder_layer<float>(weights_->layers[l], config_, x, positions, roles, shared, tail_[l], nullptr,
                                     nullptr);
  }
  Matrix logits = detail::project_logits(*weights_, config_, x);
  logits_.assign(logits.row(0).begin(), logits.row(0).end());

  decode_flops_ += scope.elapsed();
  decode_seconds_ += seconds_since(start);
  return logits_;
}

CacheStats Session::cache_stats() const {
  std::vector<std::uint64_t> per_layer;
  per_layer.reserve(tail_.size());
  for (std::size_t l = 0; l < tail_.size(); ++l) per_layer.push_back(base_[l]->size() + tail_[l].size());
  return CacheStats::from_counts(std::move(per_layer));
}

std::vector<Role> Session::cached_roles(int layer) const {
  EARN_EXPECTS(layer >= 1 && layer <= active_layers(), "cached_roles: layer out of range");
  const auto idx = static_cast<std::size_t>(layer - 1);
  std::vector<Role> roles = base_[idx]->roles();
  roles.insert(roles.end(), tail_[idx].roles().begin(), tail_[idx].roles().end());
  return roles;
}

std::vector<double> log_softmax(std::span<const float> logits) {
  EARN_EXPECTS(!logits.empty(), "log_softmax: empty logits");
  double max_v = -std::numeric_limits<double>::infinity();
  for (float v : logits) max_v = std::max(max_v, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - max_v);
  const double lse = max_v + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

std::vector<TokenId> generate_greedy(Session& session, std::size_t steps) {
  EARN_EXPECTS(steps >= 1, "generate_greedy: steps must be >= 1");
  std::vector<TokenId> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto logp = log_softmax(session.logits());
    // max_element returns the first maximum, i.e. the smallest id on ties.
    const auto best = static_cast<TokenId>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    out.push_back(best);
    session.decode_step(best);
  }
  return out;
}

GenerationResult generate_beam(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                               const SequenceLayout& layout, std::size_t beam_width, std::size_t steps) {
  EARN_EXPECTS(beam_width >= 1, "generate_beam: beam_width must be >= 1");
  EARN_EXPECTS(steps >= 1, "generate_beam: steps must be >= 1");

  struct Live {
    Session session;
    std::vector<TokenId> tokens;
    double score;
  };
  struct Candidate {
    std::size_t parent;
    TokenId token;
    double score;
    std::vector<TokenId> tokens;
  };
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };

  std::vector<Live> live;
  live.push_back({Session::prefill(weights, config, spec, layout), {}, 0.0});
  GenerationResult result;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<std::size_t>(config.vocab_size));
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto logp = log_softmax(live[h].session.logits());
      for (std::size_t t = 0; t < logp.size(); ++t) {
        Candidate c{h, static_cast<TokenId>(t), live[h].score + logp[t], live[h].tokens};
        c.tokens.push_back(static_cast<TokenId>(t));
        cands.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    cands.resize(keep);

    if (step + 1 == steps) {
      for (auto& c : cands) result.ranked.push_back({std::move(c.tokens), c.score});
      break;
    }
    std::vector<Live> next;
    next.reserve(keep);
    for (auto& c : cands) {
      Session s = live[c.parent].session.fork();
      s.decode_step(c.token);
      next.push_back({std::move(s), std::move(c.tokens), c.score});
    }
    live = std::move(next);
  }
  return result;
}

}  // namespace earn
