// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "earn/error.hpp"
#include "earn/runtime.hpp"

namespace earn {

namespace {

std::vector<Matrix*> tensors(Weights<float>& w) {
  std::vector<Matrix*> out;
  w.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> tensors(const Weights<float>& w) {
  std::vector<const Matrix*> out;
  w.for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

void fill_zero(Weights<float>& w) {
  w.for_each([](const std::string&, Matrix& m) { m.fill(0.0f); });
}

void scale(Weights<float>& w, float s) {
  w.for_each([&](const std::string&, Matrix& m) {
    for (auto& e : m.data()) e *= s;
  });
}

// Fisher-Yates on raw 64-bit draws; std::shuffle is not portable bit-for-bit.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::span<const TrainExample> limited(std::span<const TrainExample> set, std::size_t limit) {
  return limit == 0 || limit >= set.size() ? set : set.first(limit);
}

}  // namespace

std::string_view to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::Vanilla: return "vanilla";
    case TrainMode::Earn: return "earn";
    case TrainMode::EarnNoRT: return "earn-no-rt";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "vanilla") return TrainMode::Vanilla;
  if (text == "earn") return TrainMode::Earn;
  if (text == "earn-no-rt") return TrainMode::EarnNoRT;
  throw ConfigError("mode", "expected vanilla, earn or earn-no-rt, got '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate", "must be positive");
  if (!(warmup_ratio >= 0 && warmup_ratio < 1)) throw ConfigError("warmup_ratio", "must be in [0, 1)");
  if (effective_batch < 1) throw ConfigError("effective_batch", "must be >= 1");
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1", "must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2", "must be in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps", "must be positive");
  if (beam_width < 1) throw ConfigError("beam_width", "must be >= 1");
}

TrainExample TrainExample::make(const RegisterSpec& spec, std::span<const TokenId> prompt, std::vector<TokenId> target,
                                int vocab_size) {
  TrainExample ex;
  ex.input = SequenceLayout::assemble(spec, prompt, vocab_size);
  ex.target = std::move(target);
  return ex;
}

std::vector<TrainExample> build_examples(std::span<const RecExample> examples, const Catalog& catalog,
                                         const PromptFormat& format, const RegisterSpec& spec, int vocab_size) {
  std::vector<TrainExample> out;
  out.reserve(examples.size());
  for (const auto& r : examples) {
    const auto& ident = catalog.identifier(r.target);
    TrainExample ex = TrainExample::make(spec, format.build(catalog, r.history),
                                         std::vector<TokenId>(ident.begin(), ident.end()), vocab_size);
    ex.item = r.target;
    out.push_back(std::move(ex));
  }
  return out;
}

AdamState AdamState::for_weights(const ModelConfig& config, const RegisterSpec& spec) {
  return {zero_weights<float>(config, spec), zero_weights<float>(config, spec), 0};
}

void adamw_step(Weights<float>& weights, const Weights<float>& grads, AdamState& state, double lr,
                const TrainConfig& config) {
  auto w = tensors(weights);
  auto g = tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  EARN_EXPECTS(w.size() == g.size() && w.size() == m.size() && w.size() == v.size(), "adamw: state shape mismatch");
  std::vector<std::string> names;
  weights.for_each([&](const std::string& name, const Matrix&) { names.push_back(name); });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const auto b1 = static_cast<float>(config.beta1);
  const auto b2 = static_cast<float>(config.beta2);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EARN_EXPECTS(w[i]->size() == g[i]->size() && w[i]->size() == m[i]->size() && w[i]->size() == v[i]->size(),
                 "adamw: state shape mismatch for " + names[i]);
    const double decay = is_norm_gain(names[i]) ? 0.0 : lr * config.weight_decay;
    auto wd = w[i]->data();
    auto gd = g[i]->data();
    auto md = m[i]->data();
    auto vd = v[i]->data();
    for (std::size_t j = 0; j < wd.size(); ++j) {
      md[j] = b1 * md[j] + (1.0f - b1) * gd[j];
      vd[j] = b2 * vd[j] + (1.0f - b2) * gd[j] * gd[j];
      const double mhat = md[j] / c1;
      const double vhat = vd[j] / c2;
      double x = wd[j];
      x -= decay * x;
      x -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
      wd[j] = static_cast<float>(x);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak_lr) {
  EARN_EXPECTS(step <= total_steps, "cosine_lr: step beyond total_steps");
  const double warmup = warmup_ratio * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warmup) return peak_lr * s / warmup;
  const double span = static_cast<double>(total_steps) - warmup;
  if (span <= 0) return 0.0;
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (s - warmup) / span));
}

double RankingReport::recall_at(std::size_t k) const {
  auto it = std::find(ks.begin(), ks.end(), k);
  EARN_EXPECTS(it != ks.end(), "ranking report: K not evaluated");
  return recall[static_cast<std::size_t>(it - ks.begin())];
}

double RankingReport::ndcg_at(std::size_t k) const {
  auto it = std::find(ks.begin(), ks.end(), k);
  EARN_EXPECTS(it != ks.end(), "ranking report: K not evaluated");
  return ndcg[static_cast<std::size_t>(it - ks.begin())];
}

RankingReport evaluate_ranking(const Weights<float>& weights, const ModelConfig& config, const RegisterSpec& spec,
                               std::span<const TrainExample> examples, const Catalog& catalog, std::size_t beam_width,
                               std::vector<std::size_t> ks) {
  EARN_EXPECTS(!ks.empty(), "evaluate_ranking: no K given");
  RankingReport report;
  report.ks = std::move(ks);
  report.recall.assign(report.ks.size(), 0.0);
  report.ndcg.assign(report.ks.size(), 0.0);
  report.examples = examples.size();
  if (examples.empty()) return report;

  for (const auto& ex : examples) {
    EARN_EXPECTS(ex.item >= 0, "evaluate_ranking: example without ground-truth item");
    const auto beams = generate_beam(weights, config, spec, ex.input, beam_width, kIdentifierLength);
    std::vector<std::int64_t> ranked;
    for (const auto& h : beams.ranked) {
      const auto item = catalog.find(h.tokens);
      if (item && std::find(ranked.begin(), ranked.end(), *item) == ranked.end()) ranked.push_back(*item);
    }
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      report.recall[i] += recall_at_k(ranked, ex.item, report.ks[i]);
      report.ndcg[i] += ndcg_at_k(ranked, ex.item, report.ks[i]);
    }
  }
  const double n = static_cast<double>(examples.size());
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    report.recall[i] /= n;
    report.ndcg[i] /= n;
  }
  return report;
}

RegisterSpec effective_spec(TrainMode mode, const ModelConfig& config, const RegisterSpec& spec) {
  return mode == TrainMode::Vanilla ? spec.unpruned(config) : spec;
}

TrainResult train(Weights<float> weights, const ModelConfig& config, const RegisterSpec& spec,
                  std::span<const TrainExample> train_set, std::span<const TrainExample> valid_set,
                  const Catalog& catalog, const TrainConfig& tc, TrainMode mode) {
  config.validate();
  spec.validate(config);
  tc.validate();
  check_shapes(weights, config, spec);
  const RegisterSpec run_spec = effective_spec(mode, config, spec);
  const auto valid = limited(valid_set, tc.valid_limit);

  auto valid_recall = [&](const Weights<float>& w) {
    return evaluate_ranking(w, config, run_spec, valid, catalog, tc.beam_width, {10}).recall_at(10);
  };

  TrainResult result{std::move(weights), {}};
  if (mode == TrainMode::EarnNoRT) {
    double loss = 0.0;
    for (const auto& ex : valid) loss += loss_nll<float>(result.weights, config, run_spec, ex);
    if (!valid.empty()) loss /= static_cast<double>(valid.size());
    result.log.push_back({0, loss, valid_recall(result.weights)});
    return result;
  }
  EARN_EXPECTS(!train_set.empty(), "train: empty training set");

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + tc.effective_batch - 1) / tc.effective_batch;
  const std::size_t total_steps = batches * static_cast<std::size_t>(tc.epochs);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(tc.seed);
  AdamState state = AdamState::for_weights(config, spec);
  Weights<float> grads = zero_weights<float>(config, spec);
  std::size_t step = 0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * tc.effective_batch;
      const std::size_t hi = std::min(n, lo + tc.effective_batch);
      fill_zero(grads);
      for (std::size_t i = lo; i < hi; ++i) {
        epoch_loss += accumulate_gradients<float>(result.weights, config, run_spec, train_set[order[i]], grads);
      }
      scale(grads, 1.0f / static_cast<float>(hi - lo));
      adamw_step(result.weights, grads, state, cosine_lr(step, total_steps, tc.warmup_ratio, tc.learning_rate), tc);
      ++step;
    }
    result.log.push_back({epoch, epoch_loss / static_cast<double>(n), valid_recall(result.weights)});
  }
  return result;
}

}  // namespace earn
