// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "earn/engine.hpp"
#include "earn/model.hpp"

namespace earn {

namespace {

constexpr std::size_t kQueryBlock = 32;

// Maps the top 24 bits of a 64-bit draw onto [-bound, bound); identical on
// every platform, unlike std::uniform_real_distribution.
float uniform_from(std::uint64_t bits, float bound) {
  const double unit = static_cast<double>(bits >> 40) * (1.0 / 16777216.0);
  return static_cast<float>((2.0 * unit - 1.0) * bound);
}

void expect_shape(const std::string& name, std::size_t rows, std::size_t cols, std::size_t want_rows,
                  std::size_t want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw ConfigError(name, "shape " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                                std::to_string(want_rows) + "x" + std::to_string(want_cols));
  }
}

}  // namespace

template <class T>
Weights<T> zero_weights(const ModelConfig& c, const RegisterSpec& spec) {
  const auto dh = static_cast<std::size_t>(c.hidden_dim);
  const auto qw = static_cast<std::size_t>(c.q_width());
  const auto kvw = static_cast<std::size_t>(c.kv_width());
  const auto df = static_cast<std::size_t>(c.ffn_dim);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  Weights<T> w;
  w.token_embedding = BasicMatrix<T>(v, dh);
  w.prefix_registers = BasicMatrix<T>(static_cast<std::size_t>(spec.n_prefix), dh);
  w.suffix_registers = BasicMatrix<T>(static_cast<std::size_t>(spec.n_suffix), dh);
  w.layers.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& l : w.layers) {
    l.wq = BasicMatrix<T>(dh, qw);
    l.wk = BasicMatrix<T>(dh, kvw);
    l.wv = BasicMatrix<T>(dh, kvw);
    l.wo = BasicMatrix<T>(qw, dh);
    l.w_up = BasicMatrix<T>(dh, df);
    l.w_down = BasicMatrix<T>(df, dh);
    l.attn_norm = BasicMatrix<T>(1, dh);
    l.ffn_norm = BasicMatrix<T>(1, dh);
  }
  w.final_norm = BasicMatrix<T>(1, dh);
  w.output_head = BasicMatrix<T>(dh, v);
  return w;
}

template <class T>
void check_shapes(const Weights<T>& w, const ModelConfig& config, const RegisterSpec& spec) {
  const Weights<T> ref = zero_weights<T>(config, spec);
  if (w.layers.size() != ref.layers.size()) throw ConfigError("layers", "layer count differs from num_layers");
  std::vector<std::pair<std::size_t, std::size_t>> want;
  ref.for_each([&](const std::string&, const BasicMatrix<T>& m) { want.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  w.for_each([&](const std::string& name, const BasicMatrix<T>& m) {
    expect_shape(name, m.rows(), m.cols(), want[i].first, want[i].second);
    ++i;
  });
}

Weights<float> init_weights(const ModelConfig& config, const RegisterSpec& spec, std::uint64_t seed) {
  config.validate();
  spec.validate(config);
  Weights<float> w = zero_weights<float>(config, spec);
  std::mt19937_64 rng(seed);
  const float embed_bound = std::sqrt(3.0f / static_cast<float>(config.hidden_dim));
  w.for_each([&](const std::string& name, Matrix& m) {
    if (is_norm_gain(name)) {
      m.fill(1.0f);
      return;
    }
    const bool embedding = name == "token_embedding" || name.ends_with("_registers");
    const float bound = embedding ? embed_bound : std::sqrt(3.0f / static_cast<float>(m.rows()));
    for (auto& x : m.data()) x = uniform_from(rng(), bound);
  });
  return w;
}

bool attention_visibility(int layer, Role /*query_role*/, Role key_role, std::int32_t query_pos,
                          std::int32_t key_pos, int register_layer) noexcept {
  if (key_pos > query_pos) return false;
  return layer <= register_layer || key_role != Role::Prompt;
}

namespace detail {

template <class T>
BasicMatrix<T> embed_tokens(const Weights<T>& w, const ModelConfig& config, std::span<const TokenId> tokens) {
  const auto dh = static_cast<std::size_t>(config.hidden_dim);
  const auto vocab = static_cast<TokenId>(config.vocab_size);
  const auto n_prefix = static_cast<TokenId>(w.prefix_registers.rows());
  const auto n_suffix = static_cast<TokenId>(w.suffix_registers.rows());
  BasicMatrix<T> x(tokens.size(), dh);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    std::span<const T> src;
    if (t >= 0 && t < vocab) {
      src = w.token_embedding.row(static_cast<std::size_t>(t));
    } else if (t >= vocab && t < vocab + n_prefix) {
      src = w.prefix_registers.row(static_cast<std::size_t>(t - vocab));
    } else if (t >= vocab + n_prefix && t < vocab + n_prefix + n_suffix) {
      src = w.suffix_registers.row(static_cast<std::size_t>(t - vocab - n_prefix));
    } else {
      throw ContractViolation("embed: token id " + std::to_string(t) + " out of range");
    }
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

template <class T>
BasicMatrix<T> decoder_layer(const LayerWeights<T>& w, const ModelConfig& config, const BasicMatrix<T>& x,
                             std::span<const std::int32_t> positions, std::span<const Role> roles,
                             std::span<const BasicLayerKvCache<T>* const> shared, BasicLayerKvCache<T>& tail,
                             LayerTape<T>* tape, LayerCapture* capture) {
  const std::size_t m = x.rows();
  const auto d_a = static_cast<std::size_t>(config.head_dim);
  const auto n_h = static_cast<std::size_t>(config.num_heads);
  const auto n_kv = static_cast<std::size_t>(config.num_kv_heads);
  const auto group = static_cast<std::size_t>(config.group_size());
  const T eps = static_cast<T>(config.norm_eps);

  std::vector<T> inv_rms1;
  BasicMatrix<T> a = rmsnorm_rows(x, w.attn_norm.row(0), eps, &inv_rms1);
  BasicMatrix<T> q = rope_apply(matmul(a, w.wq), positions, config.rope_base, d_a);
  BasicMatrix<T> k = rope_apply(matmul(a, w.wk), positions, config.rope_base, d_a);
  BasicMatrix<T> v = matmul(a, w.wv);
  const T scale = T(1) / std::sqrt(static_cast<T>(d_a));
  for (auto& e : q.data()) e *= scale;

  for (std::size_t i = 0; i < m; ++i) tail.append(k.row(i), v.row(i), roles[i], positions[i]);

  std::size_t total = tail.size();
  for (const auto* seg : shared) total += seg->size();
  std::vector<std::int32_t> key_pos;
  key_pos.reserve(total);
  for (const auto* seg : shared) key_pos.insert(key_pos.end(), seg->positions().begin(), seg->positions().end());
  key_pos.insert(key_pos.end(), tail.positions().begin(), tail.positions().end());

  // Keys gathered transposed (d_a × keys) per kv-head, values keys × d_a.
  std::vector<BasicMatrix<T>> keys_t(n_kv, BasicMatrix<T>(d_a, total));
  std::vector<BasicMatrix<T>> vals(n_kv, BasicMatrix<T>(total, d_a));
  {
    std::size_t base = 0;
    auto gather = [&](const BasicLayerKvCache<T>& seg) {
      for (std::size_t g = 0; g < n_kv; ++g) {
        for (std::size_t j = 0; j < seg.size(); ++j) {
          auto kr = seg.key(j, static_cast<int>(g));
          auto vr = seg.value(j, static_cast<int>(g));
          for (std::size_t d = 0; d < d_a; ++d) keys_t[g](d, base + j) = kr[d];
          std::copy(vr.begin(), vr.end(), vals[g].row(base + j).begin());
        }
      }
      base += seg.size();
    };
    for (const auto* seg : shared) gather(*seg);
    gather(tail);
  }

  std::vector<std::size_t> visible(m);
  for (std::size_t i = 0; i < m; ++i) {
    visible[i] = static_cast<std::size_t>(std::upper_bound(key_pos.begin(), key_pos.end(), positions[i]) -
                                          key_pos.begin());
  }

  BasicMatrix<T> attn(m, n_h * d_a);
  BasicMatrix<T> qh(m, d_a);
  if (tape != nullptr) tape->probs.clear();
  if (capture != nullptr) {
    capture->last_row.clear();
    capture->full_rows.clear();
  }
  // Inference runs query rows in blocks so the score buffer stays small and
  // is reused; each row's arithmetic is unchanged.
  const bool keep_scores = tape != nullptr || (capture != nullptr && capture->full);
  if (!keep_scores && m > kQueryBlock) {
    BasicMatrix<T> qb(kQueryBlock, d_a);
    BasicMatrix<T> sb(kQueryBlock, total);
    BasicMatrix<T> ob(kQueryBlock, d_a);
    for (std::size_t h = 0; h < n_h; ++h) {
      const std::size_t g = h / group;
      for (std::size_t i0 = 0; i0 < m; i0 += kQueryBlock) {
        const std::size_t rows = std::min(kQueryBlock, m - i0);
        if (rows != qb.rows()) {
          qb = BasicMatrix<T>(rows, d_a);
          sb = BasicMatrix<T>(rows, total);
          ob = BasicMatrix<T>(rows, d_a);
        }
        for (std::size_t i = 0; i < rows; ++i) {
          auto src = q.row(i0 + i).subspan(h * d_a, d_a);
          std::copy(src.begin(), src.end(), qb.row(i).begin());
        }
        sb.fill(T(0));
        matmul_accumulate(qb, keys_t[g], sb);
        for (std::size_t i = 0; i < rows; ++i) softmax_prefix_inplace(sb.row(i), visible[i0 + i]);
        ob.fill(T(0));
        matmul_accumulate(sb, vals[g], ob);
        for (std::size_t i = 0; i < rows; ++i) {
          auto src = ob.row(i);
          std::copy(src.begin(), src.end(), attn.row(i0 + i).begin() + static_cast<std::ptrdiff_t>(h * d_a));
        }
        if (capture != nullptr && i0 + rows == m) {
          auto last = sb.row(rows - 1).first(visible[m - 1]);
          capture->last_row.emplace_back(last.begin(), last.end());
        }
      }
    }
  }
  for (std::size_t h = 0; h < n_h && (keep_scores || m <= kQueryBlock); ++h) {
    const std::size_t g = h / group;
    for (std::size_t i = 0; i < m; ++i) {
      auto src = q.row(i).subspan(h * d_a, d_a);
      std::copy(src.begin(), src.end(), qh.row(i).begin());
    }
    BasicMatrix<T> scores = matmul(qh, keys_t[g]);
    for (std::size_t i = 0; i < m; ++i) softmax_prefix_inplace(scores.row(i), visible[i]);
    BasicMatrix<T> out = matmul(scores, vals[g]);
    for (std::size_t i = 0; i < m; ++i) {
      auto src = out.row(i);
      std::copy(src.begin(), src.end(), attn.row(i).begin() + static_cast<std::ptrdiff_t>(h * d_a));
    }
    if (capture != nullptr && m > 0) {
      auto last = scores.row(m - 1).first(visible[m - 1]);
      capture->last_row.emplace_back(last.begin(), last.end());
      if (capture->full) capture->full_rows.push_back(matrix_cast<float>(scores));
    }
    if (tape != nullptr) tape->probs.push_back(std::move(scores));
  }

  BasicMatrix<T> mid = x;
  matmul_accumulate(attn, w.wo, mid);
  std::vector<T> inv_rms2;
  BasicMatrix<T> b = rmsnorm_rows(mid, w.ffn_norm.row(0), eps, &inv_rms2);
  BasicMatrix<T> up = matmul(b, w.w_up);
  BasicMatrix<T> act(up.rows(), up.cols());
  for (std::size_t i = 0; i < up.size(); ++i) act.data()[i] = silu(up.data()[i]);
  BasicMatrix<T> out = mid;
  matmul_accumulate(act, w.w_down, out);

  if (tape != nullptr) {
    tape->positions.assign(positions.begin(), positions.end());
    tape->input = x;
    tape->attn_inv_rms = std::move(inv_rms1);
    tape->attn_in = std::move(a);
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->attn_out = std::move(attn);
    tape->mid = std::move(mid);
    tape->ffn_inv_rms = std::move(inv_rms2);
    tape->ffn_in = std::move(b);
    tape->up = std::move(up);
    tape->act = std::move(act);
  }
  return out;
}

template <class T>
BasicMatrix<T> project_logits(const Weights<T>& weights, const ModelConfig& config, const BasicMatrix<T>& hidden,
                              std::vector<T>* inv_rms, BasicMatrix<T>* normed) {
  BasicMatrix<T> f = rmsnorm_rows(hidden, weights.final_norm.row(0), static_cast<T>(config.norm_eps), inv_rms);
  BasicMatrix<T> logits = matmul(f, weights.output_head);
  if (normed != nullptr) *normed = std::move(f);
  return logits;
}

template <class T>
ForwardResult<T> run_forward(const Weights<T>& weights, const ModelConfig& config, int register_layer,
                             const SequenceLayout& layout, const ForwardOptions& options, ForwardTape<T>* tape,
                             std::vector<BasicLayerKvCache<T>>* caches) {
  EARN_EXPECTS(layout.tokens.size() == layout.roles.size() && layout.tokens.size() == layout.positions.size(),
               "forward: malformed layout");
  EARN_EXPECTS(!layout.tokens.empty(), "forward: empty layout");
  if (layout.size() > static_cast<std::size_t>(config.max_positions)) {
    throw CapacityError("sequence of " + std::to_string(layout.size()) + " tokens exceeds max_positions " +
                        std::to_string(config.max_positions));
  }
  const int n_layers = options.layer_limit > 0 ? std::min(options.layer_limit, config.num_layers) : config.num_layers;

  ForwardResult<T> result;
  std::vector<std::size_t> rows(layout.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<std::int32_t> positions = layout.positions;
  std::vector<Role> roles = layout.roles;
  BasicMatrix<T> x = embed_tokens(weights, config, layout.tokens);

  if (tape != nullptr) {
    tape->layers.assign(static_cast<std::size_t>(n_layers), {});
    tape->layer_rows.clear();
  }
  if (caches != nullptr) caches->clear();

  for (int layer = 1; layer <= n_layers; ++layer) {
    if (layer == register_layer + 1) {
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (roles[i] != Role::Prompt) keep.push_back(i);
      }
      BasicMatrix<T> kept(keep.size(), x.cols());
      std::vector<std::size_t> kept_rows;
      std::vector<std::int32_t> kept_pos;
      std::vector<Role> kept_roles;
      for (std::size_t j = 0; j < keep.size(); ++j) {
        auto src = x.row(keep[j]);
        std::copy(src.begin(), src.end(), kept.row(j).begin());
        kept_rows.push_back(rows[keep[j]]);
        kept_pos.push_back(positions[keep[j]]);
        kept_roles.push_back(roles[keep[j]]);
      }
      x = std::move(kept);
      rows = std::move(kept_rows);
      positions = std::move(kept_pos);
      roles = std::move(kept_roles);
    }
    EARN_EXPECTS(!rows.empty(), "forward: no rows left after pruning");

    BasicLayerKvCache<T> cache(layer, config.num_kv_heads, config.head_dim, layer > register_layer);
    LayerCapture capture;
    capture.full = options.full_attention;
    LayerTape<T>* layer_tape = tape != nullptr ? &tape->layers[static_cast<std::size_t>(layer - 1)] : nullptr;
    if (tape != nullptr) tape->layer_rows.push_back(rows);

    flops::Scope scope;
    x = decoder_layer<T>(weights.layers[static_cast<std::size_t>(layer - 1)], config, x, positions, roles, {}, cache,
                         layer_tape, options.capture_attention ? &capture : nullptr);
    result.layer_flops.push_back(scope.elapsed());

    if (options.capture_attention) {
      result.attention.last_row.push_back(std::move(capture.last_row));
      if (options.full_attention) result.attention.full.push_back(std::move(capture.full_rows));
    }
    if (options.keep_hidden) {
      result.hidden.push_back(x);
      result.hidden_rows.push_back(rows);
    }
    if (caches != nullptr) caches->push_back(std::move(cache));
  }

  result.retained_rows = rows;
  result.logit_rows = options.logit_rows ? *options.logit_rows : rows;
  std::vector<std::size_t> local;
  local.reserve(result.logit_rows.size());
  for (std::size_t r : result.logit_rows) {
    auto it = std::lower_bound(rows.begin(), rows.end(), r);
    EARN_EXPECTS(it != rows.end() && *it == r, "forward: logits requested for a pruned row");
    local.push_back(static_cast<std::size_t>(it - rows.begin()));
  }
  BasicMatrix<T> selected(local.size(), x.cols());
  for (std::size_t j = 0; j < local.size(); ++j) {
    auto src = x.row(local[j]);
    std::copy(src.begin(), src.end(), selected.row(j).begin());
  }
  flops::Scope head_scope;
  if (tape != nullptr) {
    result.logits = project_logits(weights, config, selected, &tape->final_inv_rms, &tape->final_normed);
    tape->final_rows = rows;
    tape->final_hidden = x;
    tape->logit_local = std::move(local);
  } else {
    result.logits = project_logits(weights, config, selected);
  }
  result.head_flops = head_scope.elapsed();
  return result;
}

}  // namespace detail

template <class T>
ForwardResult<T> forward_vanilla(const Weights<T>& weights, const ModelConfig& config, const SequenceLayout& layout,
                                 const ForwardOptions& options) {
  return detail::run_forward<T>(weights, config, config.num_layers, layout, options, nullptr);
}

template <class T>
ForwardResult<T> forward_earn(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
                              const SequenceLayout& layout, const ForwardOptions& options) {
  spec.validate(config);
  return detail::run_forward<T>(weights, config, spec.register_layer, layout, options, nullptr);
}

#define EARN_INSTANTIATE(T)                                                                                          \
  template Weights<T> zero_weights<T>(const ModelConfig&, const RegisterSpec&);                                      \
  template void check_shapes<T>(const Weights<T>&, const ModelConfig&, const RegisterSpec&);                         \
  template ForwardResult<T> forward_vanilla<T>(const Weights<T>&, const ModelConfig&, const SequenceLayout&,         \
                                               const ForwardOptions&);                                               \
  template ForwardResult<T> forward_earn<T>(const Weights<T>&, const ModelConfig&, const RegisterSpec&,              \
                                            const SequenceLayout&, const ForwardOptions&);                           \
  template BasicMatrix<T> detail::embed_tokens<T>(const Weights<T>&, const ModelConfig&, std::span<const TokenId>);  \
  template BasicMatrix<T> detail::decoder_layer<T>(                                                                  \
      const LayerWeights<T>&, const ModelConfig&, const BasicMatrix<T>&, std::span<const std::int32_t>,              \
      std::span<const Role>, std::span<const BasicLayerKvCache<T>* const>, BasicLayerKvCache<T>&,                    \
      detail::LayerTape<T>*, detail::LayerCapture*);                                                                 \
  template BasicMatrix<T> detail::project_logits<T>(const Weights<T>&, const ModelConfig&, const BasicMatrix<T>&,    \
                                                    std::vector<T>*, BasicMatrix<T>*);                               \
  template ForwardResult<T> detail::run_forward<T>(const Weights<T>&, const ModelConfig&, int, const SequenceLayout&, \
                                                   const ForwardOptions&, detail::ForwardTape<T>*,                   \
                                                   std::vector<BasicLayerKvCache<T>>*);

EARN_INSTANTIATE(float)
EARN_INSTANTIATE(double)

#undef EARN_INSTANTIATE

}  // namespace earn
