// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse pass through the pruned forward. Prompt rows that are dropped after
// the register layer never enter the tape, so they receive no gradient from
// the later layers.

#include <algorithm>
#include <cmath>

#include "earn/engine.hpp"
#include "earn/error.hpp"
#include "earn/trainer.hpp"

namespace earn {

namespace {

template <class T>
using Mat = BasicMatrix<T>;

// a^T b accumulated into out.
template <class T>
void add_at_b(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
  matmul_accumulate(transpose(a), b, out);
}

// a b^T
template <class T>
Mat<T> a_bt(const Mat<T>& a, const Mat<T>& b) {
  return matmul(a, transpose(b));
}

// y = gain ⊙ x · r with r = 1/sqrt(mean(x²) + eps).
template <class T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, T r, std::span<const T> dy, std::span<T> dx,
                      std::span<T> dgain) {
  const std::size_t d = x.size();
  T s = 0;
  for (std::size_t j = 0; j < d; ++j) s += dy[j] * gain[j] * x[j];
  const T c = r * r * r * s / static_cast<T>(d);
  for (std::size_t j = 0; j < d; ++j) {
    dx[j] += r * gain[j] * dy[j] - c * x[j];
    dgain[j] += dy[j] * x[j] * r;
  }
}

template <class T>
void rmsnorm_rows_backward(const Mat<T>& x, const Mat<T>& gain, const std::vector<T>& inv_rms, const Mat<T>& dy,
                           Mat<T>& dx, Mat<T>& dgain) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    rmsnorm_backward<T>(x.row(i), gain.row(0), inv_rms[i], dy.row(i), dx.row(i), dgain.row(0));
  }
}

template <class T>
T silu_grad(T u) {
  const T s = T(1) / (T(1) + std::exp(-u));
  return s * (T(1) + u * (T(1) - s));
}

template <class T>
Mat<T> columns(const Mat<T>& m, std::size_t first, std::size_t width) {
  Mat<T> out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i).subspan(first, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <class T>
void add_columns(const Mat<T>& src, Mat<T>& dst, std::size_t first) {
  for (std::size_t i = 0; i < src.rows(); ++i) {
    auto s = src.row(i);
    auto d = dst.row(i).subspan(first, src.cols());
    for (std::size_t j = 0; j < s.size(); ++j) d[j] += s[j];
  }
}

// Gradient w.r.t. the layer input; parameter gradients are added to `g`.
template <class T>
Mat<T> layer_backward(const LayerWeights<T>& w, const ModelConfig& config, const detail::LayerTape<T>& t,
                      const Mat<T>& dout, LayerWeights<T>& g) {
  const std::size_t m = t.input.rows();
  const auto d_a = static_cast<std::size_t>(config.head_dim);
  const auto n_h = static_cast<std::size_t>(config.num_heads);
  const auto group = static_cast<std::size_t>(config.group_size());

  // FFN: out = mid + silu(b W_up) W_down
  add_at_b(t.act, dout, g.w_down);
  Mat<T> dup = a_bt(dout, w.w_down);
  for (std::size_t i = 0; i < dup.size(); ++i) dup.data()[i] *= silu_grad(t.up.data()[i]);
  add_at_b(t.ffn_in, dup, g.w_up);
  Mat<T> db = a_bt(dup, w.w_up);
  Mat<T> dmid = dout;
  rmsnorm_rows_backward(t.mid, w.ffn_norm, t.ffn_inv_rms, db, dmid, g.ffn_norm);

  // Attention: mid = x + attn W_O
  add_at_b(t.attn_out, dmid, g.wo);
  Mat<T> dattn = a_bt(dmid, w.wo);
  Mat<T> dq(m, t.q.cols());
  Mat<T> dk(m, t.k.cols());
  Mat<T> dv(m, t.v.cols());
  for (std::size_t h = 0; h < n_h; ++h) {
    const std::size_t kv = h / group;
    const Mat<T>& p = t.probs[h];
    Mat<T> qh = columns(t.q, h * d_a, d_a);
    Mat<T> kh = columns(t.k, kv * d_a, d_a);
    Mat<T> vh = columns(t.v, kv * d_a, d_a);
    Mat<T> doh = columns(dattn, h * d_a, d_a);
    Mat<T> dp = a_bt(doh, vh);
    Mat<T> dvh(m, d_a);
    add_at_b(p, doh, dvh);
    // Softmax: dS = P ⊙ (dP − rowsum(P ⊙ dP)); masked entries have P = 0.
    Mat<T> ds(m, p.cols());
    for (std::size_t i = 0; i < m; ++i) {
      auto pr = p.row(i);
      auto dpr = dp.row(i);
      T dot = 0;
      for (std::size_t j = 0; j < pr.size(); ++j) dot += pr[j] * dpr[j];
      auto dsr = ds.row(i);
      for (std::size_t j = 0; j < pr.size(); ++j) dsr[j] = pr[j] * (dpr[j] - dot);
    }
    add_columns(matmul(ds, kh), dq, h * d_a);
    Mat<T> dkh(m, d_a);
    add_at_b(ds, qh, dkh);
    add_columns(dkh, dk, kv * d_a);
    add_columns(dvh, dv, kv * d_a);
  }

  // q was rotated then scaled; k rotated.
  const T scale = T(1) / std::sqrt(static_cast<T>(d_a));
  for (auto& e : dq.data()) e *= scale;
  Mat<T> dq_pre = rope_apply_inverse(dq, t.positions, config.rope_base, d_a);
  Mat<T> dk_pre = rope_apply_inverse(dk, t.positions, config.rope_base, d_a);
  add_at_b(t.attn_in, dq_pre, g.wq);
  add_at_b(t.attn_in, dk_pre, g.wk);
  add_at_b(t.attn_in, dv, g.wv);
  Mat<T> da = a_bt(dq_pre, w.wq);
  matmul_accumulate(dk_pre, transpose(w.wk), da);
  matmul_accumulate(dv, transpose(w.wv), da);

  Mat<T> dx = dmid;
  rmsnorm_rows_backward(t.input, w.attn_norm, t.attn_inv_rms, da, dx, g.attn_norm);
  return dx;
}

struct TrainingLayout {
  SequenceLayout layout;
  std::vector<std::size_t> predict_rows;  // row whose logits predict target[j]
};

// Y is appended as Generated (all but the last token, which is only
// predicted). Y_1 is predicted from the last input row alive after the final
// layer; Y_j from the row of Y_{j-1}.
TrainingLayout training_layout(const TrainExample& ex, int register_layer, int num_layers) {
  EARN_EXPECTS(!ex.target.empty(), "train example: empty target");
  EARN_EXPECTS(ex.target_mask.empty() || ex.target_mask.size() == ex.target.size(),
               "train example: target_mask length differs from target");
  TrainingLayout out{ex.input, {}};
  const std::size_t n_in = ex.input.size();
  std::size_t first = n_in;
  for (std::size_t i = n_in; i-- > 0;) {
    if (register_layer >= num_layers || ex.input.roles[i] != Role::Prompt) {
      first = i;
      break;
    }
  }
  EARN_EXPECTS(first < n_in, "train example: no input row survives pruning");
  out.predict_rows.push_back(first);
  for (std::size_t j = 0; j + 1 < ex.target.size(); ++j) {
    out.layout.append_generated(ex.target[j]);
    out.predict_rows.push_back(n_in + j);
  }
  return out;
}

bool scored(const TrainExample& ex, std::size_t j) {
  return ex.target_mask.empty() || ex.target_mask[j] != 0;
}

template <class T>
T nll_rows(const Mat<T>& logits, const TrainExample& ex, Mat<T>* dlogits) {
  T loss = 0;
  if (dlogits != nullptr) *dlogits = Mat<T>(logits.rows(), logits.cols());
  for (std::size_t j = 0; j < logits.rows(); ++j) {
    if (!scored(ex, j)) continue;
    auto row = logits.row(j);
    const auto target = static_cast<std::size_t>(ex.target[j]);
    EARN_EXPECTS(target < row.size(), "train example: target token outside vocabulary");
    T max_v = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (T v : row) sum += std::exp(v - max_v);
    const T lse = max_v + std::log(sum);
    loss += lse - row[target];
    if (dlogits != nullptr) {
      auto d = dlogits->row(j);
      for (std::size_t c = 0; c < row.size(); ++c) d[c] = std::exp(row[c] - lse);
      d[target] -= T(1);
    }
  }
  return loss;
}

}  // namespace

template <class T>
T loss_nll(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
           const TrainExample& example) {
  spec.validate(config);
  const TrainingLayout tl = training_layout(example, spec.register_layer, config.num_layers);
  ForwardOptions fo;
  fo.logit_rows = tl.predict_rows;
  const auto result = detail::run_forward<T>(weights, config, spec.register_layer, tl.layout, fo, nullptr);
  return nll_rows<T>(result.logits, example, nullptr);
}

template <class T>
T accumulate_gradients(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
                       const TrainExample& example, Weights<T>& grads) {
  spec.validate(config);
  const TrainingLayout tl = training_layout(example, spec.register_layer, config.num_layers);
  ForwardOptions fo;
  fo.logit_rows = tl.predict_rows;
  detail::ForwardTape<T> tape;
  const auto result = detail::run_forward<T>(weights, config, spec.register_layer, tl.layout, fo, &tape);

  Mat<T> dlogits;
  const T loss = nll_rows<T>(result.logits, example, &dlogits);

  // Output head and final norm over the predicting rows.
  add_at_b(tape.final_normed, dlogits, grads.output_head);
  Mat<T> dnormed = a_bt(dlogits, weights.output_head);
  Mat<T> dx(tape.final_hidden.rows(), tape.final_hidden.cols());
  for (std::size_t j = 0; j < tape.logit_local.size(); ++j) {
    const std::size_t r = tape.logit_local[j];
    rmsnorm_backward<T>(tape.final_hidden.row(r), weights.final_norm.row(0), tape.final_inv_rms[j], dnormed.row(j),
                        dx.row(r), grads.final_norm.row(0));
  }

  for (std::size_t l = tape.layers.size(); l-- > 0;) {
    Mat<T> din = layer_backward(weights.layers[l], config, tape.layers[l], dx, grads.layers[l]);
    if (l == 0) {
      dx = std::move(din);
      break;
    }
    const auto& rows_in = tape.layer_rows[l];
    const auto& rows_prev = tape.layer_rows[l - 1];
    if (rows_in.size() == rows_prev.size()) {
      dx = std::move(din);
      continue;
    }
    // Rows dropped at this boundary get zero gradient from above.
    dx = Mat<T>(rows_prev.size(), din.cols());
    std::size_t p = 0;
    for (std::size_t i = 0; i < rows_in.size(); ++i) {
      while (rows_prev[p] != rows_in[i]) ++p;
      auto src = din.row(i);
      std::copy(src.begin(), src.end(), dx.row(p).begin());
    }
  }

  // Embedding lookup: layer 1 sees every layout row in order.
  const auto vocab = static_cast<TokenId>(config.vocab_size);
  const auto n_prefix = static_cast<TokenId>(weights.prefix_registers.rows());
  for (std::size_t i = 0; i < tl.layout.size(); ++i) {
    const TokenId tok = tl.layout.tokens[i];
    std::span<T> dst;
    if (tok < vocab) {
      dst = grads.token_embedding.row(static_cast<std::size_t>(tok));
    } else if (tok < vocab + n_prefix) {
      dst = grads.prefix_registers.row(static_cast<std::size_t>(tok - vocab));
    } else {
      dst = grads.suffix_registers.row(static_cast<std::size_t>(tok - vocab - n_prefix));
    }
    auto src = dx.row(i);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  return loss;
}

template <class T>
LossAndGradients<T> backward(const Weights<T>& weights, const ModelConfig& config, const RegisterSpec& spec,
                             const TrainExample& example) {
  LossAndGradients<T> out{T(0), zero_weights<T>(config, spec)};
  out.loss = accumulate_gradients(weights, config, spec, example, out.grads);
  return out;
}

template float loss_nll<float>(const Weights<float>&, const ModelConfig&, const RegisterSpec&, const TrainExample&);
template double loss_nll<double>(const Weights<double>&, const ModelConfig&, const RegisterSpec&, const TrainExample&);
template float accumulate_gradients<float>(const Weights<float>&, const ModelConfig&, const RegisterSpec&,
                                           const TrainExample&, Weights<float>&);
template double accumulate_gradients<double>(const Weights<double>&, const ModelConfig&, const RegisterSpec&,
                                             const TrainExample&, Weights<double>&);
template LossAndGradients<float> backward<float>(const Weights<float>&, const ModelConfig&, const RegisterSpec&,
                                                 const TrainExample&);
template LossAndGradients<double> backward<double>(const Weights<double>&, const ModelConfig&, const RegisterSpec&,
                                                   const TrainExample&);

}  // namespace earn
