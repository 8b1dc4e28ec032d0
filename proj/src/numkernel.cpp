// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace earn {

namespace flops {

namespace {
thread_local std::uint64_t tally = 0;
}

std::uint64_t count() noexcept { return tally; }
void add(std::uint64_t n) noexcept { tally += n; }

}  // namespace flops

namespace {

// c[m×p] += a[m×n] · b[n×p]. Four output rows share each streamed row of b;
// column blocks keep the output rows resident in L1.
template <class T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t p, const T* a, const T* b, T* c) {
  constexpr std::size_t kColBlock = 256;
  for (std::size_t j0 = 0; j0 < p; j0 += kColBlock) {
    const std::size_t jn = std::min(kColBlock, p - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + i * p + j0;
      T* __restrict c1 = c0 + p;
      T* __restrict c2 = c1 + p;
      T* __restrict c3 = c2 + p;
      const T* a0 = a + i * n;
      const T* a1 = a0 + n;
      const T* a2 = a1 + n;
      const T* a3 = a2 + n;
      for (std::size_t k = 0; k < n; ++k) {
        const T* __restrict br = b + k * p + j0;
        const T x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
        for (std::size_t j = 0; j < jn; ++j) {
          const T bv = br[j];
          c0[j] += x0 * bv;
          c1[j] += x1 * bv;
          c2[j] += x2 * bv;
          c3[j] += x3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict cr = c + i * p + j0;
      for (std::size_t k = 0; k < n; ++k) {
        const T av = a[i * n + k];
        const T* __restrict br = b + k * p + j0;
        for (std::size_t j = 0; j < jn; ++j) cr[j] += av * br[j];
      }
    }
  }
}

template <class T>
void rope_rotate(BasicMatrix<T>& m, std::span<const std::int32_t> positions, double base,
                 std::size_t head_dim, double sign) {
  if (head_dim == 0 || head_dim % 2 != 0) throw ConfigError("head_dim", "rotary embedding needs an even head dimension");
  EARN_EXPECTS(m.cols() % head_dim == 0, "row width must be a multiple of head_dim");
  EARN_EXPECTS(positions.size() == m.rows(), "one position per row required");
  const std::size_t half = head_dim / 2;
  const std::size_t heads = m.cols() / head_dim;
  std::vector<double> inv_freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    inv_freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
  }
  std::vector<T> cosv(half), sinv(half);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = pos * inv_freq[i];
      cosv[i] = static_cast<T>(std::cos(angle));
      sinv[i] = static_cast<T>(sign * std::sin(angle));
    }
    auto row = m.row(r);
    for (std::size_t h = 0; h < heads; ++h) {
      T* v = row.data() + h * head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const T x = v[2 * i];
        const T y = v[2 * i + 1];
        v[2 * i] = x * cosv[i] - y * sinv[i];
        v[2 * i + 1] = x * sinv[i] + y * cosv[i];
      }
    }
  }
}

}  // namespace

template <class T>
void matmul_accumulate(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& out) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimensions differ");
  EARN_EXPECTS(out.rows() == a.rows() && out.cols() == b.cols(), "matmul: output shape mismatch");
  flops::add(2ull * a.rows() * a.cols() * b.cols());
  gemm_accumulate(a.rows(), a.cols(), b.cols(), a.data().data(), b.data().data(), out.data().data());
}

template <class T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimensions differ");
  BasicMatrix<T> out(a.rows(), b.cols());
  matmul_accumulate(a, b, out);
  return out;
}

template <class T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

template <class T>
void softmax_prefix_inplace(std::span<T> row, std::size_t visible) {
  EARN_EXPECTS(visible >= 1 && visible <= row.size(), "softmax: row has no unmasked entry");
  T max_v = row[0];
  for (std::size_t j = 1; j < visible; ++j) max_v = std::max(max_v, row[j]);
  T sum = 0;
  for (std::size_t j = 0; j < visible; ++j) {
    row[j] = std::exp(row[j] - max_v);
    sum += row[j];
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < visible; ++j) row[j] *= inv;
  std::fill(row.begin() + static_cast<std::ptrdiff_t>(visible), row.end(), T(0));
}

template <class T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m, const BasicMatrix<std::uint8_t>* mask) {
  if (mask != nullptr) {
    EARN_EXPECTS(mask->rows() == m.rows() && mask->cols() == m.cols(), "softmax: mask shape mismatch");
  }
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    auto visible = [&](std::size_t c) { return mask == nullptr || (*mask)(r, c) != 0; };
    T max_v = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < in.size(); ++c) {
      if (!visible(c)) continue;
      max_v = any ? std::max(max_v, in[c]) : in[c];
      any = true;
    }
    if (!any) throw ContractViolation("softmax: fully masked row " + std::to_string(r));
    T sum = 0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = visible(c) ? std::exp(in[c] - max_v) : T(0);
      sum += dst[c];
    }
    for (auto& v : dst) v /= sum;
  }
  return out;
}

template <class T>
std::vector<T> rmsnorm(std::span<const T> x, std::span<const T> gain, T eps) {
  EARN_EXPECTS(x.size() == gain.size(), "rmsnorm: gain length mismatch");
  EARN_EXPECTS(!x.empty(), "rmsnorm: empty input");
  T ss = 0;
  for (T v : x) ss += v * v;
  const T inv = T(1) / std::sqrt(ss / static_cast<T>(x.size()) + eps);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * x[i] * inv;
  return y;
}

template <class T>
BasicMatrix<T> rmsnorm_rows(const BasicMatrix<T>& x, std::span<const T> gain, T eps, std::vector<T>* inv_rms) {
  EARN_EXPECTS(x.cols() == gain.size(), "rmsnorm: gain length mismatch");
  BasicMatrix<T> y(x.rows(), x.cols());
  if (inv_rms != nullptr) inv_rms->assign(x.rows(), T(0));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    T ss = 0;
    for (T v : in) ss += v * v;
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(x.cols()) + eps);
    if (inv_rms != nullptr) (*inv_rms)[r] = inv;
    auto out = y.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = gain[c] * in[c] * inv;
  }
  return y;
}

template <class T>
T silu(T x) noexcept {
  return x / (T(1) + std::exp(-x));
}

template <class T>
BasicMatrix<T> rope_apply(const BasicMatrix<T>& m, std::span<const std::int32_t> positions, double base,
                          std::size_t head_dim) {
  BasicMatrix<T> out = m;
  rope_rotate(out, positions, base, head_dim, 1.0);
  return out;
}

template <class T>
BasicMatrix<T> rope_apply_inverse(const BasicMatrix<T>& m, std::span<const std::int32_t> positions, double base,
                                  std::size_t head_dim) {
  BasicMatrix<T> out = m;
  rope_rotate(out, positions, base, head_dim, -1.0);
  return out;
}

template <class T>
std::vector<Ranked<T>> topk(std::span<const T> scores, std::size_t k) {
  if (k > scores.size()) throw ContractViolation("topk: k exceeds the number of scores");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  std::vector<Ranked<T>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], scores[idx[i]]});
  return out;
}

#define EARN_INSTANTIATE(T)                                                                                        \
  template BasicMatrix<T> matmul(const BasicMatrix<T>&, const BasicMatrix<T>&);                                  \
  template void matmul_accumulate(const BasicMatrix<T>&, const BasicMatrix<T>&, BasicMatrix<T>&);                \
  template BasicMatrix<T> transpose(const BasicMatrix<T>&);                                                      \
  template BasicMatrix<T> softmax_rows(const BasicMatrix<T>&, const BasicMatrix<std::uint8_t>*);                 \
  template void softmax_prefix_inplace(std::span<T>, std::size_t);                                               \
  template std::vector<T> rmsnorm(std::span<const T>, std::span<const T>, T);                                    \
  template BasicMatrix<T> rmsnorm_rows(const BasicMatrix<T>&, std::span<const T>, T, std::vector<T>*);           \
  template T silu(T) noexcept;                                                                                   \
  template BasicMatrix<T> rope_apply(const BasicMatrix<T>&, std::span<const std::int32_t>, double, std::size_t); \
  template BasicMatrix<T> rope_apply_inverse(const BasicMatrix<T>&, std::span<const std::int32_t>, double,       \
                                             std::size_t);                                                       \
  template std::vector<Ranked<T>> topk(std::span<const T>, std::size_t);

EARN_INSTANTIATE(float)
EARN_INSTANTIATE(double)

#undef EARN_INSTANTIATE

}  // namespace earn
