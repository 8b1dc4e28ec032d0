// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "earn/error.hpp"

namespace earn {

/// Dense row-major matrix. `float` is the compute type everywhere; the
/// `double` instantiation backs the finite-difference gradient oracle.
template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    EARN_EXPECTS(data_.size() == rows_ * cols_, "matrix data length must equal rows*cols");
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  /// Appends one row; storage grows geometrically.
  void append_row(std::span<const T> values) {
    EARN_EXPECTS(rows_ == 0 || values.size() == cols_, "appended row width mismatch");
    if (rows_ == 0) cols_ = values.size();
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  void resize_rows(std::size_t rows) {
    rows_ = rows;
    data_.resize(rows_ * cols_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;

template <class To, class From>
BasicMatrix<To> matrix_cast(const BasicMatrix<From>& m) {
  std::vector<To> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<To>(m.data()[i]);
  return BasicMatrix<To>(m.rows(), m.cols(), std::move(out));
}

// Matrix-multiplication FLOPs accumulate into a thread-local counter, so
// sessions running on different threads never share a tally.
namespace flops {

std::uint64_t count() noexcept;
void add(std::uint64_t n) noexcept;

class Scope {
 public:
  Scope() noexcept : start_(count()) {}
  std::uint64_t elapsed() const noexcept { return count() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace flops

/// a × b. Adds 2·a.rows·a.cols·b.cols to the FLOPs counter.
template <class T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// out += a × b, same accounting as matmul.
template <class T>
void matmul_accumulate(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& out);

template <class T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m);

/// Row softmax. `mask`, when given, has the shape of `m`; zero marks a
/// masked entry, which comes out exactly 0.
template <class T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m, const BasicMatrix<std::uint8_t>* mask = nullptr);

/// In-place softmax over `row[0, visible)`; entries from `visible` on are set to 0.
template <class T>
void softmax_prefix_inplace(std::span<T> row, std::size_t visible);

/// y_i = gain_i · x_i / sqrt(mean(x²) + eps)
template <class T>
std::vector<T> rmsnorm(std::span<const T> x, std::span<const T> gain, T eps);

/// Row-wise rmsnorm; `inv_rms`, if non-null, receives 1/sqrt(mean(x²)+eps) per row.
template <class T>
BasicMatrix<T> rmsnorm_rows(const BasicMatrix<T>& x, std::span<const T> gain, T eps,
                            std::vector<T>* inv_rms = nullptr);

template <class T>
T silu(T x) noexcept;

/// Rotary embedding over each `head_dim`-wide slice of every row. Pairs are
/// adjacent lanes (2i, 2i+1) rotated by positions[row] · base^(-2i/head_dim).
template <class T>
BasicMatrix<T> rope_apply(const BasicMatrix<T>& m, std::span<const std::int32_t> positions,
                          double base, std::size_t head_dim);

/// Inverse rotation; the adjoint of rope_apply, used by backward passes.
template <class T>
BasicMatrix<T> rope_apply_inverse(const BasicMatrix<T>& m, std::span<const std::int32_t> positions,
                                  double base, std::size_t head_dim);

template <class T>
struct Ranked {
  std::size_t index;
  T value;
  friend bool operator==(const Ranked&, const Ranked&) = default;
};

/// Top-k by descending value; ties go to the lower index.
template <class T>
std::vector<Ranked<T>> topk(std::span<const T> scores, std::size_t k);

}  // namespace earn
