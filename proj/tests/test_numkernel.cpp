// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "earn/numkernel.hpp"

using namespace earn;

namespace {

Matrix random_matrix(std::mt19937& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  Matrix m(r, c);
  for (auto& x : m.data()) x = u(rng);
  return m;
}

double norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
  std::mt19937 rng(1);
  const Matrix m = random_matrix(rng, 3, 5);
  CHECK(matmul(Matrix::identity(3), m) == m);

  const Matrix a(1, 2, std::vector<float>{1, 2});
  const Matrix b(2, 1, std::vector<float>{3, 4});
  const Matrix c = matmul(a, b);
  REQUIRE(c.rows() == 1);
  REQUIRE(c.cols() == 1);
  CHECK(c(0, 0) == 11.0f);
}

TEST_CASE("matmul: FLOPs counter is exactly 2mnk") {
  std::mt19937 rng(2);
  flops::Scope scope;
  matmul(random_matrix(rng, 4, 8), random_matrix(rng, 8, 8));
  CHECK(scope.elapsed() == 512);

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 9, n = 1 + rng() % 9, k = 1 + rng() % 9;
    flops::Scope s;
    Matrix out(m, k);
    matmul_accumulate(random_matrix(rng, m, n), random_matrix(rng, n, k), out);
    CHECK(s.elapsed() == 2 * m * n * k);
  }
}

TEST_CASE("matmul: matches naive product on odd shapes") {
  std::mt19937 rng(3);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {5, 7, 3}, {9, 300, 13}, {17, 4, 260}}) {
    const Matrix a = random_matrix(rng, m, n), b = random_matrix(rng, n, k);
    const Matrix c = matmul(a, b);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) {
        double ref = 0;
        for (int t = 0; t < n; ++t) ref += static_cast<double>(a(i, t)) * b(t, j);
        CHECK(c(i, j) == doctest::Approx(ref).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("matmul: dimension mismatch is a contract violation") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ContractViolation);
  Matrix out(2, 2);
  CHECK_THROWS_AS(matmul_accumulate(Matrix(2, 3), Matrix(3, 3), out), ContractViolation);
}

TEST_CASE("softmax_rows: examples") {
  const Matrix zeros(1, 2);
  const Matrix s = softmax_rows(zeros);
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));

  BasicMatrix<std::uint8_t> mask(1, 2);
  mask(0, 0) = 1;
  const Matrix masked = softmax_rows(Matrix(1, 2, std::vector<float>{0.3f, 7.0f}), &mask);
  CHECK(masked(0, 0) == 1.0f);
  CHECK(masked(0, 1) == 0.0f);

  const Matrix logs(1, 2, std::vector<float>{std::log(1.0f), std::log(3.0f)});
  const Matrix p = softmax_rows(logs);
  CHECK(p(0, 0) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(p(0, 1) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax_rows: fully masked row is rejected") {
  BasicMatrix<std::uint8_t> mask(2, 3, std::uint8_t{1});
  mask(1, 0) = mask(1, 1) = mask(1, 2) = 0;
  CHECK_THROWS_AS(softmax_rows(Matrix(2, 3), &mask), ContractViolation);
}

TEST_CASE("softmax_rows: rows sum to one, masked entries exactly zero (property)") {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng() % 6, c = 1 + rng() % 40;
    Matrix m = random_matrix(rng, r, c);
    for (auto& x : m.data()) x *= 30.0f;  // large magnitudes exercise max-subtraction
    BasicMatrix<std::uint8_t> mask(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) mask(i, j) = (rng() % 3) != 0;
      mask(i, rng() % c) = 1;
    }
    const Matrix p = softmax_rows(m, &mask);
    for (std::size_t i = 0; i < r; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(std::isfinite(p(i, j)));
        if (!mask(i, j)) CHECK(p(i, j) == 0.0f);
        sum += p(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("rmsnorm: examples") {
  const std::vector<float> ones(4, 1.0f);
  for (float y : rmsnorm<float>(ones, ones, 0.0f)) CHECK(y == doctest::Approx(1.0f));

  const std::vector<float> x{3.0f, -3.0f}, g{1.0f, 1.0f};
  const auto y = rmsnorm<float>(x, g, 0.0f);
  CHECK(y[0] == doctest::Approx(1.0f));
  CHECK(y[1] == doctest::Approx(-1.0f));

  const std::vector<float> zero_gain(2, 0.0f);
  for (float v : rmsnorm<float>(x, zero_gain, 1e-6f)) CHECK(v == 0.0f);

  CHECK_THROWS_AS(rmsnorm<float>(x, ones, 0.0f), ContractViolation);
}

TEST_CASE("silu") {
  CHECK(silu(0.0f) == 0.0f);
  CHECK(silu(2.0) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("rope_apply: examples") {
  std::mt19937 rng(5);
  const Matrix m = random_matrix(rng, 3, 8);
  const std::vector<std::int32_t> zeros(3, 0);
  CHECK(rope_apply(m, zeros, 10000.0, 4) == m);

  const Matrix one(1, 8, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<std::int32_t> seven{7};
  const Matrix r = rope_apply(one, seven, 10000.0, 8);
  CHECK(norm(r.row(0)) == doctest::Approx(norm(one.row(0))).epsilon(1e-6));

  // Pair (1, 0) in lane 0 rotates by θ = pos · base^0 = pos.
  const Matrix pair(1, 2, std::vector<float>{1, 0});
  const std::vector<std::int32_t> three{3};
  const Matrix rp = rope_apply(pair, three, 10000.0, 2);
  CHECK(rp(0, 0) == doctest::Approx(std::cos(3.0)).epsilon(1e-6));
  CHECK(rp(0, 1) == doctest::Approx(std::sin(3.0)).epsilon(1e-6));

  CHECK_THROWS_AS(rope_apply(Matrix(1, 6), std::vector<std::int32_t>{1}, 10000.0, 3), ConfigError);
}

TEST_CASE("rope_apply: norm preserved, composition adds positions, inverse undoes (property)") {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t head_dim = 2 * (1 + rng() % 8);
    const std::size_t heads = 1 + rng() % 3;
    const Matrix m = random_matrix(rng, 1, head_dim * heads);
    const std::int32_t p = static_cast<std::int32_t>(rng() % 500), q = static_cast<std::int32_t>(rng() % 500);
    const std::vector<std::int32_t> vp{p}, vq{q}, vpq{p + q};
    const Matrix once = rope_apply(m, vpq, 10000.0, head_dim);
    const Matrix twice = rope_apply(rope_apply(m, vp, 10000.0, head_dim), vq, 10000.0, head_dim);
    const Matrix back = rope_apply_inverse(once, vpq, 10000.0, head_dim);
    CHECK(norm(once.row(0)) == doctest::Approx(norm(m.row(0))).epsilon(1e-5));
    for (std::size_t j = 0; j < m.cols(); ++j) {
      CHECK(std::abs(once(0, j) - twice(0, j)) < 1e-5 * std::max(1.0, norm(m.row(0))));
      CHECK(std::abs(back(0, j) - m(0, j)) < 1e-5 * std::max(1.0, norm(m.row(0))));
    }
  }
}

TEST_CASE("topk: examples and errors") {
  const std::vector<float> a{1, 3, 2};
  const auto r = topk<float>(a, 2);
  REQUIRE(r.size() == 2);
  CHECK(r[0] == Ranked<float>{1, 3});
  CHECK(r[1] == Ranked<float>{2, 2});

  const std::vector<float> ties{5, 5, 5};
  const auto t = topk<float>(ties, 2);
  CHECK(t[0] == Ranked<float>{0, 5});
  CHECK(t[1] == Ranked<float>{1, 5});

  const std::vector<float> v{4, -1, 9, 9, 0};
  const auto all = topk<float>(v, v.size());
  const std::vector<std::size_t> order{2, 3, 0, 4, 1};
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(all[i].index == order[i]);

  CHECK_THROWS_AS(topk<float>(a, 4), ContractViolation);
}
