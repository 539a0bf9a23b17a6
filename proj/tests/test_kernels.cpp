// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense kernel checks: fixed small products, storage-layout consistency
// between the nn/nt/tn entry points, and bitwise agreement between the
// OpenMP kernels and the serial reference across shapes that straddle the
// parallel threshold.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/kernels.hpp"

using namespace gatedkv;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

std::vector<double> transpose_copy(const std::vector<double>& a, int m, int n) {
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * n + j];
  return out;
}

}  // namespace

TEST_CASE("matmul identity and fixed products") {
  const std::vector<double> eye = {1, 0, 0, 1};
  const std::vector<double> b = {3, 4, 5, 6};
  std::vector<double> c(4, -1.0);
  kernels::matmul_nn(eye.data(), b.data(), c.data(), 2, 2, 2);
  CHECK(c == b);

  const std::vector<double> a2 = {1, 2};
  const std::vector<double> b2 = {3, 4};
  std::vector<double> c2(1, 0.0);
  kernels::matmul_nn(a2.data(), b2.data(), c2.data(), 1, 2, 1);
  CHECK(c2[0] == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("accumulate flag adds into the output") {
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {1, 0, 0, 1};
  std::vector<double> c = {10, 10, 10, 10};
  kernels::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2, true);
  CHECK(c == std::vector<double>{11, 12, 13, 14});
  kernels::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2, false);
  CHECK(c == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("nt and tn agree with nn on explicitly transposed operands") {
  Rng rng(11);
  const int m = 7, k = 5, p = 9;
  const auto a = random_vec(rng, static_cast<size_t>(m) * k);
  const auto b = random_vec(rng, static_cast<size_t>(k) * p);
  std::vector<double> ref(static_cast<size_t>(m) * p);
  kernels::matmul_nn(a.data(), b.data(), ref.data(), m, k, p);

  const auto bt = transpose_copy(b, k, p);  // stored [p x k]
  std::vector<double> c_nt(ref.size(), 0.0);
  kernels::matmul_nt(a.data(), bt.data(), c_nt.data(), m, k, p);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(c_nt[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  const auto at = transpose_copy(a, m, k);  // stored [k x m]
  std::vector<double> c_tn(ref.size(), 0.0);
  kernels::matmul_tn(at.data(), b.data(), c_tn.data(), m, k, p);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(c_tn[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("transpose kernel round-trips") {
  Rng rng(3);
  const int m = 6, n = 11;
  const auto a = random_vec(rng, static_cast<size_t>(m) * n);
  std::vector<double> t(a.size()), back(a.size());
  kernels::transpose(a.data(), t.data(), m, n);
  kernels::transpose(t.data(), back.data(), n, m);
  CHECK(std::memcmp(a.data(), back.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("softmax rows: fixed values and normalization") {
  const std::vector<double> in = {1, 2, 3};
  std::vector<double> out(3);
  kernels::softmax_rows(in.data(), out.data(), 1, 3);
  CHECK(out[0] == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(out[1] == doctest::Approx(0.24472847).epsilon(1e-7));
  CHECK(out[2] == doctest::Approx(0.66524096).epsilon(1e-7));

  Rng rng(5);
  const int m = 13, n = 17;
  const auto big = random_vec(rng, static_cast<size_t>(m) * n);
  std::vector<double> res(big.size());
  kernels::softmax_rows(big.data(), res.data(), m, n);
  for (int r = 0; r < m; ++r) {
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
      sum += res[static_cast<size_t>(r) * n + c];
      CHECK(res[static_cast<size_t>(r) * n + c] >= 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("parallel kernels match the serial reference bitwise") {
  Rng rng(77);
  // shapes below and above the parallelization threshold
  const int shapes[][3] = {{3, 4, 5}, {16, 16, 16}, {40, 64, 33}, {96, 80, 70}};
  for (const auto& s : shapes) {
    const int m = s[0], k = s[1], p = s[2];
    const auto a = random_vec(rng, static_cast<size_t>(m) * k);
    const auto b = random_vec(rng, static_cast<size_t>(k) * p);
    const auto bt = transpose_copy(b, k, p);
    const auto at = transpose_copy(a, m, k);
    std::vector<double> ser(static_cast<size_t>(m) * p), par(ser.size());

    kernels::serial::matmul_nn(a.data(), b.data(), ser.data(), m, k, p);
    kernels::matmul_nn(a.data(), b.data(), par.data(), m, k, p);
    CHECK(std::memcmp(ser.data(), par.data(), ser.size() * 8) == 0);

    kernels::serial::matmul_nt(a.data(), bt.data(), ser.data(), m, k, p);
    kernels::matmul_nt(a.data(), bt.data(), par.data(), m, k, p);
    CHECK(std::memcmp(ser.data(), par.data(), ser.size() * 8) == 0);

    kernels::serial::matmul_tn(at.data(), b.data(), ser.data(), m, k, p);
    kernels::matmul_tn(at.data(), b.data(), par.data(), m, k, p);
    CHECK(std::memcmp(ser.data(), par.data(), ser.size() * 8) == 0);
  }

  const auto x = random_vec(rng, 50 * 60);
  std::vector<double> ser(50 * 60), par(50 * 60);
  kernels::serial::softmax_rows(x.data(), ser.data(), 50, 60);
  kernels::softmax_rows(x.data(), par.data(), 50, 60);
  CHECK(std::memcmp(ser.data(), par.data(), ser.size() * 8) == 0);

  kernels::serial::transpose(x.data(), ser.data(), 50, 60);
  kernels::transpose(x.data(), par.data(), 50, 60);
  CHECK(std::memcmp(ser.data(), par.data(), ser.size() * 8) == 0);
}

TEST_CASE("matmul is deterministic across repeated runs") {
  Rng rng(123);
  const int n = 48;
  const auto a = random_vec(rng, static_cast<size_t>(n) * n);
  const auto b = random_vec(rng, static_cast<size_t>(n) * n);
  std::vector<double> c1(a.size()), c2(a.size());
  kernels::matmul_nn(a.data(), b.data(), c1.data(), n, n, n);
  kernels::matmul_nn(a.data(), b.data(), c2.data(), n, n, n);
  CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
}
