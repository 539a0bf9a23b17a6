// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/kernels.hpp"

#include <cmath>

namespace gatedkv::kernels {

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[i * k + l] * b[l * p + j];
      if (accumulate)
        c[i * p + j] += acc;
      else
        c[i * p + j] = acc;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[i * k + l] * b[j * k + l];
      if (accumulate)
        c[i * p + j] += acc;
      else
        c[i * p + j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[l * m + i] * b[l * p + j];
      if (accumulate)
        c[i * p + j] += acc;
      else
        c[i * p + j] = acc;
    }
  }
}

void transpose(const double* a, double* out, int m, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      if (accumulate)
        out[j * m + i] += a[i * n + j];
      else
        out[j * m + i] = a[i * n + j];
    }
  }
}

void softmax_rows(const double* in, double* out, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const double* row = in + static_cast<size_t>(i) * n;
    double* orow = out + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j)
      if (row[j] > mx) mx = row[j];
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
}

}  // namespace serial

// Parallel variants. The row loop is the only parallel dimension; the inner
// accumulation is untouched, which is what keeps results bitwise equal to the
// serial reference. Small problems skip the thread fork entirely.

static constexpr long long kParThreshold = 1 << 14;

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate) {
  const long long work = 1LL * m * k * p;
#pragma omp parallel for schedule(static) if (work >= kParThreshold)
  for (int i = 0; i < m; ++i)
    serial::matmul_nn(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * p,
                      1, k, p, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate) {
  const long long work = 1LL * m * k * p;
#pragma omp parallel for schedule(static) if (work >= kParThreshold)
  for (int i = 0; i < m; ++i)
    serial::matmul_nt(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * p,
                      1, k, p, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate) {
  const long long work = 1LL * m * k * p;
  // a is stored [k x m]; rows of c still index the second storage dimension of
  // a, so the split stays over c's rows.
#pragma omp parallel for schedule(static) if (work >= kParThreshold)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[l * m + i] * b[l * p + j];
      if (accumulate)
        c[i * p + j] += acc;
      else
        c[i * p + j] = acc;
    }
  }
}

void transpose(const double* a, double* out, int m, int n, bool accumulate) {
  // Parallel over output rows (input columns).
#pragma omp parallel for schedule(static) if (1LL * m * n >= kParThreshold)
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i) {
      if (accumulate)
        out[j * m + i] += a[i * n + j];
      else
        out[j * m + i] = a[i * n + j];
    }
  }
}

void softmax_rows(const double* in, double* out, int m, int n) {
#pragma omp parallel for schedule(static) if (1LL * m * n >= kParThreshold)
  for (int i = 0; i < m; ++i)
    serial::softmax_rows(in + static_cast<size_t>(i) * n,
                         out + static_cast<size_t>(i) * n, 1, n);
}

}  // namespace gatedkv::kernels
