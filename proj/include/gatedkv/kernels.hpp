// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels behind the tensor ops. Every kernel exists twice: the
// OpenMP-parallel default (this namespace) and a serial reference under
// kernels::serial. The parallel versions split work over output rows only, so
// each output element is accumulated in the same order as the serial code and
// results are bitwise identical at any thread count. tools/kernel_bench.cpp
// compares the two.

#pragma once

#include <cstddef>

namespace gatedkv::kernels {

// Logical product c[m x p] = a[m x k] * b[k x p]; the suffix names how the
// operand matrices are stored. With accumulate=true the kernel adds into c.
//   nn: a stored [m x k], b stored [k x p]
//   nt: a stored [m x k], b stored [p x k]   (c = a * b^T)
//   tn: a stored [k x m], b stored [k x p]   (c = a^T * b)
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate = false);

// out[n x m] = a[m x n]^T; accumulate adds into out.
void transpose(const double* a, double* out, int m, int n,
               bool accumulate = false);

// Row-wise softmax with max-subtraction. Rows must contain at least one entry
// above the masking floor; callers are expected to validate that.
void softmax_rows(const double* in, double* out, int m, int n);

namespace serial {
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int p,
               bool accumulate = false);
void transpose(const double* a, double* out, int m, int n,
               bool accumulate = false);
void softmax_rows(const double* in, double* out, int m, int n);
}  // namespace serial

}  // namespace gatedkv::kernels
