// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over 2-D double tensors. The graph is built
// per forward pass (define-by-run): every op allocates a fresh node that keeps
// shared ownership of its parents plus a closure that pushes gradients into
// them. backward() walks the graph in reverse topological order. Gradients
// accumulate until zero_grad(), so repeated backward calls add up.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gatedkv/common.hpp"

namespace gatedkv {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use during backward
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantics handle onto a graph node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor from_values(int rows, int cols, std::vector<double> v,
                            bool requires_grad = false);
  static Tensor from_grid(const Grid& g, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  size_t numel() const { return node_->numel(); }

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  const std::vector<double>& grad() const;
  double item() const;
  Grid to_grid() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  NodePtr node() const { return node_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

// While alive, newly built nodes never require grad and record no closures.
// Evaluation-only forwards use this to skip graph bookkeeping.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor abs_val(const Tensor& a);  // subgradient 0 at 0

// Per-row scale normalization: y = x / sqrt(mean(x^2) + eps) * gain.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

// Adds -kMaskInf to every position where mask==0. The mask is a constant, not
// part of the graph.
Tensor apply_mask(const Tensor& scores, const Grid& mask01);

// Row softmax. Throws if some row is entirely at or below the masking floor
// (every attention row must keep at least its diagonal alive).
Tensor softmax_rows(const Tensor& a);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum_all(const Tensor& a);   // -> 1x1
Tensor mean_all(const Tensor& a);  // -> 1x1

// Gather rows of table by id. Backward scatter-adds into the table grad.
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);

// Mean softmax cross-entropy over rows with integer targets, fused for
// numerical stability: loss = mean_r(logsumexp(row_r) - row_r[target_r]).
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets);

// Expands per-token gate values of one head into an n x n factor matrix:
// out[j][t] = gate[t][head] where pattern[j*n+t] != 0, and 1 elsewhere.
// Backward sums matching positions back into the gate column.
Tensor ste_spread(const Tensor& gate_nh, int head,
                  std::shared_ptr<const std::vector<uint8_t>> pattern, int n);

// Reverse-mode sweep from a scalar loss. Accumulates into .grad of every
// reachable node with requires_grad set.
void backward(const Tensor& loss);

}  // namespace gatedkv
