// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Token-eviction gate. A small scorer turns the layer's incoming hidden state
// into one logit per (token, attention head); sigmoid plus a strict threshold
// decides which tokens each head keeps in its KV-cache. Three scorer variants:
// a reduced causal multi-head attention (default), a single linear map, and
// the previous layer's scorer reused to hide gate latency.

#pragma once

#include <memory>
#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/config.hpp"
#include "gatedkv/tensor.hpp"

namespace gatedkv {

// Per-layer gate decisions for an n-token prefill. soft holds sigmoid outputs,
// hard the thresholded 0/1 flags; both are [n x heads].
struct EvictionFlags {
  Grid soft;
  Grid hard;
};

// Aggregated retention accounting across a forward pass.
struct GateStats {
  double mean_retention = 1.0;              // mean hard flag over layers*heads*tokens
  std::vector<double> per_layer_eviction;   // 1 - mean retention, per layer
  Grid per_head_eviction;                   // [layers x heads]
};

// Scorer parameters for one layer. Which tensors are populated depends on the
// gate variant; absent ones stay undefined.
struct GateWeights {
  Tensor norm_gain;             // [1 x d], scorer-local normalization
  std::vector<Tensor> wq, wk, wv;  // per scorer head, each [d x gate_head_dim]
  Tensor wo;                    // [gate_heads*gate_head_dim x num_heads]
  Tensor w_lin;                 // [d x num_heads], linear variant only

  std::vector<Tensor*> params();
};

// Raw gate logits [n x num_heads] from the reduced causal MHA scorer.
Tensor ag_scores_mha(const Tensor& x, const GateWeights& w,
                     const ModelConfig& cfg);

// Raw gate logits from the linear scorer: scores = X * W_lin.
Tensor ag_scores_linear(const Tensor& x, const GateWeights& w,
                        const ModelConfig& cfg);

// Threshold pass: soft = sigmoid(scores + offset), hard = soft > threshold.
EvictionFlags flags_from_scores(const Grid& scores, const ModelConfig& cfg);

// Scorer + threshold in one step (evaluation path, no graph).
EvictionFlags ag_forward(const Tensor& x, const GateWeights& w,
                         const ModelConfig& cfg);
EvictionFlags ag_forward_linear(const Tensor& x, const GateWeights& w,
                                const ModelConfig& cfg);

// prev_layer_gate: layer `layer` reuses the scorer owned by layer-1, fed with
// that layer's input hidden state. Layers below gate_start_layer are not
// gated and must not call this.
EvictionFlags ag_forward_prev_layer(const Tensor& x_prev,
                                    const GateWeights& w_prev,
                                    const ModelConfig& cfg, int layer);

// Per-head n x n attention masks from one layer's hard flags:
//   future tokens masked, the diagonal always live, a trailing band of
//   recent_window tokens always live, everything else follows the flag of the
//   key token's column.
std::vector<Grid> build_mask(const Grid& hard_flags, int recent_window);

// Positions where the mask value is flag-controlled (strictly below the
// diagonal and outside the recent band). Shared between mask construction and
// the straight-through factor so the two can never disagree.
std::shared_ptr<std::vector<uint8_t>> gate_pattern(int n, int recent_window);

// Plain causal mask (lower triangle live), h copies.
std::vector<Grid> causal_masks(int n, int heads);

Grid all_ones_flags(int n, int heads);

GateStats stats_from_flags(const std::vector<EvictionFlags>& per_layer,
                           int num_heads);

}  // namespace gatedkv
