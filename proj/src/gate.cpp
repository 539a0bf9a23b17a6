// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/gate.hpp"

#include <cmath>

namespace gatedkv {

std::vector<Tensor*> GateWeights::params() {
  std::vector<Tensor*> out;
  if (norm_gain.defined()) out.push_back(&norm_gain);
  for (auto& t : wq) out.push_back(&t);
  for (auto& t : wk) out.push_back(&t);
  for (auto& t : wv) out.push_back(&t);
  if (wo.defined()) out.push_back(&wo);
  if (w_lin.defined()) out.push_back(&w_lin);
  return out;
}

Tensor ag_scores_mha(const Tensor& x, const GateWeights& w,
                     const ModelConfig& cfg) {
  check(x.cols() == cfg.hidden_dim,
        "ag_scores_mha: input width " + std::to_string(x.cols()) +
            " != hidden_dim " + std::to_string(cfg.hidden_dim));
  check(static_cast<int>(w.wq.size()) == cfg.gate_heads,
        "ag_scores_mha: scorer weights carry " + std::to_string(w.wq.size()) +
            " heads, config wants " + std::to_string(cfg.gate_heads));
  const int n = x.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.gate_head_dim));
  // The scorer normalizes its own input so it stays independent of the
  // surrounding block's normalization parameters.
  Tensor xn = rms_norm(x, w.norm_gain);
  const std::vector<Grid> causal = causal_masks(n, 1);
  std::vector<Tensor> heads;
  heads.reserve(cfg.gate_heads);
  for (int i = 0; i < cfg.gate_heads; ++i) {
    Tensor q = matmul(xn, w.wq[i]);
    Tensor k = matmul(xn, w.wk[i]);
    Tensor v = matmul(xn, w.wv[i]);
    Tensor s = scale(matmul(q, transpose(k)), inv_sqrt);
    Tensor a = softmax_rows(apply_mask(s, causal[0]));
    heads.push_back(matmul(a, v));
  }
  return matmul(concat_cols(heads), w.wo);  // [n x num_heads]
}

Tensor ag_scores_linear(const Tensor& x, const GateWeights& w,
                        const ModelConfig& cfg) {
  check(w.w_lin.defined(), "ag_scores_linear: linear scorer weights missing");
  check(x.cols() == cfg.hidden_dim,
        "ag_scores_linear: input width " + std::to_string(x.cols()) +
            " != hidden_dim " + std::to_string(cfg.hidden_dim));
  return matmul(x, w.w_lin);
}

EvictionFlags flags_from_scores(const Grid& scores, const ModelConfig& cfg) {
  EvictionFlags f;
  f.soft = Grid(scores.rows, scores.cols);
  f.hard = Grid(scores.rows, scores.cols);
  for (size_t i = 0; i < scores.v.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-(scores.v[i] + cfg.gate_logit_offset)));
    f.soft.v[i] = s;
    f.hard.v[i] = s > cfg.gate_threshold ? 1.0 : 0.0;  // strict: ties evict
  }
  return f;
}

EvictionFlags ag_forward(const Tensor& x, const GateWeights& w,
                         const ModelConfig& cfg) {
  NoGradGuard ng;
  return flags_from_scores(ag_scores_mha(x, w, cfg).to_grid(), cfg);
}

EvictionFlags ag_forward_linear(const Tensor& x, const GateWeights& w,
                                const ModelConfig& cfg) {
  NoGradGuard ng;
  return flags_from_scores(ag_scores_linear(x, w, cfg).to_grid(), cfg);
}

EvictionFlags ag_forward_prev_layer(const Tensor& x_prev,
                                    const GateWeights& w_prev,
                                    const ModelConfig& cfg, int layer) {
  check(layer >= cfg.gate_start_layer,
        "ag_forward_prev_layer: layer " + std::to_string(layer) +
            " sits below gate_start_layer " +
            std::to_string(cfg.gate_start_layer) + " and is not gated");
  check(layer >= 1, "ag_forward_prev_layer: layer 0 has no previous layer");
  NoGradGuard ng;
  return flags_from_scores(ag_scores_mha(x_prev, w_prev, cfg).to_grid(), cfg);
}

std::shared_ptr<std::vector<uint8_t>> gate_pattern(int n, int recent_window) {
  check(n > 0, "gate_pattern: empty sequence");
  check(recent_window >= 0, "gate_pattern: negative recent_window");
  auto p = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n) * n, 0);
  for (int j = 0; j < n; ++j)
    for (int t = 0; t < j; ++t)
      if (recent_window == 0 || t < j - recent_window)
        (*p)[static_cast<size_t>(j) * n + t] = 1;
  return p;
}

std::vector<Grid> build_mask(const Grid& hard_flags, int recent_window) {
  const int n = hard_flags.rows;
  const int h = hard_flags.cols;
  check(n > 0 && h > 0, "build_mask: empty flag matrix");
  check(recent_window >= 0, "build_mask: negative recent_window");
  std::vector<Grid> masks(h, Grid(n, n, 0.0));
  for (int i = 0; i < h; ++i) {
    Grid& m = masks[i];
    for (int j = 0; j < n; ++j) {
      for (int t = 0; t <= j; ++t) {
        if (t == j)
          m.at(j, t) = 1.0;  // a token always attends to itself
        else if (recent_window > 0 && t >= j - recent_window)
          m.at(j, t) = 1.0;
        else
          m.at(j, t) = hard_flags.at(t, i);
      }
    }
    // cheap self-check: the diagonal must never be evicted
    for (int j = 0; j < n; ++j)
      check(m.at(j, j) == 1.0, "build_mask: diagonal dropped at row " +
                                   std::to_string(j));
  }
  return masks;
}

std::vector<Grid> causal_masks(int n, int heads) {
  check(n > 0 && heads > 0, "causal_masks: empty shape");
  Grid one(n, n, 0.0);
  for (int j = 0; j < n; ++j)
    for (int t = 0; t <= j; ++t) one.at(j, t) = 1.0;
  return std::vector<Grid>(heads, one);
}

Grid all_ones_flags(int n, int heads) { return Grid(n, heads, 1.0); }

GateStats stats_from_flags(const std::vector<EvictionFlags>& per_layer,
                           int num_heads) {
  GateStats s;
  const int layers = static_cast<int>(per_layer.size());
  s.per_layer_eviction.assign(layers, 0.0);
  s.per_head_eviction = Grid(layers, num_heads);
  double total = 0.0;
  size_t count = 0;
  for (int l = 0; l < layers; ++l) {
    const Grid& hard = per_layer[l].hard;
    check(hard.cols == num_heads, "stats_from_flags: head count mismatch");
    double layer_sum = 0.0;
    for (int i = 0; i < num_heads; ++i) {
      double head_sum = 0.0;
      for (int t = 0; t < hard.rows; ++t) head_sum += hard.at(t, i);
      s.per_head_eviction.at(l, i) = 1.0 - head_sum / hard.rows;
      layer_sum += head_sum;
    }
    s.per_layer_eviction[l] = 1.0 - layer_sum / (hard.rows * num_heads);
    total += layer_sum;
    count += hard.numel();
  }
  s.mean_retention = count ? total / static_cast<double>(count) : 1.0;
  return s;
}

}  // namespace gatedkv
