// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "gatedkv/config.hpp"
#include "gatedkv/model.hpp"
#include "gatedkv/train.hpp"

namespace gatedkv {

// Attention-score MAC model for an n-token prefill. gate: the scorer's own
// QK^T work. full: ungated main attention. pruned: main attention after
// evicting evict_percent of the cache. combined: the dominant of scorer and
// pruned attention, n^2 * max(gate dims, kept share * attention dims). net =
// gate + pruned - full; negative means the scorer pays for itself. The _x100
// fields carry the same numbers times 100 rounded to integers, exact for any
// percentage with a short binary fraction, so tests compare without float
// tolerance.
struct FlopsReport {
  double gate_macs = 0.0;
  double full_macs = 0.0;
  double pruned_macs = 0.0;
  double combined_macs = 0.0;
  double net_macs = 0.0;
  long long gate_macs_x100 = 0;
  long long full_macs_x100 = 0;
  long long pruned_macs_x100 = 0;
  long long combined_macs_x100 = 0;
  long long net_macs_x100 = 0;
};

FlopsReport flops_model(long long n, int num_heads, int head_dim,
                        int gate_heads, int gate_head_dim,
                        double evict_percent);

// Live (query,key) pairs admitted by ready-made masks.
long long live_pairs_from_masks(const std::vector<std::vector<Grid>>& masks);

// The same count derived from per-layer hard flags by the column rule:
// row j sees column t iff t == j, or t >= j - recent_window (window active),
// or the flag of column t is up.
long long live_pairs_from_flags(const std::vector<EvictionFlags>& flags,
                                int recent_window);

// Mean next-token negative log-likelihood of one window.
double mean_nll(const Grid& logits, std::span<const int> targets);

struct EvalResult {
  double perplexity = 0.0;
  double mean_retention = 1.0;  // kept prefill entries / n over layers*heads
  double kv_bytes_full = 0.0;   // per-sample mean
  double kv_bytes_pruned = 0.0;
  long long live_pairs = 0;
  long long samples = 0;
};

// Perplexity and cache accounting over the samples under one eviction policy.
// The gate policy runs the gated forward itself; position and score baselines
// evaluate through column-visibility masks over their retained sets.
EvalResult evaluate_policy(const Model& model,
                           const std::vector<Sample>& samples,
                           const PolicySpec& policy);

struct BenchRow {
  std::string policy;
  double perplexity = 0.0;
  double mean_retention = 1.0;
  double kv_bytes_pruned = 0.0;
  double kv_bytes_full = 0.0;
  long long live_pairs = 0;
};

// Head-to-head run over the named policies: the gate policy runs as-is, and
// every baseline is granted the same per-head budget the gate actually used
// (rounded to the nearest whole position, at least one). An empty list runs
// all of none, attention_gate, local, streaming_llm, h2o.
std::vector<BenchRow> run_bench(const Model& model,
                                const std::vector<Sample>& samples,
                                int streaming_sinks = 4,
                                const std::vector<std::string>& policies = {});

// Deterministic CSV with a fixed header; fields printed via %.10g.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace gatedkv
