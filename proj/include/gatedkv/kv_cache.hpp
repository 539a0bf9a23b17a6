// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/config.hpp"

namespace gatedkv {

// Physical KV store. Entries keep their original sequence position so decode
// attention and position bookkeeping survive pruning; per head the position
// list is strictly increasing.
struct KVCache {
  struct Entry {
    int position = 0;
    std::vector<double> key;
    std::vector<double> value;
  };

  int num_layers = 0;
  int num_heads = 0;
  int key_dim = 0;
  int value_dim = 0;
  int n_prefill = 0;
  int n_decoded = 0;
  // [layer][head] -> entries ordered by position
  std::vector<std::vector<std::vector<Entry>>> entries;

  static KVCache empty(int layers, int heads, int key_dim, int value_dim);

  const std::vector<Entry>& at(int layer, int head) const;
  std::vector<Entry>& at(int layer, int head);

  size_t total_entries() const;
  // bytes of retained K/V payload, 8 bytes per scalar
  size_t payload_bytes() const;

  void validate() const;
};

// Retained prefill positions per layer and head, ascending.
using RetainedSets = std::vector<std::vector<std::vector<int>>>;

// Position-rule baselines. Both return one ascending position set for a
// prefill of n tokens; every layer and head shares it.
//   local: the trailing `window` positions.
//   streaming_llm: the first `sink_count` positions plus the trailing window.
std::vector<int> apply_local(int n, int window);
std::vector<int> apply_streaming_llm(int n, int sink_count, int window);

// Score-based baseline: per head, keep the `window` most recent positions
// unconditionally, then fill up to `budget` with the highest column sums of
// post-softmax attention (ties break toward the lower position).
// attention: one [n x n] grid per head from an ungated causal run.
std::vector<std::vector<int>> apply_h2o(const std::vector<Grid>& attention,
                                        int budget, int window);

// Drops every prefill entry whose position is absent from the retained set.
// Decode entries are never touched. Throws if a set names a position the
// cache does not hold.
KVCache prune_cache(const KVCache& cache, const RetainedSets& retained);

// Column-visibility masks for evaluating a policy's retained sets: row j sees
// column t iff t is retained or t == j (self), restricted to the causal
// triangle. One grid per head.
std::vector<Grid> masks_from_retained(int n,
                                      const std::vector<std::vector<int>>& per_head);

}  // namespace gatedkv
