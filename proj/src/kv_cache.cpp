// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/kv_cache.hpp"

#include <algorithm>
#include <numeric>

namespace gatedkv {

KVCache KVCache::empty(int layers, int heads, int key_dim, int value_dim) {
  check(layers > 0 && heads > 0 && key_dim > 0 && value_dim > 0,
        "KVCache::empty: non-positive dimension");
  KVCache c;
  c.num_layers = layers;
  c.num_heads = heads;
  c.key_dim = key_dim;
  c.value_dim = value_dim;
  c.entries.assign(layers, std::vector<std::vector<Entry>>(heads));
  return c;
}

const std::vector<KVCache::Entry>& KVCache::at(int layer, int head) const {
  check(layer >= 0 && layer < num_layers && head >= 0 && head < num_heads,
        "KVCache::at: layer/head out of range");
  return entries[layer][head];
}

std::vector<KVCache::Entry>& KVCache::at(int layer, int head) {
  check(layer >= 0 && layer < num_layers && head >= 0 && head < num_heads,
        "KVCache::at: layer/head out of range");
  return entries[layer][head];
}

size_t KVCache::total_entries() const {
  size_t n = 0;
  for (const auto& layer : entries)
    for (const auto& head : layer) n += head.size();
  return n;
}

size_t KVCache::payload_bytes() const {
  return total_entries() * static_cast<size_t>(key_dim + value_dim) * sizeof(double);
}

void KVCache::validate() const {
  for (int l = 0; l < num_layers; ++l) {
    for (int h = 0; h < num_heads; ++h) {
      int prev = -1;
      for (const Entry& e : entries[l][h]) {
        check(e.position > prev, "KVCache: positions not strictly increasing");
        check(static_cast<int>(e.key.size()) == key_dim &&
                  static_cast<int>(e.value.size()) == value_dim,
              "KVCache: entry dimension mismatch");
        prev = e.position;
      }
    }
  }
}

std::vector<int> apply_local(int n, int window) {
  check(n > 0, "apply_local: empty prefill");
  check(window > 0, "apply_local: window must be positive");
  std::vector<int> kept;
  for (int t = std::max(0, n - window); t < n; ++t) kept.push_back(t);
  return kept;
}

std::vector<int> apply_streaming_llm(int n, int sink_count, int window) {
  check(n > 0, "apply_streaming_llm: empty prefill");
  check(sink_count >= 0 && window >= 0,
        "apply_streaming_llm: negative parameter");
  check(sink_count + window > 0,
        "apply_streaming_llm: sink_count and window are both zero");
  std::vector<uint8_t> keep(n, 0);
  for (int t = 0; t < std::min(sink_count, n); ++t) keep[t] = 1;
  for (int t = std::max(0, n - window); t < n; ++t) keep[t] = 1;
  std::vector<int> kept;
  for (int t = 0; t < n; ++t)
    if (keep[t]) kept.push_back(t);
  return kept;
}

std::vector<std::vector<int>> apply_h2o(const std::vector<Grid>& attention,
                                        int budget, int window) {
  check(!attention.empty(), "apply_h2o: no attention heads");
  const int n = attention[0].rows;
  check(n > 0 && attention[0].cols == n, "apply_h2o: attention must be square");
  check(budget > 0 && budget <= n,
        "apply_h2o: budget " + std::to_string(budget) +
            " outside [1, n=" + std::to_string(n) + "]");
  check(window >= 0, "apply_h2o: negative window");
  check(budget >= window, "apply_h2o: budget " + std::to_string(budget) +
                              " smaller than window " + std::to_string(window));

  std::vector<std::vector<int>> out;
  out.reserve(attention.size());
  for (const Grid& a : attention) {
    check(a.rows == n && a.cols == n, "apply_h2o: head shape mismatch");
    // accumulative attention: column sums over all query rows
    std::vector<double> score(n, 0.0);
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < n; ++t) score[t] += a.at(j, t);

    std::vector<uint8_t> keep(n, 0);
    for (int t = n - window; t < n; ++t) keep[t] = 1;

    std::vector<int> candidates;
    for (int t = 0; t < n - window; ++t) candidates.push_back(t);
    // highest score first; equal scores fall back to the earlier position
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a_, int b_) { return score[a_] > score[b_]; });
    for (int i = 0; i < budget - window && i < static_cast<int>(candidates.size());
         ++i)
      keep[candidates[i]] = 1;

    std::vector<int> kept;
    for (int t = 0; t < n; ++t)
      if (keep[t]) kept.push_back(t);
    out.push_back(std::move(kept));
  }
  return out;
}

KVCache prune_cache(const KVCache& cache, const RetainedSets& retained) {
  check(static_cast<int>(retained.size()) == cache.num_layers,
        "prune_cache: retained sets cover " + std::to_string(retained.size()) +
            " layers, cache has " + std::to_string(cache.num_layers));
  KVCache out = KVCache::empty(cache.num_layers, cache.num_heads, cache.key_dim,
                               cache.value_dim);
  out.n_prefill = cache.n_prefill;
  out.n_decoded = cache.n_decoded;
  for (int l = 0; l < cache.num_layers; ++l) {
    check(static_cast<int>(retained[l].size()) == cache.num_heads,
          "prune_cache: head count mismatch at layer " + std::to_string(l));
    for (int h = 0; h < cache.num_heads; ++h) {
      const auto& keep = retained[l][h];
      const auto& src = cache.entries[l][h];
      auto has_position = [&](int pos) {
        for (const auto& e : src)
          if (e.position == pos) return true;
        return false;
      };
      for (int pos : keep)
        check(pos < cache.n_prefill && has_position(pos),
              "prune_cache: retained position " + std::to_string(pos) +
                  " not present in layer " + std::to_string(l) + " head " +
                  std::to_string(h));
      for (const auto& e : src) {
        const bool is_decode = e.position >= cache.n_prefill;
        const bool kept =
            std::binary_search(keep.begin(), keep.end(), e.position);
        if (is_decode || kept) out.entries[l][h].push_back(e);
      }
    }
  }
  return out;
}

std::vector<Grid> masks_from_retained(
    int n, const std::vector<std::vector<int>>& per_head) {
  check(n > 0, "masks_from_retained: empty prefill");
  std::vector<Grid> masks;
  masks.reserve(per_head.size());
  for (const auto& kept : per_head) {
    std::vector<uint8_t> in_set(n, 0);
    for (int t : kept) {
      check(t >= 0 && t < n, "masks_from_retained: position out of range");
      in_set[t] = 1;
    }
    Grid m(n, n, 0.0);
    for (int j = 0; j < n; ++j)
      for (int t = 0; t <= j; ++t)
        if (t == j || in_set[t]) m.at(j, t) = 1.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace gatedkv
