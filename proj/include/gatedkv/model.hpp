// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer with per-head KV-cache eviction decided by the
// gate module at prefill time. Pre-normalization blocks, two-layer SiLU
// feed-forward, learned absolute position embeddings, logits through the
// transposed input embedding.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/config.hpp"
#include "gatedkv/gate.hpp"
#include "gatedkv/kv_cache.hpp"
#include "gatedkv/tensor.hpp"

namespace gatedkv {

struct AttnWeights {
  Tensor norm_gain;                // [1 x d]
  std::vector<Tensor> wq, wk, wv;  // per head: [d x head_dim], wv [d x value_dim]
  Tensor wo;                       // [heads*value_dim x d]
};

struct FfnWeights {
  Tensor norm_gain;  // [1 x d]
  Tensor w1;         // [d x 4d]
  Tensor w2;         // [4d x d]
};

struct LayerWeights {
  AttnWeights attn;
  FfnWeights ffn;
  GateWeights gate;  // empty on layers the variant leaves ungated
};

struct MhaOptions {
  // multiplied into the post-softmax attention of each head (gate routing)
  const std::vector<Tensor>* post_softmax_factors = nullptr;
  std::vector<Grid>* attention_out = nullptr;  // post-softmax, pre-factor
  std::vector<Tensor>* keys_out = nullptr;     // per head [n x head_dim]
  std::vector<Tensor>* values_out = nullptr;   // per head [n x value_dim]
};

// Masked multi-head attention for one layer: per-head Q/K/V projections,
// scaled scores, additive masking, softmax, value mix, output projection.
// masks carries one [n x n] grid per head.
Tensor mha_forward(const Tensor& x, const std::vector<Grid>& masks,
                   const AttnWeights& w, int head_dim, int value_dim,
                   const MhaOptions& opt = {});

enum class GateMode {
  kFromGate,     // flags from the configured gate variant
  kForcedFlags,  // caller-supplied hard flags per layer
  kAllOnes,      // ungated causal run
};

struct PrefillOptions {
  GateMode mode = GateMode::kFromGate;
  // per layer [n x num_heads] 0/1 grids, required for kForcedFlags
  const std::vector<Grid>* forced_flags = nullptr;
  bool collect_attention = false;
  bool keep_full_cache = false;
};

struct PrefillResult {
  Grid logits;                           // [n x vocab]
  std::vector<EvictionFlags> flags;      // per layer
  std::vector<std::vector<Grid>> masks;  // per layer, per head
  RetainedSets retained;                 // flag-retained plus recent band
  KVCache cache;                         // pruned to the retained sets
  std::optional<KVCache> full_cache;     // when keep_full_cache
  std::vector<std::vector<Grid>> attention;  // when collect_attention
  GateStats stats;
  long long live_pairs = 0;  // live (query,key) pairs the masks admitted
};

struct DecodeResult {
  std::vector<double> logits;
};

struct MaskedForward {
  Grid logits;
  long long live_pairs = 0;
};

// Record/replay context for gradient checking. The training forward freezes
// its discrete decisions (hard flags for masks, the straight-through shift)
// here on record; a replay forward reuses them so the loss becomes a smooth
// function of the parameters around the recorded point.
struct SteFreeze {
  bool replay = false;
  struct LayerRec {
    bool gated = false;
    std::vector<double> hard;   // [n x heads], mask source
    std::vector<double> shift;  // hard - soft at the recorded point
  };
  std::vector<LayerRec> layers;
};

struct TrainForward {
  Tensor total;  // lm_weight * lm + evict
  Tensor lm;
  Tensor evict;
  double mean_retention = 1.0;
  GateStats stats;
};

// Retention-target penalty evict_weight * |mean_gate - target_retention| on a
// scalar mean gate value; the absolute value takes subgradient 0 at the kink.
Tensor eviction_loss(const Tensor& mean_gate, const LossConfig& cfg);

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  void init_params(uint64_t seed);

  // Full-sequence forward with gating; no gradients. Returns logits at every
  // position plus the pruned cache ready for decode.
  PrefillResult prefill(std::span<const int> tokens,
                        const PrefillOptions& opts = {}) const;

  // Appends the new token to every head of every layer (eviction never
  // applies at decode) and returns next-token logits.
  DecodeResult decode_step(int token, KVCache& cache) const;

  // Forward under externally built masks (one [n x n] grid per layer/head).
  MaskedForward forward_masked(std::span<const int> tokens,
                               const std::vector<std::vector<Grid>>& masks) const;

  // Differentiable forward producing the combined training loss.
  TrainForward forward_train(std::span<const int> tokens,
                             std::span<const int> targets,
                             const LossConfig& loss,
                             SteFreeze* freeze = nullptr);

  void set_trainable(TrainableSet set);
  const std::vector<Tensor*>& trainable_params() const { return trainable_; }
  std::vector<std::pair<std::string, Tensor*>> named_params();
  void zero_grads();

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  const ModelConfig& config() const { return cfg_; }
  Tensor& embedding() { return embed_; }
  Tensor& position_embedding() { return pos_; }
  Tensor& final_norm() { return final_norm_; }
  LayerWeights& layer(int l) { return layers_.at(l); }
  const LayerWeights& layer(int l) const { return layers_.at(l); }
  bool layer_has_gate_module(int l) const;
  // true when the variant gates this layer at all (prev_layer skips early ones)
  bool layer_is_gated(int l) const;

 private:
  struct RunSpec {
    GateMode mode = GateMode::kAllOnes;
    const std::vector<Grid>* forced_flags = nullptr;
    const std::vector<std::vector<Grid>>* external_masks = nullptr;
    bool train_ste = false;
    SteFreeze* freeze = nullptr;
    bool collect_attention = false;
    bool collect_kv = false;
  };

  struct RunArtifacts {
    Tensor logits;
    std::vector<EvictionFlags> flags;
    std::vector<std::vector<Grid>> masks;
    std::vector<Tensor> ste_gates;  // defined only for gated layers in train mode
    std::vector<std::vector<Grid>> attention;
    std::vector<std::vector<Tensor>> keys, values;  // [layer][head]
    long long live_pairs = 0;
  };

  RunArtifacts run(std::span<const int> tokens, const RunSpec& spec) const;
  Tensor gate_scores_for_layer(int layer, const std::vector<Tensor>& layer_inputs) const;

  ModelConfig cfg_;
  int ffn_dim_ = 0;
  Tensor embed_;       // [vocab x d]
  Tensor pos_;         // [max_seq x d]
  Tensor final_norm_;  // [1 x d]
  std::vector<LayerWeights> layers_;
  std::vector<Tensor*> trainable_;
};

}  // namespace gatedkv
