// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "gatedkv/common.hpp"

namespace gatedkv {

enum class GateVariant { kMhaGate, kLinearGate, kPrevLayerGate };

std::string to_string(GateVariant v);
GateVariant gate_variant_from_string(const std::string& s);

// Architecture plus gating knobs. Defaults are the desk-scale configuration
// every test starts from.
struct ModelConfig {
  int vocab_size = 256;  // byte-level
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int head_dim = 16;
  int value_dim = 16;
  int gate_heads = 2;     // scorer heads, must stay below num_heads
  int gate_head_dim = 16;
  double gate_threshold = 0.5;    // sigmoid cutoff; strictly-above retains
  double gate_logit_offset = 2.0; // added inside the sigmoid, not a parameter
  GateVariant gate_variant = GateVariant::kMhaGate;
  int gate_start_layer = 0;  // first gated layer for prev_layer_gate
  int recent_window = 0;     // always-retained trailing band, 0 disables
  int max_seq = 128;

  void validate() const;
};

// Loss mix. evict_weight scales the retention penalty; target_retention is
// the mean gate output the penalty pulls toward.
struct LossConfig {
  double evict_weight = 5.0;
  double target_retention = 0.4;
  double lm_weight = 1.0;

  void validate(const ModelConfig& model) const;
};

enum class TrainableSet { kAgOnly, kAgPlusAttentionProjections };

std::string to_string(TrainableSet t);
TrainableSet trainable_set_from_string(const std::string& s);

struct TrainSpec {
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  int seq_len = 64;
  double weight_decay = 0.01;
  uint64_t seed = 1;
  TrainableSet trainable_set = TrainableSet::kAgPlusAttentionProjections;

  void validate(const ModelConfig& model) const;
};

enum class PolicyKind { kAttentionGate, kStreamingLlm, kH2o, kLocal, kNone };

std::string to_string(PolicyKind k);
PolicyKind policy_kind_from_string(const std::string& s);

// Eviction policy selection plus its position/budget parameters. Which fields
// matter depends on the kind; validate() enforces the combination.
struct PolicySpec {
  PolicyKind kind = PolicyKind::kNone;
  int sink_count = 4;  // streaming_llm: always-kept prefix
  int window = 0;      // streaming_llm/local: trailing kept band; h2o: forced recents
  int budget = 0;      // h2o: total retained per head

  void validate() const;
};

// Aggregate of everything a run needs; mirrors the JSON config file layout.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainSpec train;
  std::string corpus_path;
  std::string holdout_path;

  void validate() const;

  std::string to_json() const;  // pretty-printed, stable key order
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);

  // Applies one dotted override like "model.gate_threshold=0.3".
  void apply_override(const std::string& key_eq_value);
};

std::string model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json_text(const std::string& text);

}  // namespace gatedkv
