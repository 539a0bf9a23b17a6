// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gatedkv/config.hpp"
#include "gatedkv/model.hpp"

namespace gatedkv {

// One training window: seq_len byte tokens plus the next-byte targets.
struct Sample {
  std::vector<int> tokens;
  std::vector<int> targets;
};

// Cuts a byte file into non-overlapping seq_len windows with one-step-shifted
// targets. Throws ConfigError for a missing, empty or too-short file, or when
// a byte falls outside the vocabulary.
std::vector<Sample> load_samples(const std::string& path, int seq_len,
                                 int vocab_size);

// Deterministic synthetic text: a seeded word pool arranged into sentences,
// each sentence echoed a few times, with occasional digit bursts in between.
// The repetition gives eviction something real to discard.
std::string synth_corpus_text(uint64_t seed, size_t bytes);

// Writes a training corpus and a holdout drawn from the same word pool and
// generator stream.
void write_synth_corpus(const std::string& corpus_path,
                        const std::string& holdout_path, uint64_t seed,
                        size_t corpus_bytes, size_t holdout_bytes);

// Decoupled-weight-decay Adam over the handed parameter list, reading each
// parameter's accumulated gradient. Moments live here, keyed by list order.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, double lr, double weight_decay);

  void step();
  long long steps_taken() const { return t_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Tensor*> params_;
  std::vector<Slot> slots_;
  double lr_;
  double wd_;
  long long t_ = 0;
};

// Per-optimizer-step record, averaged over the step's batch.
struct StepRow {
  long long step = 0;
  double total = 0.0;
  double lm = 0.0;
  double evict = 0.0;
  double mean_retention = 1.0;
  std::vector<double> per_layer_eviction;
};

struct TrainResult {
  std::vector<StepRow> history;
  long long steps = 0;
  double final_mean_retention = 1.0;
};

// Runs spec.epochs over the samples in a seeded shuffled order, one optimizer
// step per batch of spec.batch_size windows (gradients averaged across the
// batch). Aborts with std::runtime_error the moment a loss goes non-finite.
// max_steps >= 0 stops after that many optimizer steps regardless of epochs.
TrainResult train_model(Model& model, const std::vector<Sample>& samples,
                        const TrainSpec& spec, const LossConfig& loss,
                        long long max_steps = -1);

}  // namespace gatedkv
