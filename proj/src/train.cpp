// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace gatedkv {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::vector<std::string> make_word_pool(Rng& rng) {
  static const char kConsonants[] = "bcdfghjklmnpqrstvw";
  static const char kVowels[] = "aeiou";
  std::vector<std::string> pool;
  pool.reserve(48);
  for (int i = 0; i < 48; ++i) {
    std::string w;
    const int syllables = 1 + rng.uniform_int(3);
    for (int s = 0; s < syllables; ++s) {
      w += kConsonants[rng.uniform_int(18)];
      w += kVowels[rng.uniform_int(5)];
    }
    pool.push_back(std::move(w));
  }
  return pool;
}

std::string gen_text(Rng& rng, const std::vector<std::string>& pool,
                     size_t bytes) {
  std::string out;
  out.reserve(bytes + 256);
  while (out.size() < bytes) {
    std::string sentence;
    const int words = 4 + rng.uniform_int(6);
    for (int i = 0; i < words; ++i) {
      sentence += pool[rng.uniform_int(static_cast<int>(pool.size()))];
      sentence += (i + 1 == words) ? '.' : ' ';
    }
    const int repeats = 2 + rng.uniform_int(4);
    for (int r = 0; r < repeats; ++r) {
      out += sentence;
      out += ' ';
    }
    if (rng.uniform() < 0.15) {
      const int burst = 8 + rng.uniform_int(24);
      for (int i = 0; i < burst; ++i)
        out += static_cast<char>('0' + rng.uniform_int(10));
      out += ' ';
    }
    out += '\n';
  }
  out.resize(bytes);
  return out;
}

}  // namespace

std::vector<Sample> load_samples(const std::string& path, int seq_len,
                                 int vocab_size) {
  check(seq_len > 0, "load_samples: seq_len must be positive");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("corpus: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string data = buf.str();
  if (data.empty()) throw ConfigError("corpus: '" + path + "' is empty");
  const long long n = static_cast<long long>(data.size());
  const long long windows = (n - 1) / seq_len;
  if (windows == 0)
    throw ConfigError("corpus: '" + path + "' holds " + std::to_string(n) +
                      " bytes, need at least " + std::to_string(seq_len + 1) +
                      " for one window of " + std::to_string(seq_len));

  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(windows));
  for (long long w = 0; w < windows; ++w) {
    Sample s;
    s.tokens.resize(seq_len);
    s.targets.resize(seq_len);
    for (int i = 0; i < seq_len; ++i) {
      const long long base = w * seq_len + i;
      const int tok = static_cast<unsigned char>(data[base]);
      const int tgt = static_cast<unsigned char>(data[base + 1]);
      if (tok >= vocab_size || tgt >= vocab_size)
        throw ConfigError("corpus: byte " + std::to_string(std::max(tok, tgt)) +
                          " at offset " + std::to_string(base) +
                          " exceeds vocab_size " + std::to_string(vocab_size));
      s.tokens[i] = tok;
      s.targets[i] = tgt;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string synth_corpus_text(uint64_t seed, size_t bytes) {
  Rng rng(seed);
  const auto pool = make_word_pool(rng);
  return gen_text(rng, pool, bytes);
}

void write_synth_corpus(const std::string& corpus_path,
                        const std::string& holdout_path, uint64_t seed,
                        size_t corpus_bytes, size_t holdout_bytes) {
  Rng rng(seed);
  const auto pool = make_word_pool(rng);
  const std::string corpus = gen_text(rng, pool, corpus_bytes);
  const std::string holdout = gen_text(rng, pool, holdout_bytes);

  std::ofstream cs(corpus_path, std::ios::binary | std::ios::trunc);
  if (!cs) throw ConfigError("corpus: cannot write '" + corpus_path + "'");
  cs << corpus;
  cs.flush();
  if (!cs) throw ConfigError("corpus: write to '" + corpus_path + "' failed");

  std::ofstream hs(holdout_path, std::ios::binary | std::ios::trunc);
  if (!hs) throw ConfigError("corpus: cannot write '" + holdout_path + "'");
  hs << holdout;
  hs.flush();
  if (!hs) throw ConfigError("corpus: write to '" + holdout_path + "' failed");
}

AdamW::AdamW(std::vector<Tensor*> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
  slots_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    slots_[i].m.assign(params_[i]->numel(), 0.0);
    slots_[i].v.assign(params_[i]->numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const std::vector<double>& g = p.grad();
    std::vector<double>& w = p.mutable_values();
    Slot& s = slots_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      s.m[j] = kBeta1 * s.m[j] + (1.0 - kBeta1) * g[j];
      s.v[j] = kBeta2 * s.v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = s.m[j] / bc1;
      const double vhat = s.v[j] / bc2;
      w[j] -= lr_ * (mhat / (std::sqrt(vhat) + kAdamEps) + wd_ * w[j]);
    }
  }
}

TrainResult train_model(Model& model, const std::vector<Sample>& samples,
                        const TrainSpec& spec, const LossConfig& loss,
                        long long max_steps) {
  check(!samples.empty(), "train: no samples");
  spec.validate(model.config());
  loss.validate(model.config());

  model.set_trainable(spec.trainable_set);
  AdamW opt(model.trainable_params(), spec.learning_rate, spec.weight_decay);
  Rng shuffle_rng(spec.seed);

  TrainResult res;
  const int num_layers = model.config().num_layers;
  bool done = false;
  for (int epoch = 0; epoch < spec.epochs && !done; ++epoch) {
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);

    for (size_t start = 0; start < order.size(); start += spec.batch_size) {
      if (max_steps >= 0 && opt.steps_taken() >= max_steps) {
        done = true;
        break;
      }
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(spec.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);

      model.zero_grads();
      StepRow row;
      row.mean_retention = 0.0;
      row.per_layer_eviction.assign(num_layers, 0.0);
      for (size_t b = start; b < stop; ++b) {
        const Sample& s = samples[order[b]];
        TrainForward fwd = model.forward_train(s.tokens, s.targets, loss);
        const double total = fwd.total.item();
        if (!std::isfinite(total))
          throw std::runtime_error(
              "training aborted at step " +
              std::to_string(opt.steps_taken() + 1) + ": loss is not finite");
        backward(scale(fwd.total, inv_batch));
        row.total += total * inv_batch;
        row.lm += fwd.lm.item() * inv_batch;
        row.evict += fwd.evict.item() * inv_batch;
        row.mean_retention += fwd.mean_retention * inv_batch;
        for (int l = 0; l < num_layers; ++l)
          row.per_layer_eviction[l] +=
              fwd.stats.per_layer_eviction[l] * inv_batch;
      }
      opt.step();
      row.step = opt.steps_taken();
      res.history.push_back(std::move(row));
    }
  }
  res.steps = opt.steps_taken();
  if (!res.history.empty())
    res.final_mean_retention = res.history.back().mean_retention;
  return res;
}

}  // namespace gatedkv
