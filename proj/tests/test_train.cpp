// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Data loading, the optimizer, and training dynamics on small models:
// reproducibility, parameter freezing, retention drift without pressure,
// and convergence toward the retention target under pure gate pressure.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/config.hpp"
#include "gatedkv/model.hpp"
#include "gatedkv/train.hpp"

using namespace gatedkv;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& p, const std::string& bytes) : path(p) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

ModelConfig drift_config() {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.head_dim = 8;
  cfg.value_dim = 8;
  cfg.gate_heads = 1;
  cfg.gate_head_dim = 8;
  cfg.max_seq = 32;
  return cfg;
}

std::vector<Sample> drift_samples(const std::string& tag, int seq_len) {
  const std::string corpus = "corpus_" + tag + ".txt";
  const std::string holdout = "holdout_" + tag + ".txt";
  write_synth_corpus(corpus, holdout, 99, 16384, 2048);
  auto samples = load_samples(corpus, seq_len, 256);
  std::remove(corpus.c_str());
  std::remove(holdout.c_str());
  return samples;
}

std::vector<std::vector<double>> snapshot_params(Model& m) {
  std::vector<std::vector<double>> out;
  for (auto& [name, p] : m.named_params()) out.push_back(p->values());
  return out;
}

}  // namespace

TEST_CASE("three bytes make one shifted window") {
  TempFile f("samples_abc.txt", "abc");
  auto samples = load_samples(f.path, 2, 256);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].tokens == std::vector<int>{'a', 'b'});
  CHECK(samples[0].targets == std::vector<int>{'b', 'c'});
}

TEST_CASE("window count and byte round-trip") {
  std::string text;
  for (int i = 0; i < 100; ++i) text.push_back(static_cast<char>('A' + i % 26));
  TempFile f("samples_100.txt", text);
  const int seq_len = 8;
  auto samples = load_samples(f.path, seq_len, 256);
  CHECK(samples.size() == (100 - 1) / seq_len);
  for (size_t s = 0; s < samples.size(); ++s)
    for (int i = 0; i < seq_len; ++i) {
      CHECK(samples[s].tokens[i] == text[s * seq_len + i]);
      CHECK(samples[s].targets[i] == text[s * seq_len + i + 1]);
    }
}

TEST_CASE("loader failure modes") {
  CHECK_THROWS_AS(load_samples("no_such_file_anywhere.txt", 8, 256), ConfigError);
  TempFile empty("samples_empty.txt", "");
  CHECK_THROWS_AS(load_samples(empty.path, 8, 256), ConfigError);
  TempFile tiny("samples_tiny.txt", "ab");
  CHECK_THROWS_AS(load_samples(tiny.path, 8, 256), ConfigError);
  std::string high = "abcdefgh";
  high.push_back(static_cast<char>(0xC8));  // byte 200
  TempFile oov("samples_oov.txt", high);
  CHECK_THROWS_AS(load_samples(oov.path, 4, 128), ConfigError);
}

TEST_CASE("synthetic corpus is deterministic and sized exactly") {
  const std::string a = synth_corpus_text(7, 4096);
  const std::string b = synth_corpus_text(7, 4096);
  const std::string c = synth_corpus_text(8, 4096);
  CHECK(a.size() == 4096);
  CHECK(a == b);
  CHECK(a != c);
  for (unsigned char ch : a) CHECK(ch < 128);

  write_synth_corpus("gen_c.txt", "gen_h.txt", 7, 4096, 512);
  std::ifstream fc("gen_c.txt", std::ios::binary);
  std::string cc((std::istreambuf_iterator<char>(fc)), std::istreambuf_iterator<char>());
  CHECK(cc.size() == 4096);
  CHECK(cc == a);
  std::ifstream fh("gen_h.txt", std::ios::binary);
  std::string hh((std::istreambuf_iterator<char>(fh)), std::istreambuf_iterator<char>());
  CHECK(hh.size() == 512);
  CHECK(hh != cc.substr(0, 512));  // holdout continues the stream, not a copy
  std::remove("gen_c.txt");
  std::remove("gen_h.txt");
}

TEST_CASE("optimizer first step matches the hand-derived update") {
  Tensor w = Tensor::from_values(1, 1, {2.0});
  w.set_requires_grad(true);
  Tensor loss = scale(w, 3.0);  // gradient is exactly 3
  backward(loss);
  const double lr = 0.1, wd = 0.01, g = 3.0;
  AdamW opt({&w}, lr, wd);
  opt.step();
  const double mhat = g;       // bias correction cancels on step one
  const double vhat = g * g;
  const double want = 2.0 - lr * (mhat / (std::sqrt(vhat) + 1e-8) + wd * 2.0);
  CHECK(w.values()[0] == doctest::Approx(want).epsilon(1e-14));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("gate-only training never touches the backbone") {
  ModelConfig cfg = drift_config();
  Model model(cfg);
  model.init_params(4);
  auto samples = drift_samples("freeze", 16);
  samples.resize(8);
  auto before = snapshot_params(model);
  auto names = model.named_params();

  TrainSpec spec;
  spec.seq_len = 16;
  spec.batch_size = 4;
  spec.epochs = 1;
  spec.trainable_set = TrainableSet::kAgOnly;
  LossConfig loss;
  train_model(model, samples, spec, loss, 2);

  bool some_gate_param_moved = false;
  for (size_t i = 0; i < names.size(); ++i) {
    const bool is_gate = names[i].first.find("gate.") != std::string::npos;
    const Tensor* p = names[i].second;
    const bool same = before[i] == p->values();
    if (is_gate) {
      if (!same) some_gate_param_moved = true;
    } else {
      INFO("moved: ", names[i].first);
      CHECK(same);
    }
  }
  CHECK(some_gate_param_moved);
}

TEST_CASE("identical seeds give identical parameters and identical training") {
  ModelConfig cfg = drift_config();
  Model a(cfg), b(cfg);
  a.init_params(10);
  b.init_params(10);
  auto pa = a.named_params();
  auto pb = b.named_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].second->values() == pb[i].second->values());

  auto samples = drift_samples("repro", 16);
  samples.resize(32);
  TrainSpec spec;
  spec.seq_len = 16;
  spec.batch_size = 4;
  spec.epochs = 1;
  LossConfig loss;
  TrainResult ra = train_model(a, samples, spec, loss, 5);
  TrainResult rb = train_model(b, samples, spec, loss, 5);
  REQUIRE(ra.history.size() == rb.history.size());
  for (size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].total == rb.history[i].total);
    CHECK(ra.history[i].mean_retention == rb.history[i].mean_retention);
  }
}

TEST_CASE("training aborts on the first non-finite loss") {
  ModelConfig cfg = drift_config();
  Model model(cfg);
  model.init_params(6);
  auto samples = drift_samples("nan", 16);
  samples.resize(4);
  // poison the output-side normalization gain: it sits past every attention
  // softmax, so the NaN reaches the loss instead of tripping a mask guard
  for (auto& [name, p] : model.named_params()) {
    if (name != "final_norm") continue;
    for (size_t i = 0; i < p->numel(); ++i)
      p->mutable_values()[i] = std::nan("");
  }
  TrainSpec spec;
  spec.seq_len = 16;
  spec.batch_size = 4;
  LossConfig loss;
  try {
    train_model(model, samples, spec, loss, 2);
    FAIL("expected the non-finite abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("initialization: uniform fan bounds hit, normalization gains at one") {
  ModelConfig cfg;  // default desk-scale shape
  Model model(cfg);
  model.init_params(12);
  for (auto& [name, p] : model.named_params()) {
    if (name.find("norm") != std::string::npos) {
      for (size_t i = 0; i < p->numel(); ++i) CHECK(p->values()[i] == 1.0);
      continue;
    }
    const double bound = std::sqrt(6.0 / (p->rows() + p->cols()));
    double mx = 0.0;
    for (size_t i = 0; i < p->numel(); ++i) {
      CHECK(std::fabs(p->values()[i]) <= bound);
      mx = std::max(mx, std::fabs(p->values()[i]));
    }
    if (p->numel() >= 256) CHECK(mx > 0.9 * bound);
  }
}

TEST_CASE("fresh models with offset 2 start near full retention") {
  ModelConfig cfg;  // gate_logit_offset defaults to 2
  Model model(cfg);
  model.init_params(14);
  Rng rng(90);
  double acc = 0.0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    std::vector<int> tokens(24);
    for (int& t : tokens) t = rng.uniform_int(cfg.vocab_size);
    acc += model.prefill(tokens).stats.mean_retention;
  }
  const double mean = acc / trials;
  MESSAGE("mean initial retention at offset 2: ", mean);
  CHECK(mean >= 0.75);

  // the no-offset low-threshold setting typically starts high too; report it
  ModelConfig sft = cfg;
  sft.gate_logit_offset = 0.0;
  sft.gate_threshold = 0.3;
  Model msft(sft);
  msft.init_params(14);
  double acc2 = 0.0;
  for (int i = 0; i < trials; ++i) {
    std::vector<int> tokens(24);
    for (int& t : tokens) t = rng.uniform_int(cfg.vocab_size);
    acc2 += msft.prefill(tokens).stats.mean_retention;
  }
  MESSAGE("mean initial retention at offset 0, threshold 0.3: ", acc2 / trials);
}

TEST_CASE("loss gradients are additive across the two terms") {
  ModelConfig cfg = drift_config();
  Model model(cfg);
  model.init_params(16);
  std::vector<int> tokens = {10, 20, 30, 40, 50, 60, 70, 80};
  std::vector<int> targets = {20, 30, 40, 50, 60, 70, 80, 90};
  LossConfig loss;

  model.zero_grads();
  TrainForward f1 = model.forward_train(tokens, targets, loss);
  backward(f1.total);
  std::vector<std::vector<double>> g_total;
  for (Tensor* p : model.trainable_params())
    g_total.emplace_back(p->grad().begin(), p->grad().end());

  model.zero_grads();
  TrainForward f2 = model.forward_train(tokens, targets, loss);
  backward(f2.lm);
  std::vector<std::vector<double>> g_lm;
  for (Tensor* p : model.trainable_params())
    g_lm.emplace_back(p->grad().begin(), p->grad().end());

  model.zero_grads();
  TrainForward f3 = model.forward_train(tokens, targets, loss);
  backward(f3.evict);
  std::vector<std::vector<double>> g_ev;
  for (Tensor* p : model.trainable_params())
    g_ev.emplace_back(p->grad().begin(), p->grad().end());

  for (size_t i = 0; i < g_total.size(); ++i)
    for (size_t j = 0; j < g_total[i].size(); ++j)
      CHECK(g_total[i][j] ==
            doctest::Approx(loss.lm_weight * g_lm[i][j] + g_ev[i][j]).epsilon(1e-10));
}

TEST_CASE("retention barely drifts when the penalty is off") {
  ModelConfig cfg = drift_config();
  Model model(cfg);
  model.init_params(18);
  auto samples = drift_samples("drift", 16);
  TrainSpec spec;
  spec.seq_len = 16;
  spec.batch_size = 2;
  spec.learning_rate = 1e-4;
  spec.epochs = 100;
  LossConfig loss;
  loss.evict_weight = 0.0;
  TrainResult res = train_model(model, samples, spec, loss, 500);
  REQUIRE(res.history.size() == 500);
  const double drift =
      std::fabs(res.history.back().mean_retention - res.history.front().mean_retention);
  MESSAGE("retention drift over 500 unpressured steps: ", drift);
  // the gate still sees language-model gradient through the attention
  // multiplier, so some motion is expected; collapse toward the target
  // band (a ~0.5 move under pressure) is what this rules out
  CHECK(drift <= 0.15);
}

TEST_CASE("pure retention pressure pulls the mean toward the target") {
  ModelConfig cfg = drift_config();
  Model model(cfg);
  model.init_params(20);
  auto samples = drift_samples("pull", 16);
  TrainSpec spec;
  spec.seq_len = 16;
  spec.batch_size = 2;
  spec.learning_rate = 1e-3;
  spec.epochs = 100;
  LossConfig loss;
  loss.lm_weight = 0.0;
  loss.evict_weight = 5.0;
  loss.target_retention = 0.4;
  TrainResult res = train_model(model, samples, spec, loss, 500);
  REQUIRE(res.history.size() == 500);

  CHECK(std::fabs(res.history.back().mean_retention - loss.target_retention) <= 0.05);

  // distance to target, averaged in 50-step blocks, must not climb
  std::vector<double> ma;
  for (size_t start = 0; start + 50 <= res.history.size(); start += 50) {
    double s = 0.0;
    for (size_t i = start; i < start + 50; ++i)
      s += std::fabs(res.history[i].mean_retention - loss.target_retention);
    ma.push_back(s / 50.0);
  }
  for (size_t k = 1; k < ma.size(); ++k) CHECK(ma[k] <= ma[k - 1] + 0.01);
}
