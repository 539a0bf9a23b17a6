// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Verbs:
//   gen-corpus  write a synthetic training corpus and holdout
//   train       train a model from a JSON run config, save a checkpoint
//   eval        perplexity and cache accounting under one eviction policy
//   bench       all policies head-to-head at the gate's measured budget, CSV
//   viz         dump masks, attention maps, gate flags and cache contents
//
// Exit codes: 0 success, 2 configuration or usage error, 3 internal error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gatedkv/metrics.hpp"
#include "gatedkv/model.hpp"
#include "gatedkv/train.hpp"
#include "gatedkv/viz.hpp"

namespace {

using namespace gatedkv;

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("GATEDKV_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << text;
  os.flush();
  if (!os) throw ConfigError("write to '" + path + "' failed");
}

std::string fmt10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string metrics_csv(const TrainResult& res, int num_layers) {
  std::string out = "step,total,lm,evict,mean_retention";
  for (int l = 0; l < num_layers; ++l)
    out += ",evict_l" + std::to_string(l);
  out += '\n';
  for (const StepRow& r : res.history) {
    out += std::to_string(r.step);
    out += ',';
    out += fmt10(r.total);
    out += ',';
    out += fmt10(r.lm);
    out += ',';
    out += fmt10(r.evict);
    out += ',';
    out += fmt10(r.mean_retention);
    for (double e : r.per_layer_eviction) {
      out += ',';
      out += fmt10(e);
    }
    out += '\n';
  }
  return out;
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string corpus;
  std::vector<std::string> overrides;
  long long seed = -1;
  long long max_steps = -1;
};

int run_train(const TrainArgs& a) {
  RunConfig run = RunConfig::from_json_file(a.config_path);
  for (const std::string& kv : a.overrides) run.apply_override(kv);
  if (a.seed >= 0) run.train.seed = static_cast<uint64_t>(a.seed);
  if (!a.corpus.empty()) run.corpus_path = a.corpus;
  run.validate();
  if (run.corpus_path.empty())
    throw ConfigError("train: no corpus path (config corpus_path or --corpus)");

  std::cout << run.to_json() << "\n";
  const auto samples = load_samples(run.corpus_path, run.train.seq_len,
                                    run.model.vocab_size);

  Model model(run.model);
  model.init_params(run.train.seed);
  TrainResult res =
      train_model(model, samples, run.train, run.loss, a.max_steps);

  std::filesystem::create_directories(a.out_dir);
  const std::string ckpt = a.out_dir + "/model.ckpt";
  model.save_checkpoint(ckpt);
  write_text_file(a.out_dir + "/train_metrics.csv",
                  metrics_csv(res, run.model.num_layers));

  std::cout << "steps=" << res.steps << "\n"
            << "final_mean_retention=" << fmt10(res.final_mean_retention)
            << "\n"
            << "checkpoint=" << ckpt << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string policy = "ag";
  int seq_len = 64;
  int sinks = 4;
  int window = 0;
  int budget = 0;
};

int run_eval(const EvalArgs& a) {
  Model model = Model::load_checkpoint(a.checkpoint);
  const auto samples =
      load_samples(a.corpus, a.seq_len, model.config().vocab_size);

  PolicySpec policy;
  policy.kind = policy_kind_from_string(a.policy);
  policy.sink_count = a.sinks;
  policy.window = a.window;
  policy.budget = a.budget;
  policy.validate();

  EvalResult res = evaluate_policy(model, samples, policy);
  std::cout << "policy=" << to_string(policy.kind) << "\n"
            << "samples=" << res.samples << "\n"
            << "perplexity=" << fmt10(res.perplexity) << "\n"
            << "mean_retention=" << fmt10(res.mean_retention) << "\n"
            << "kv_bytes_pruned=" << fmt10(res.kv_bytes_pruned) << "\n"
            << "kv_bytes_full=" << fmt10(res.kv_bytes_full) << "\n"
            << "live_pairs=" << res.live_pairs << "\n";
  return 0;
}

struct BenchArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out = "bench.csv";
  std::string policies;
  int seq_len = 64;
  int sinks = 4;
};

int run_bench_cmd(const BenchArgs& a) {
  Model model = Model::load_checkpoint(a.checkpoint);
  const auto samples =
      load_samples(a.corpus, a.seq_len, model.config().vocab_size);
  std::vector<std::string> wanted;
  for (size_t pos = 0; pos < a.policies.size();) {
    const size_t comma = a.policies.find(',', pos);
    const size_t end = comma == std::string::npos ? a.policies.size() : comma;
    if (end > pos) wanted.push_back(a.policies.substr(pos, end - pos));
    pos = end + 1;
  }
  const auto rows = run_bench(model, samples, a.sinks, wanted);
  const std::string csv = bench_csv(rows);
  write_text_file(a.out, csv);
  std::cout << csv;

  // score-work summary at the gate's measured eviction level
  const ModelConfig& m = model.config();
  double ag_retention = 1.0;
  for (const BenchRow& r : rows)
    if (r.policy == "attention_gate") ag_retention = r.mean_retention;
  FlopsReport fl =
      flops_model(a.seq_len, m.num_heads, m.head_dim, m.gate_heads,
                  m.gate_head_dim, 100.0 * (1.0 - ag_retention));
  std::cout << "gate_macs=" << fmt10(fl.gate_macs) << "\n"
            << "full_macs=" << fmt10(fl.full_macs) << "\n"
            << "pruned_macs=" << fmt10(fl.pruned_macs) << "\n"
            << "net_macs=" << fmt10(fl.net_macs) << "\n";
  return 0;
}

struct VizArgs {
  std::string checkpoint;
  std::string corpus;
  std::string text;
  std::string out_dir = "viz";
  int seq_len = 64;
};

int run_viz(const VizArgs& a) {
  Model model = Model::load_checkpoint(a.checkpoint);

  std::vector<int> tokens;
  if (!a.text.empty()) {
    for (char c : a.text) tokens.push_back(static_cast<unsigned char>(c));
    if (static_cast<int>(tokens.size()) > model.config().max_seq)
      throw ConfigError("viz: --text longer than max_seq");
  } else if (!a.corpus.empty()) {
    const auto samples =
        load_samples(a.corpus, a.seq_len, model.config().vocab_size);
    tokens = samples[0].tokens;
  } else {
    throw ConfigError("viz: need --text or --corpus");
  }

  PrefillOptions opts;
  opts.collect_attention = true;
  PrefillResult pre = model.prefill(tokens, opts);

  std::filesystem::create_directories(a.out_dir);
  write_mask_pgms(a.out_dir + "/mask", pre.masks);
  write_attention_pgms(a.out_dir + "/attn", pre.attention);
  write_flags_csv(a.out_dir + "/flags.csv", pre.flags);
  write_cache_csv(a.out_dir + "/cache.csv", pre.cache);

  std::cout << "tokens=" << tokens.size() << "\n"
            << "mean_retention=" << fmt10(pre.stats.mean_retention) << "\n"
            << "cache_entries=" << pre.cache.total_entries() << "\n"
            << "out_dir=" << a.out_dir << "\n";
  return 0;
}

struct GenArgs {
  std::string out = "corpus.txt";
  std::string holdout = "holdout.txt";
  long long seed = 7;
  long long bytes = 1 << 16;
};

int run_gen(const GenArgs& a) {
  if (a.bytes <= 0) throw ConfigError("gen-corpus: --bytes must be positive");
  write_synth_corpus(a.out, a.holdout, static_cast<uint64_t>(a.seed),
                     static_cast<size_t>(a.bytes),
                     static_cast<size_t>(a.bytes / 4 + 1));
  std::cout << "corpus=" << a.out << "\n"
            << "holdout=" << a.holdout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();

  CLI::App app{"KV-cache eviction workbench"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train from a JSON config");
  train->add_option("--config", train_args.config_path, "run config JSON")
      ->required();
  train->add_option("--out", train_args.out_dir, "output directory");
  train->add_option("--corpus", train_args.corpus, "corpus path override");
  train->add_option("--seed", train_args.seed, "seed override");
  train->add_option("--max-steps", train_args.max_steps,
                    "stop after this many optimizer steps");
  train->add_option("--override", train_args.overrides,
                    "dotted config override, e.g. model.gate_threshold=0.3");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate under a policy");
  eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")
      ->required();
  eval->add_option("--corpus", eval_args.corpus, "evaluation text")->required();
  eval->add_option("--policy", eval_args.policy,
                   "none|ag|attention_gate|local|streaming_llm|h2o");
  eval->add_option("--seq-len", eval_args.seq_len, "window length");
  eval->add_option("--sinks", eval_args.sinks, "streaming_llm prefix size");
  eval->add_option("--window", eval_args.window, "trailing window");
  eval->add_option("--budget", eval_args.budget, "h2o retained per head");

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "compare policies, write CSV");
  bench->add_option("--checkpoint", bench_args.checkpoint, "model checkpoint")
      ->required();
  bench->add_option("--corpus", bench_args.corpus, "evaluation text")
      ->required();
  bench->add_option("--out", bench_args.out, "CSV output path");
  bench->add_option("--policy", bench_args.policies,
                    "comma-separated policy names (default: all)");
  bench->add_option("--seq-len", bench_args.seq_len, "window length");
  bench->add_option("--sinks", bench_args.sinks, "streaming_llm prefix size");

  VizArgs viz_args;
  CLI::App* viz = app.add_subcommand("viz", "dump masks and attention");
  viz->add_option("--checkpoint", viz_args.checkpoint, "model checkpoint")
      ->required();
  viz->add_option("--corpus", viz_args.corpus, "take the first window of this file");
  viz->add_option("--text", viz_args.text, "literal prompt text");
  viz->add_option("--seq-len", viz_args.seq_len, "window length for --corpus");
  viz->add_option("--out", viz_args.out_dir, "output directory");

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-corpus", "write synthetic text");
  gen->add_option("--out", gen_args.out, "corpus path");
  gen->add_option("--holdout", gen_args.holdout, "holdout path");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--bytes", gen_args.bytes, "corpus size in bytes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(train_args);
    if (*eval) return run_eval(eval_args);
    if (*bench) return run_bench_cmd(bench_args);
    if (*viz) return run_viz(viz_args);
    if (*gen) return run_gen(gen_args);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
