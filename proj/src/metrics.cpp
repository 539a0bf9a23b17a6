// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gatedkv/kv_cache.hpp"

namespace gatedkv {

namespace {

std::string fmt10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

FlopsReport flops_model(long long n, int num_heads, int head_dim,
                        int gate_heads, int gate_head_dim,
                        double evict_percent) {
  check(n > 0, "flops_model: n must be positive");
  check(num_heads > 0 && head_dim > 0,
        "flops_model: attention dimensions must be positive");
  check(gate_heads >= 0 && gate_head_dim >= 0,
        "flops_model: scorer dimensions must be non-negative");
  check(evict_percent >= 0.0 && evict_percent <= 100.0,
        "flops_model: evict_percent outside [0, 100]");

  FlopsReport r;
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  r.gate_macs = n2 * gate_heads * gate_head_dim;
  r.full_macs = n2 * num_heads * head_dim;
  r.pruned_macs = r.full_macs * (100.0 - evict_percent) / 100.0;
  r.combined_macs = std::max(r.gate_macs, r.pruned_macs);
  r.net_macs = r.gate_macs + r.pruned_macs - r.full_macs;
  r.gate_macs_x100 = std::llround(r.gate_macs * 100.0);
  r.full_macs_x100 = std::llround(r.full_macs * 100.0);
  r.pruned_macs_x100 = std::llround(r.full_macs * (100.0 - evict_percent));
  r.combined_macs_x100 = std::max(r.gate_macs_x100, r.pruned_macs_x100);
  r.net_macs_x100 = r.gate_macs_x100 + r.pruned_macs_x100 - r.full_macs_x100;
  return r;
}

long long live_pairs_from_masks(const std::vector<std::vector<Grid>>& masks) {
  long long c = 0;
  for (const auto& layer : masks)
    for (const Grid& m : layer)
      for (int j = 0; j < m.rows; ++j)
        for (int t = 0; t <= j && t < m.cols; ++t)
          if (m.at(j, t) != 0.0) ++c;
  return c;
}

long long live_pairs_from_flags(const std::vector<EvictionFlags>& flags,
                                int recent_window) {
  long long c = 0;
  for (const EvictionFlags& f : flags) {
    const int n = f.hard.rows;
    const int heads = f.hard.cols;
    for (int h = 0; h < heads; ++h)
      for (int j = 0; j < n; ++j)
        for (int t = 0; t <= j; ++t) {
          const bool live = t == j ||
                            (recent_window > 0 && t >= j - recent_window) ||
                            f.hard.at(t, h) != 0.0;
          if (live) ++c;
        }
  }
  return c;
}

double mean_nll(const Grid& logits, std::span<const int> targets) {
  check(logits.rows == static_cast<int>(targets.size()),
        "mean_nll: " + std::to_string(logits.rows) + " rows vs " +
            std::to_string(targets.size()) + " targets");
  double total = 0.0;
  for (int r = 0; r < logits.rows; ++r) {
    check(targets[r] >= 0 && targets[r] < logits.cols,
          "mean_nll: target " + std::to_string(targets[r]) + " outside vocab");
    double mx = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, logits.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c)
      sum += std::exp(logits.at(r, c) - mx);
    total += mx + std::log(sum) - logits.at(r, targets[r]);
  }
  return total / static_cast<double>(logits.rows);
}

EvalResult evaluate_policy(const Model& model,
                           const std::vector<Sample>& samples,
                           const PolicySpec& policy) {
  check(!samples.empty(), "evaluate_policy: no samples");
  policy.validate();
  const ModelConfig& cfg = model.config();
  const int L = cfg.num_layers;
  const int H = cfg.num_heads;
  const double entry_bytes =
      static_cast<double>(cfg.head_dim + cfg.value_dim) * sizeof(double);

  EvalResult res;
  double nll_total = 0.0;
  long long nll_positions = 0;
  double kept_frac = 0.0;

  for (const Sample& s : samples) {
    const int n = static_cast<int>(s.tokens.size());
    Grid logits;
    long long pairs = 0;
    double kept_entries = 0.0;  // summed over layers and heads

    if (policy.kind == PolicyKind::kAttentionGate) {
      PrefillResult pre = model.prefill(s.tokens);
      logits = std::move(pre.logits);
      pairs = pre.live_pairs;
      for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h)
          kept_entries += static_cast<double>(pre.retained[l][h].size());
    } else if (policy.kind == PolicyKind::kNone) {
      PrefillOptions opts;
      opts.mode = GateMode::kAllOnes;
      PrefillResult pre = model.prefill(s.tokens, opts);
      logits = std::move(pre.logits);
      pairs = pre.live_pairs;
      kept_entries = static_cast<double>(L) * H * n;
    } else {
      // retained sets per layer/head, then a masked forward over them
      std::vector<std::vector<std::vector<int>>> retained(L);
      if (policy.kind == PolicyKind::kH2o) {
        PrefillOptions opts;
        opts.mode = GateMode::kAllOnes;
        opts.collect_attention = true;
        PrefillResult pre = model.prefill(s.tokens, opts);
        for (int l = 0; l < L; ++l)
          retained[l] = apply_h2o(pre.attention[l], policy.budget, policy.window);
      } else {
        std::vector<int> set =
            policy.kind == PolicyKind::kLocal
                ? apply_local(n, policy.window)
                : apply_streaming_llm(n, policy.sink_count, policy.window);
        for (int l = 0; l < L; ++l)
          retained[l].assign(H, set);
      }
      std::vector<std::vector<Grid>> masks(L);
      for (int l = 0; l < L; ++l) {
        masks[l] = masks_from_retained(n, retained[l]);
        for (int h = 0; h < H; ++h)
          kept_entries += static_cast<double>(retained[l][h].size());
      }
      MaskedForward fwd = model.forward_masked(s.tokens, masks);
      logits = std::move(fwd.logits);
      pairs = fwd.live_pairs;
    }

    nll_total += mean_nll(logits, s.targets) * n;
    nll_positions += n;
    res.live_pairs += pairs;
    kept_frac += kept_entries / (static_cast<double>(L) * H * n);
    res.kv_bytes_full += static_cast<double>(L) * H * n * entry_bytes;
    res.kv_bytes_pruned += kept_entries * entry_bytes;
  }

  const double ns = static_cast<double>(samples.size());
  res.perplexity = std::exp(nll_total / static_cast<double>(nll_positions));
  res.mean_retention = kept_frac / ns;
  res.kv_bytes_full /= ns;
  res.kv_bytes_pruned /= ns;
  res.samples = static_cast<long long>(samples.size());
  return res;
}

std::vector<BenchRow> run_bench(const Model& model,
                                const std::vector<Sample>& samples,
                                int streaming_sinks,
                                const std::vector<std::string>& policies) {
  check(!samples.empty(), "run_bench: no samples");
  const int n = static_cast<int>(samples[0].tokens.size());
  const std::vector<std::string> wanted =
      policies.empty() ? std::vector<std::string>{"none", "attention_gate",
                                                  "local", "streaming_llm",
                                                  "h2o"}
                       : policies;
  for (const std::string& name : wanted)
    policy_kind_from_string(name);  // reject unknown names up front

  auto to_row = [](const std::string& name, const EvalResult& e) {
    BenchRow r;
    r.policy = name;
    r.perplexity = e.perplexity;
    r.mean_retention = e.mean_retention;
    r.kv_bytes_pruned = e.kv_bytes_pruned;
    r.kv_bytes_full = e.kv_bytes_full;
    r.live_pairs = e.live_pairs;
    return r;
  };

  // every baseline gets the per-head budget the gate actually used
  PolicySpec ag;
  ag.kind = PolicyKind::kAttentionGate;
  const EvalResult ag_res = evaluate_policy(model, samples, ag);
  const int budget = static_cast<int>(std::clamp<long long>(
      std::llround(ag_res.mean_retention * n), 1, n));

  std::vector<BenchRow> rows;
  for (const std::string& name : wanted) {
    PolicySpec p;
    p.kind = policy_kind_from_string(name);
    switch (p.kind) {
      case PolicyKind::kNone:
        break;
      case PolicyKind::kAttentionGate:
        rows.push_back(to_row("attention_gate", ag_res));
        continue;
      case PolicyKind::kLocal:
        p.window = budget;
        break;
      case PolicyKind::kStreamingLlm:
        p.sink_count = std::min(streaming_sinks, budget);
        p.window = budget - p.sink_count;
        break;
      case PolicyKind::kH2o:
        p.budget = budget;
        p.window = budget / 2;
        break;
    }
    rows.push_back(to_row(to_string(p.kind), evaluate_policy(model, samples, p)));
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out =
      "policy,perplexity,mean_retention,kv_bytes_pruned,kv_bytes_full,"
      "live_pairs\n";
  for (const BenchRow& r : rows) {
    out += r.policy;
    out += ',';
    out += fmt10(r.perplexity);
    out += ',';
    out += fmt10(r.mean_retention);
    out += ',';
    out += fmt10(r.kv_bytes_pruned);
    out += ',';
    out += fmt10(r.kv_bytes_full);
    out += ',';
    out += std::to_string(r.live_pairs);
    out += '\n';
  }
  return out;
}

}  // namespace gatedkv
