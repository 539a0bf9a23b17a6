// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/model.hpp"

#include <algorithm>
#include <cmath>

#include "gatedkv/kernels.hpp"

namespace gatedkv {

namespace {

constexpr double kNormEps = 1e-6;

// Xavier-uniform fill: bound sqrt(6 / (fan_in + fan_out)) with rows as fan_in.
void xavier_fill(Tensor& t, Rng& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
  for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
}

void rmsnorm_vec(const std::vector<double>& x, const std::vector<double>& gain,
                 std::vector<double>& out) {
  const size_t n = x.size();
  double ms = 0.0;
  for (double v : x) ms += v * v;
  const double inv = 1.0 / std::sqrt(ms / static_cast<double>(n) + kNormEps);
  out.resize(n);
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * inv * gain[i];
}

// y[p] = x[1xk] * w[kxp]
void vec_mat(const std::vector<double>& x, const Tensor& w,
             std::vector<double>& out) {
  out.assign(w.cols(), 0.0);
  kernels::matmul_nn(x.data(), w.values().data(), out.data(), 1,
                     static_cast<int>(x.size()), w.cols());
}

long long count_live_pairs(const Grid& mask) {
  long long c = 0;
  for (int j = 0; j < mask.rows; ++j)
    for (int t = 0; t <= j; ++t)
      if (mask.at(j, t) != 0.0) ++c;
  return c;
}

}  // namespace

Tensor mha_forward(const Tensor& x, const std::vector<Grid>& masks,
                   const AttnWeights& w, int head_dim, int value_dim,
                   const MhaOptions& opt) {
  const int heads = static_cast<int>(w.wq.size());
  const int n = x.rows();
  check(static_cast<int>(masks.size()) == heads,
        "mha_forward: got " + std::to_string(masks.size()) +
            " masks for " + std::to_string(heads) + " heads");
  for (const Grid& m : masks)
    check(m.rows == n && m.cols == n,
          "mha_forward: mask shape " + shape_str(m.rows, m.cols) +
              " does not match sequence " + shape_str(n, n));
  if (opt.post_softmax_factors)
    check(static_cast<int>(opt.post_softmax_factors->size()) == heads,
          "mha_forward: factor count mismatch");
  check(w.wo.rows() == heads * value_dim,
        "mha_forward: wo expects " + std::to_string(w.wo.rows()) +
            " input dims, heads supply " + std::to_string(heads * value_dim));

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int i = 0; i < heads; ++i) {
    Tensor q = matmul(x, w.wq[i]);
    Tensor k = matmul(x, w.wk[i]);
    Tensor v = matmul(x, w.wv[i]);
    Tensor s = scale(matmul(q, transpose(k)), inv_sqrt);
    Tensor a = softmax_rows(apply_mask(s, masks[i]));
    if (opt.attention_out) opt.attention_out->push_back(a.to_grid());
    if (opt.post_softmax_factors)
      a = mul(a, (*opt.post_softmax_factors)[i]);
    if (opt.keys_out) opt.keys_out->push_back(k);
    if (opt.values_out) opt.values_out->push_back(v);
    outs.push_back(matmul(a, v));
  }
  return matmul(concat_cols(outs), w.wo);
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  ffn_dim_ = 4 * cfg_.hidden_dim;

  embed_ = Tensor::zeros(cfg_.vocab_size, cfg_.hidden_dim);
  pos_ = Tensor::zeros(cfg_.max_seq, cfg_.hidden_dim);
  final_norm_ = Tensor::zeros(1, cfg_.hidden_dim);

  layers_.resize(cfg_.num_layers);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    LayerWeights& lw = layers_[l];
    lw.attn.norm_gain = Tensor::zeros(1, cfg_.hidden_dim);
    for (int i = 0; i < cfg_.num_heads; ++i) {
      lw.attn.wq.push_back(Tensor::zeros(cfg_.hidden_dim, cfg_.head_dim));
      lw.attn.wk.push_back(Tensor::zeros(cfg_.hidden_dim, cfg_.head_dim));
      lw.attn.wv.push_back(Tensor::zeros(cfg_.hidden_dim, cfg_.value_dim));
    }
    lw.attn.wo =
        Tensor::zeros(cfg_.num_heads * cfg_.value_dim, cfg_.hidden_dim);
    lw.ffn.norm_gain = Tensor::zeros(1, cfg_.hidden_dim);
    lw.ffn.w1 = Tensor::zeros(cfg_.hidden_dim, ffn_dim_);
    lw.ffn.w2 = Tensor::zeros(ffn_dim_, cfg_.hidden_dim);

    if (layer_has_gate_module(l)) {
      GateWeights& g = lw.gate;
      if (cfg_.gate_variant == GateVariant::kLinearGate) {
        g.w_lin = Tensor::zeros(cfg_.hidden_dim, cfg_.num_heads);
      } else {
        g.norm_gain = Tensor::zeros(1, cfg_.hidden_dim);
        for (int i = 0; i < cfg_.gate_heads; ++i) {
          g.wq.push_back(Tensor::zeros(cfg_.hidden_dim, cfg_.gate_head_dim));
          g.wk.push_back(Tensor::zeros(cfg_.hidden_dim, cfg_.gate_head_dim));
          g.wv.push_back(Tensor::zeros(cfg_.hidden_dim, cfg_.gate_head_dim));
        }
        g.wo = Tensor::zeros(cfg_.gate_heads * cfg_.gate_head_dim,
                             cfg_.num_heads);
      }
    }
  }
  set_trainable(TrainableSet::kAgPlusAttentionProjections);
}

bool Model::layer_has_gate_module(int l) const {
  if (cfg_.gate_variant == GateVariant::kPrevLayerGate)
    // layer l-1 hosts the scorer used by layer l; providers run from
    // gate_start_layer-1 through L-2
    return l >= cfg_.gate_start_layer - 1 && l < cfg_.num_layers - 1 &&
           cfg_.gate_start_layer < cfg_.num_layers;
  return true;
}

bool Model::layer_is_gated(int l) const {
  if (cfg_.gate_variant == GateVariant::kPrevLayerGate)
    return l >= cfg_.gate_start_layer;
  return true;
}

void Model::init_params(uint64_t seed) {
  Rng rng(seed);
  auto named = named_params();
  for (auto& [name, t] : named) {
    if (name.find("norm") != std::string::npos) {
      for (double& v : t->mutable_values()) v = 1.0;
    } else {
      xavier_fill(*t, rng);
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embed", &embed_);
  out.emplace_back("pos_embed", &pos_);
  out.emplace_back("final_norm", &final_norm_);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerWeights& lw = layers_[l];
    out.emplace_back(p + "attn.norm", &lw.attn.norm_gain);
    for (int i = 0; i < cfg_.num_heads; ++i) {
      out.emplace_back(p + "attn.wq." + std::to_string(i), &lw.attn.wq[i]);
      out.emplace_back(p + "attn.wk." + std::to_string(i), &lw.attn.wk[i]);
      out.emplace_back(p + "attn.wv." + std::to_string(i), &lw.attn.wv[i]);
    }
    out.emplace_back(p + "attn.wo", &lw.attn.wo);
    out.emplace_back(p + "ffn.norm", &lw.ffn.norm_gain);
    out.emplace_back(p + "ffn.w1", &lw.ffn.w1);
    out.emplace_back(p + "ffn.w2", &lw.ffn.w2);
    if (lw.gate.w_lin.defined())
      out.emplace_back(p + "gate.w_lin", &lw.gate.w_lin);
    if (lw.gate.norm_gain.defined()) {
      out.emplace_back(p + "gate.norm", &lw.gate.norm_gain);
      for (int i = 0; i < cfg_.gate_heads; ++i) {
        out.emplace_back(p + "gate.wq." + std::to_string(i), &lw.gate.wq[i]);
        out.emplace_back(p + "gate.wk." + std::to_string(i), &lw.gate.wk[i]);
        out.emplace_back(p + "gate.wv." + std::to_string(i), &lw.gate.wv[i]);
      }
      out.emplace_back(p + "gate.wo", &lw.gate.wo);
    }
  }
  return out;
}

void Model::set_trainable(TrainableSet set) {
  for (auto& [name, t] : named_params()) t->set_requires_grad(false);
  trainable_.clear();
  for (int l = 0; l < cfg_.num_layers; ++l) {
    LayerWeights& lw = layers_[l];
    for (Tensor* t : lw.gate.params()) {
      t->set_requires_grad(true);
      trainable_.push_back(t);
    }
    if (set == TrainableSet::kAgPlusAttentionProjections) {
      for (int i = 0; i < cfg_.num_heads; ++i) {
        for (Tensor* t :
             {&lw.attn.wq[i], &lw.attn.wk[i], &lw.attn.wv[i]}) {
          t->set_requires_grad(true);
          trainable_.push_back(t);
        }
      }
      lw.attn.wo.set_requires_grad(true);
      trainable_.push_back(&lw.attn.wo);
    }
  }
}

void Model::zero_grads() {
  for (Tensor* t : trainable_) t->zero_grad();
}

Tensor Model::gate_scores_for_layer(
    int layer, const std::vector<Tensor>& layer_inputs) const {
  switch (cfg_.gate_variant) {
    case GateVariant::kMhaGate:
      return ag_scores_mha(layer_inputs[layer], layers_[layer].gate, cfg_);
    case GateVariant::kLinearGate:
      return ag_scores_linear(layer_inputs[layer], layers_[layer].gate, cfg_);
    case GateVariant::kPrevLayerGate:
      check(layer >= cfg_.gate_start_layer,
            "gate_scores_for_layer: layer below gate_start_layer");
      return ag_scores_mha(layer_inputs[layer - 1], layers_[layer - 1].gate,
                           cfg_);
  }
  throw ContractError("gate_scores_for_layer: unreachable");
}

Model::RunArtifacts Model::run(std::span<const int> tokens,
                               const RunSpec& spec) const {
  const int n = static_cast<int>(tokens.size());
  check(n > 0, "forward: empty token sequence");
  check(n <= cfg_.max_seq, "forward: sequence of " + std::to_string(n) +
                               " tokens exceeds max_seq " +
                               std::to_string(cfg_.max_seq));
  if (spec.external_masks) {
    check(static_cast<int>(spec.external_masks->size()) == cfg_.num_layers,
          "forward: masks cover " +
              std::to_string(spec.external_masks->size()) + " layers, model has " +
              std::to_string(cfg_.num_layers));
    for (const auto& layer_masks : *spec.external_masks) {
      check(static_cast<int>(layer_masks.size()) == cfg_.num_heads,
            "forward: mask set has " + std::to_string(layer_masks.size()) +
                " heads, model has " + std::to_string(cfg_.num_heads));
      for (const Grid& m : layer_masks)
        check(m.rows == n && m.cols == n,
              "forward: mask shape " + shape_str(m.rows, m.cols) +
                  ", expected " + shape_str(n, n));
    }
  }
  if (spec.mode == GateMode::kForcedFlags) {
    check(spec.forced_flags != nullptr &&
              static_cast<int>(spec.forced_flags->size()) == cfg_.num_layers,
          "forward: forced flags must cover every layer");
    for (const Grid& f : *spec.forced_flags)
      check(f.rows == n && f.cols == cfg_.num_heads,
            "forward: forced flag shape " + shape_str(f.rows, f.cols) +
                ", expected " + shape_str(n, cfg_.num_heads));
  }
  if (spec.freeze && spec.freeze->replay)
    check(static_cast<int>(spec.freeze->layers.size()) == cfg_.num_layers,
          "forward: freeze context does not match layer count");

  std::vector<int> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = i;
  Tensor x = add(embedding_rows(embed_, tokens),
                 embedding_rows(pos_, positions));

  RunArtifacts art;
  if (spec.freeze && !spec.freeze->replay) spec.freeze->layers.assign(cfg_.num_layers, {});
  std::shared_ptr<const std::vector<uint8_t>> pattern;
  if (spec.train_ste && !spec.external_masks)
    pattern = gate_pattern(n, cfg_.recent_window);

  std::vector<Tensor> layer_inputs;  // pre-norm hidden state feeding each layer
  for (int l = 0; l < cfg_.num_layers; ++l) {
    layer_inputs.push_back(x);

    EvictionFlags flags;
    std::vector<Grid> masks;
    Tensor ste_gate;
    const bool gated_here = spec.mode == GateMode::kFromGate && layer_is_gated(l);

    if (spec.external_masks) {
      masks = (*spec.external_masks)[l];
      flags.soft = all_ones_flags(n, cfg_.num_heads);
      flags.hard = all_ones_flags(n, cfg_.num_heads);
    } else if (spec.mode == GateMode::kAllOnes ||
               (spec.mode == GateMode::kFromGate && !gated_here)) {
      flags.soft = all_ones_flags(n, cfg_.num_heads);
      flags.hard = all_ones_flags(n, cfg_.num_heads);
      masks = causal_masks(n, cfg_.num_heads);
    } else if (spec.mode == GateMode::kForcedFlags) {
      flags.hard = (*spec.forced_flags)[l];
      flags.soft = flags.hard;
      masks = build_mask(flags.hard, cfg_.recent_window);
    } else {
      Tensor scores = gate_scores_for_layer(l, layer_inputs);
      Tensor soft = sigmoid(add_scalar(scores, cfg_.gate_logit_offset));
      flags.soft = soft.to_grid();
      std::vector<double> shift;
      if (spec.freeze && spec.freeze->replay) {
        const auto& rec = spec.freeze->layers[l];
        check(rec.gated && rec.hard.size() == flags.soft.v.size(),
              "forward: freeze record missing for layer " + std::to_string(l));
        flags.hard = Grid(n, cfg_.num_heads);
        flags.hard.v = rec.hard;
        shift = rec.shift;
      } else {
        flags.hard = Grid(n, cfg_.num_heads);
        shift.resize(flags.soft.v.size());
        for (size_t i = 0; i < flags.soft.v.size(); ++i) {
          flags.hard.v[i] =
              flags.soft.v[i] > cfg_.gate_threshold ? 1.0 : 0.0;
          shift[i] = flags.hard.v[i] - flags.soft.v[i];
        }
        if (spec.freeze) {
          auto& rec = spec.freeze->layers[l];
          rec.gated = true;
          rec.hard = flags.hard.v;
          rec.shift = shift;
        }
      }
      masks = build_mask(flags.hard, cfg_.recent_window);
      if (spec.train_ste) {
        // forward value: hard flags; backward: the sigmoid path
        Tensor shift_t = Tensor::from_values(n, cfg_.num_heads, shift);
        ste_gate = add(soft, shift_t);
      }
    }

    for (const Grid& m : masks) art.live_pairs += count_live_pairs(m);

    std::vector<Tensor> factors;
    MhaOptions mopt;
    if (spec.train_ste && ste_gate.defined()) {
      for (int i = 0; i < cfg_.num_heads; ++i)
        factors.push_back(ste_spread(ste_gate, i, pattern, n));
      mopt.post_softmax_factors = &factors;
    }
    std::vector<Grid> attn_grids;
    if (spec.collect_attention) mopt.attention_out = &attn_grids;
    std::vector<Tensor> keys, values;
    if (spec.collect_kv) {
      mopt.keys_out = &keys;
      mopt.values_out = &values;
    }

    Tensor attn_in = rms_norm(x, layers_[l].attn.norm_gain, kNormEps);
    Tensor attn_out = mha_forward(attn_in, masks, layers_[l].attn,
                                  cfg_.head_dim, cfg_.value_dim, mopt);
    x = add(x, attn_out);

    Tensor ffn_in = rms_norm(x, layers_[l].ffn.norm_gain, kNormEps);
    Tensor ffn_out =
        matmul(silu(matmul(ffn_in, layers_[l].ffn.w1)), layers_[l].ffn.w2);
    x = add(x, ffn_out);

    art.flags.push_back(std::move(flags));
    art.masks.push_back(std::move(masks));
    art.ste_gates.push_back(ste_gate);
    if (spec.collect_attention) art.attention.push_back(std::move(attn_grids));
    if (spec.collect_kv) {
      art.keys.push_back(std::move(keys));
      art.values.push_back(std::move(values));
    }
  }

  Tensor final = rms_norm(x, final_norm_, kNormEps);
  art.logits = matmul(final, transpose(embed_));
  return art;
}

PrefillResult Model::prefill(std::span<const int> tokens,
                             const PrefillOptions& opts) const {
  NoGradGuard ng;
  RunSpec spec;
  spec.mode = opts.mode;
  spec.forced_flags = opts.forced_flags;
  spec.collect_attention = opts.collect_attention;
  spec.collect_kv = true;
  RunArtifacts art = run(tokens, spec);

  const int n = static_cast<int>(tokens.size());
  PrefillResult res;
  res.logits = art.logits.to_grid();
  res.flags = std::move(art.flags);
  res.masks = std::move(art.masks);
  res.attention = std::move(art.attention);
  res.live_pairs = art.live_pairs;
  res.stats = stats_from_flags(res.flags, cfg_.num_heads);

  // A prefill token survives if its flag is up or it sits inside the trailing
  // recent band that decode queries are entitled to see.
  res.retained.assign(cfg_.num_layers, {});
  for (int l = 0; l < cfg_.num_layers; ++l) {
    res.retained[l].assign(cfg_.num_heads, {});
    for (int h = 0; h < cfg_.num_heads; ++h) {
      for (int t = 0; t < n; ++t) {
        const bool in_band =
            cfg_.recent_window > 0 && t >= n - cfg_.recent_window;
        if (res.flags[l].hard.at(t, h) != 0.0 || in_band)
          res.retained[l][h].push_back(t);
      }
    }
  }

  KVCache full =
      KVCache::empty(cfg_.num_layers, cfg_.num_heads, cfg_.head_dim, cfg_.value_dim);
  full.n_prefill = n;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    for (int h = 0; h < cfg_.num_heads; ++h) {
      const auto& kv = art.keys[l][h].values();
      const auto& vv = art.values[l][h].values();
      for (int t = 0; t < n; ++t) {
        KVCache::Entry e;
        e.position = t;
        e.key.assign(kv.begin() + static_cast<size_t>(t) * cfg_.head_dim,
                     kv.begin() + static_cast<size_t>(t + 1) * cfg_.head_dim);
        e.value.assign(vv.begin() + static_cast<size_t>(t) * cfg_.value_dim,
                       vv.begin() + static_cast<size_t>(t + 1) * cfg_.value_dim);
        full.entries[l][h].push_back(std::move(e));
      }
    }
  }
  res.cache = prune_cache(full, res.retained);
  if (opts.keep_full_cache) res.full_cache = std::move(full);
  return res;
}

DecodeResult Model::decode_step(int token, KVCache& cache) const {
  check(cache.num_layers == cfg_.num_layers && cache.num_heads == cfg_.num_heads,
        "decode_step: cache built for " + std::to_string(cache.num_layers) +
            " layers / " + std::to_string(cache.num_heads) +
            " heads, model has " + std::to_string(cfg_.num_layers) + " / " +
            std::to_string(cfg_.num_heads));
  check(cache.key_dim == cfg_.head_dim && cache.value_dim == cfg_.value_dim,
        "decode_step: cache entry dims mismatch");
  check(token >= 0 && token < cfg_.vocab_size,
        "decode_step: token " + std::to_string(token) + " outside vocab");
  const int pos = cache.n_prefill + cache.n_decoded;
  check(pos < cfg_.max_seq, "decode_step: position " + std::to_string(pos) +
                                " reaches max_seq " +
                                std::to_string(cfg_.max_seq));

  const int d = cfg_.hidden_dim;
  std::vector<double> x(d);
  const auto& ev = embed_.values();
  const auto& pv = pos_.values();
  for (int i = 0; i < d; ++i)
    x[i] = ev[static_cast<size_t>(token) * d + i] +
           pv[static_cast<size_t>(pos) * d + i];

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim));
  std::vector<double> xn, q, k, v, concat, proj, f1, f2;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const LayerWeights& lw = layers_[l];
    rmsnorm_vec(x, lw.attn.norm_gain.values(), xn);
    concat.assign(static_cast<size_t>(cfg_.num_heads) * cfg_.value_dim, 0.0);
    for (int h = 0; h < cfg_.num_heads; ++h) {
      vec_mat(xn, lw.attn.wq[h], q);
      vec_mat(xn, lw.attn.wk[h], k);
      vec_mat(xn, lw.attn.wv[h], v);
      // the fresh token joins every head unconditionally
      auto& entries = cache.entries[l][h];
      entries.push_back({pos, k, v});
      const int m = static_cast<int>(entries.size());
      std::vector<double> scores(m);
      double mx = -1e300;
      for (int e = 0; e < m; ++e) {
        double dot = 0.0;
        for (int i = 0; i < cfg_.head_dim; ++i)
          dot += q[i] * entries[e].key[i];
        scores[e] = dot * inv_sqrt;
        mx = std::max(mx, scores[e]);
      }
      double sum = 0.0;
      for (int e = 0; e < m; ++e) {
        scores[e] = std::exp(scores[e] - mx);
        sum += scores[e];
      }
      double* out = concat.data() + static_cast<size_t>(h) * cfg_.value_dim;
      for (int e = 0; e < m; ++e) {
        const double a = scores[e] / sum;
        for (int i = 0; i < cfg_.value_dim; ++i)
          out[i] += a * entries[e].value[i];
      }
    }
    vec_mat(concat, lw.attn.wo, proj);
    for (int i = 0; i < d; ++i) x[i] += proj[i];

    rmsnorm_vec(x, lw.ffn.norm_gain.values(), xn);
    vec_mat(xn, lw.ffn.w1, f1);
    for (double& u : f1) u = u / (1.0 + std::exp(-u));
    vec_mat(f1, lw.ffn.w2, f2);
    for (int i = 0; i < d; ++i) x[i] += f2[i];
  }

  rmsnorm_vec(x, final_norm_.values(), xn);
  DecodeResult res;
  res.logits.assign(cfg_.vocab_size, 0.0);
  kernels::matmul_nt(xn.data(), embed_.values().data(), res.logits.data(), 1,
                     d, cfg_.vocab_size);
  cache.n_decoded += 1;
  return res;
}

Tensor eviction_loss(const Tensor& mean_gate, const LossConfig& cfg) {
  check(mean_gate.numel() == 1, "eviction_loss: mean gate must be scalar");
  return scale(abs_val(add_scalar(mean_gate, -cfg.target_retention)),
               cfg.evict_weight);
}

MaskedForward Model::forward_masked(
    std::span<const int> tokens,
    const std::vector<std::vector<Grid>>& masks) const {
  NoGradGuard ng;
  RunSpec spec;
  spec.external_masks = &masks;
  RunArtifacts art = run(tokens, spec);
  MaskedForward out;
  out.logits = art.logits.to_grid();
  out.live_pairs = art.live_pairs;
  return out;
}

TrainForward Model::forward_train(std::span<const int> tokens,
                                  std::span<const int> targets,
                                  const LossConfig& loss, SteFreeze* freeze) {
  check(tokens.size() == targets.size(),
        "forward_train: " + std::to_string(tokens.size()) + " tokens vs " +
            std::to_string(targets.size()) + " targets");
  RunSpec spec;
  spec.mode = GateMode::kFromGate;
  spec.train_ste = true;
  spec.freeze = freeze;
  RunArtifacts art = run(tokens, spec);

  const int n = static_cast<int>(tokens.size());
  TrainForward out;
  out.lm = cross_entropy_rows(art.logits, targets);

  // Mean gate output over every layer, head and token. Ungated layers hold
  // all tokens, so they enter the mean as constant ones.
  const double total_entries =
      static_cast<double>(cfg_.num_layers) * n * cfg_.num_heads;
  double const_ones = 0.0;
  Tensor acc;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    if (art.ste_gates[l].defined()) {
      Tensor s = sum_all(art.ste_gates[l]);
      acc = acc.defined() ? add(acc, s) : s;
    } else {
      const_ones += static_cast<double>(n) * cfg_.num_heads;
    }
  }
  Tensor mean_gate;
  if (acc.defined()) {
    if (const_ones > 0.0) acc = add_scalar(acc, const_ones);
    mean_gate = scale(acc, 1.0 / total_entries);
  } else {
    mean_gate = Tensor::scalar(const_ones / total_entries);
  }
  out.evict = eviction_loss(mean_gate, loss);
  out.total = add(scale(out.lm, loss.lm_weight), out.evict);
  out.mean_retention = mean_gate.item();
  out.stats = stats_from_flags(art.flags, cfg_.num_heads);
  return out;
}

}  // namespace gatedkv
