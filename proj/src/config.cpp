// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace gatedkv {

using nlohmann::json;

std::string to_string(GateVariant v) {
  switch (v) {
    case GateVariant::kMhaGate: return "mha_gate";
    case GateVariant::kLinearGate: return "linear_gate";
    case GateVariant::kPrevLayerGate: return "prev_layer_gate";
  }
  return "?";
}

GateVariant gate_variant_from_string(const std::string& s) {
  if (s == "mha_gate") return GateVariant::kMhaGate;
  if (s == "linear_gate") return GateVariant::kLinearGate;
  if (s == "prev_layer_gate") return GateVariant::kPrevLayerGate;
  throw ConfigError("unknown gate_variant '" + s +
                    "' (expected mha_gate | linear_gate | prev_layer_gate)");
}

std::string to_string(TrainableSet t) {
  return t == TrainableSet::kAgOnly ? "ag_only" : "ag_plus_attention_projections";
}

TrainableSet trainable_set_from_string(const std::string& s) {
  if (s == "ag_only") return TrainableSet::kAgOnly;
  if (s == "ag_plus_attention_projections")
    return TrainableSet::kAgPlusAttentionProjections;
  throw ConfigError("unknown trainable_set '" + s +
                    "' (expected ag_only | ag_plus_attention_projections)");
}

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kAttentionGate: return "attention_gate";
    case PolicyKind::kStreamingLlm: return "streaming_llm";
    case PolicyKind::kH2o: return "h2o";
    case PolicyKind::kLocal: return "local";
    case PolicyKind::kNone: return "none";
  }
  return "?";
}

PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "attention_gate" || s == "ag") return PolicyKind::kAttentionGate;
  if (s == "streaming_llm") return PolicyKind::kStreamingLlm;
  if (s == "h2o") return PolicyKind::kH2o;
  if (s == "local") return PolicyKind::kLocal;
  if (s == "none") return PolicyKind::kNone;
  throw ConfigError("unknown policy '" + s +
                    "' (expected attention_gate | streaming_llm | h2o | local | none)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(vocab_size > 0, "model.vocab_size must be positive");
  require(num_layers > 0, "model.num_layers must be positive");
  require(hidden_dim > 0, "model.hidden_dim must be positive");
  require(num_heads > 0, "model.num_heads must be positive");
  require(head_dim > 0, "model.head_dim must be positive");
  require(value_dim > 0, "model.value_dim must be positive");
  require(gate_heads > 0, "model.gate_heads must be positive");
  require(gate_head_dim > 0, "model.gate_head_dim must be positive");
  require(gate_heads < num_heads,
          "model.gate_heads (" + std::to_string(gate_heads) +
              ") must be smaller than model.num_heads (" +
              std::to_string(num_heads) + ")");
  require(gate_threshold > 0.0 && gate_threshold < 1.0,
          "model.gate_threshold must lie strictly inside (0, 1)");
  require(gate_logit_offset >= 0.0, "model.gate_logit_offset must be >= 0");
  require(gate_start_layer >= 0 && gate_start_layer <= num_layers,
          "model.gate_start_layer out of range [0, num_layers]");
  if (gate_variant == GateVariant::kPrevLayerGate)
    require(gate_start_layer >= 1,
            "model.gate_start_layer must be >= 1 for prev_layer_gate; layer 0 "
            "has no previous layer to borrow a scorer from");
  require(recent_window >= 0, "model.recent_window must be >= 0");
  require(max_seq > 0, "model.max_seq must be positive");
}

void LossConfig::validate(const ModelConfig& model) const {
  if (evict_weight < 0.0) throw ConfigError("loss.evict_weight must be >= 0");
  if (lm_weight < 0.0) throw ConfigError("loss.lm_weight must be >= 0");
  if (target_retention < 0.0 || target_retention > model.gate_threshold)
    throw ConfigError(
        "loss.target_retention must lie in [0, model.gate_threshold]; got " +
        std::to_string(target_retention) + " with threshold " +
        std::to_string(model.gate_threshold));
}

void TrainSpec::validate(const ModelConfig& model) const {
  if (learning_rate <= 0.0) throw ConfigError("train.learning_rate must be > 0");
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (seq_len <= 0) throw ConfigError("train.seq_len must be positive");
  if (seq_len > model.max_seq)
    throw ConfigError("train.seq_len exceeds model.max_seq");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
}

void PolicySpec::validate() const {
  if (sink_count < 0) throw ConfigError("policy.sink_count must be >= 0");
  if (window < 0) throw ConfigError("policy.window must be >= 0");
  if (budget < 0) throw ConfigError("policy.budget must be >= 0");
  if (kind == PolicyKind::kStreamingLlm && sink_count == 0 && window == 0)
    throw ConfigError("streaming_llm needs sink_count or window > 0");
  if (kind == PolicyKind::kLocal && window == 0)
    throw ConfigError("local policy needs window > 0");
  if (kind == PolicyKind::kH2o) {
    if (budget <= 0) throw ConfigError("h2o policy needs budget > 0");
    if (budget < window)
      throw ConfigError("h2o budget (" + std::to_string(budget) +
                        ") smaller than its recent window (" +
                        std::to_string(window) + ")");
  }
}

void RunConfig::validate() const {
  model.validate();
  loss.validate(model);
  train.validate(model);
}

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"vocab_size", m.vocab_size},
              {"num_layers", m.num_layers},
              {"hidden_dim", m.hidden_dim},
              {"num_heads", m.num_heads},
              {"head_dim", m.head_dim},
              {"value_dim", m.value_dim},
              {"gate_heads", m.gate_heads},
              {"gate_head_dim", m.gate_head_dim},
              {"gate_threshold", m.gate_threshold},
              {"gate_logit_offset", m.gate_logit_offset},
              {"gate_variant", to_string(m.gate_variant)},
              {"gate_start_layer", m.gate_start_layer},
              {"recent_window", m.recent_window},
              {"max_seq", m.max_seq}};
}

// Reject unknown keys so typos fail loudly instead of silently using defaults.
void check_keys(const json& j, const std::initializer_list<const char*>& known,
                const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok)
      throw ConfigError("unknown key '" + section + "." + it.key() + "'");
  }
}

template <typename T>
void read_to(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "'");
  }
}

ModelConfig model_from_json(const json& j) {
  check_keys(j,
             {"vocab_size", "num_layers", "hidden_dim", "num_heads", "head_dim",
              "value_dim", "gate_heads", "gate_head_dim", "gate_threshold",
              "gate_logit_offset", "gate_variant", "gate_start_layer",
              "recent_window", "max_seq"},
             "model");
  ModelConfig m;
  read_to(j, "vocab_size", m.vocab_size);
  read_to(j, "num_layers", m.num_layers);
  read_to(j, "hidden_dim", m.hidden_dim);
  read_to(j, "num_heads", m.num_heads);
  read_to(j, "head_dim", m.head_dim);
  read_to(j, "value_dim", m.value_dim);
  read_to(j, "gate_heads", m.gate_heads);
  read_to(j, "gate_head_dim", m.gate_head_dim);
  read_to(j, "gate_threshold", m.gate_threshold);
  read_to(j, "gate_logit_offset", m.gate_logit_offset);
  if (j.contains("gate_variant"))
    m.gate_variant = gate_variant_from_string(j.at("gate_variant").get<std::string>());
  read_to(j, "gate_start_layer", m.gate_start_layer);
  read_to(j, "recent_window", m.recent_window);
  read_to(j, "max_seq", m.max_seq);
  return m;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& m) {
  return model_to_json(m).dump();
}

ModelConfig model_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config parse error: ") + e.what());
  }
  return model_from_json(j);
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = model_to_json(model);
  j["loss"] = json{{"evict_weight", loss.evict_weight},
                   {"target_retention", loss.target_retention},
                   {"lm_weight", loss.lm_weight}};
  j["train"] = json{{"learning_rate", train.learning_rate},
                    {"epochs", train.epochs},
                    {"batch_size", train.batch_size},
                    {"seq_len", train.seq_len},
                    {"weight_decay", train.weight_decay},
                    {"seed", train.seed},
                    {"trainable_set", to_string(train.trainable_set)}};
  j["data"] = json{{"corpus", corpus_path}, {"holdout", holdout_path}};
  return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  check_keys(j, {"model", "loss", "train", "data"}, "config");
  RunConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, {"evict_weight", "target_retention", "lm_weight"}, "loss");
    read_to(l, "evict_weight", c.loss.evict_weight);
    read_to(l, "target_retention", c.loss.target_retention);
    read_to(l, "lm_weight", c.loss.lm_weight);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"learning_rate", "epochs", "batch_size", "seq_len",
                "weight_decay", "seed", "trainable_set"},
               "train");
    read_to(t, "learning_rate", c.train.learning_rate);
    read_to(t, "epochs", c.train.epochs);
    read_to(t, "batch_size", c.train.batch_size);
    read_to(t, "seq_len", c.train.seq_len);
    read_to(t, "weight_decay", c.train.weight_decay);
    read_to(t, "seed", c.train.seed);
    if (t.contains("trainable_set"))
      c.train.trainable_set =
          trainable_set_from_string(t.at("trainable_set").get<std::string>());
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"corpus", "holdout"}, "data");
    read_to(d, "corpus", c.corpus_path);
    read_to(d, "holdout", c.holdout_path);
  }
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void RunConfig::apply_override(const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + key_eq_value + "' is not KEY=VALUE");
  const std::string key = key_eq_value.substr(0, eq);
  const std::string val = key_eq_value.substr(eq + 1);

  auto as_int = [&](const std::string& v) {
    try {
      size_t pos = 0;
      const long r = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<int>(r);
    } catch (const std::exception&) {
      throw ConfigError("override '" + key + "': '" + v + "' is not an integer");
    }
  };
  auto as_double = [&](const std::string& v) {
    try {
      size_t pos = 0;
      const double r = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError("override '" + key + "': '" + v + "' is not a number");
    }
  };

  if (key == "model.vocab_size") model.vocab_size = as_int(val);
  else if (key == "model.num_layers") model.num_layers = as_int(val);
  else if (key == "model.hidden_dim") model.hidden_dim = as_int(val);
  else if (key == "model.num_heads") model.num_heads = as_int(val);
  else if (key == "model.head_dim") model.head_dim = as_int(val);
  else if (key == "model.value_dim") model.value_dim = as_int(val);
  else if (key == "model.gate_heads") model.gate_heads = as_int(val);
  else if (key == "model.gate_head_dim") model.gate_head_dim = as_int(val);
  else if (key == "model.gate_threshold") model.gate_threshold = as_double(val);
  else if (key == "model.gate_logit_offset") model.gate_logit_offset = as_double(val);
  else if (key == "model.gate_variant") model.gate_variant = gate_variant_from_string(val);
  else if (key == "model.gate_start_layer") model.gate_start_layer = as_int(val);
  else if (key == "model.recent_window") model.recent_window = as_int(val);
  else if (key == "model.max_seq") model.max_seq = as_int(val);
  else if (key == "loss.evict_weight") loss.evict_weight = as_double(val);
  else if (key == "loss.target_retention") loss.target_retention = as_double(val);
  else if (key == "loss.lm_weight") loss.lm_weight = as_double(val);
  else if (key == "train.learning_rate") train.learning_rate = as_double(val);
  else if (key == "train.epochs") train.epochs = as_int(val);
  else if (key == "train.batch_size") train.batch_size = as_int(val);
  else if (key == "train.seq_len") train.seq_len = as_int(val);
  else if (key == "train.weight_decay") train.weight_decay = as_double(val);
  else if (key == "train.seed") train.seed = static_cast<uint64_t>(as_int(val));
  else if (key == "train.trainable_set") train.trainable_set = trainable_set_from_string(val);
  else if (key == "data.corpus") corpus_path = val;
  else if (key == "data.holdout") holdout_path = val;
  else throw ConfigError("unknown override key '" + key + "'");
}

}  // namespace gatedkv
