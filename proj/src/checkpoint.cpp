// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: an 8-byte magic, the model configuration as a JSON
// blob, then every named parameter as raw little-endian doubles. Loading
// rebuilds the Model from the embedded configuration, so a checkpoint is
// self-describing.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gatedkv/model.hpp"

namespace gatedkv {

namespace {

constexpr char kMagic[8] = {'G', 'K', 'V', 'C', 'K', 'P', 'T', '\x01'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw ConfigError("checkpoint: truncated reading " + what);
  return v;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");

  os.write(kMagic, sizeof(kMagic));
  const std::string header = model_config_to_json(cfg_);
  write_u32(os, static_cast<uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  // named_params is non-const only because it hands out mutable pointers
  auto named = const_cast<Model*>(this)->named_params();
  write_u32(os, static_cast<uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t->rows()));
    write_u32(os, static_cast<uint32_t>(t->cols()));
    os.write(reinterpret_cast<const char*>(t->values().data()),
             static_cast<std::streamsize>(t->numel() * sizeof(double)));
  }
  os.flush();
  if (!os) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open '" + path + "'");

  char magic[8] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ConfigError("checkpoint: '" + path + "' is not a checkpoint file");

  const uint32_t header_len = read_u32(is, "header length");
  std::string header(header_len, '\0');
  is.read(header.data(), header_len);
  if (!is) throw ConfigError("checkpoint: truncated reading header");

  Model model(model_config_from_json_text(header));
  auto named = model.named_params();

  const uint32_t count = read_u32(is, "tensor count");
  if (count != named.size())
    throw ConfigError("checkpoint: holds " + std::to_string(count) +
                      " tensors, model expects " + std::to_string(named.size()));
  for (auto& [name, t] : named) {
    const uint32_t name_len = read_u32(is, "name length");
    std::string stored(name_len, '\0');
    is.read(stored.data(), name_len);
    if (!is) throw ConfigError("checkpoint: truncated reading tensor name");
    if (stored != name)
      throw ConfigError("checkpoint: tensor '" + stored + "' where '" + name +
                        "' was expected");
    const uint32_t rows = read_u32(is, stored + " rows");
    const uint32_t cols = read_u32(is, stored + " cols");
    if (static_cast<int>(rows) != t->rows() ||
        static_cast<int>(cols) != t->cols())
      throw ConfigError("checkpoint: tensor '" + stored + "' is " +
                        shape_str(static_cast<int>(rows), static_cast<int>(cols)) +
                        ", expected " + shape_str(t->rows(), t->cols()));
    is.read(reinterpret_cast<char*>(t->mutable_values().data()),
            static_cast<std::streamsize>(t->numel() * sizeof(double)));
    if (!is) throw ConfigError("checkpoint: truncated reading tensor '" + stored + "'");
  }
  return model;
}

}  // namespace gatedkv
