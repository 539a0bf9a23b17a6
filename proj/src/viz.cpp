// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace gatedkv {

namespace {

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc
                                : std::ios::trunc);
  if (!os) throw ConfigError("viz: cannot write '" + path + "'");
  return os;
}

std::string fmt10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_pgm(const std::string& path, const Grid& g, double lo, double hi) {
  check(g.rows > 0 && g.cols > 0, "write_pgm: empty grid");
  check(hi > lo, "write_pgm: hi must exceed lo");
  std::ofstream os = open_out(path, true);
  os << "P5\n" << g.cols << " " << g.rows << "\n255\n";
  std::vector<unsigned char> row(g.cols);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const double t = std::clamp((g.at(r, c) - lo) / (hi - lo), 0.0, 1.0);
      row[c] = static_cast<unsigned char>(std::lround(t * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), g.cols);
  }
  os.flush();
  if (!os) throw ConfigError("viz: write to '" + path + "' failed");
}

namespace {

void write_grid_set(const std::string& prefix,
                    const std::vector<std::vector<Grid>>& per_layer) {
  for (size_t l = 0; l < per_layer.size(); ++l)
    for (size_t h = 0; h < per_layer[l].size(); ++h)
      write_pgm(prefix + "_l" + std::to_string(l) + "_h" + std::to_string(h) +
                    ".pgm",
                per_layer[l][h]);
}

}  // namespace

void write_mask_pgms(const std::string& prefix,
                     const std::vector<std::vector<Grid>>& per_layer_masks) {
  write_grid_set(prefix, per_layer_masks);
}

void write_attention_pgms(const std::string& prefix,
                          const std::vector<std::vector<Grid>>& per_layer_attn) {
  write_grid_set(prefix, per_layer_attn);
}

void write_flags_csv(const std::string& path,
                     const std::vector<EvictionFlags>& flags) {
  std::ofstream os = open_out(path, false);
  os << "layer,head,token,soft,hard\n";
  for (size_t l = 0; l < flags.size(); ++l) {
    const Grid& soft = flags[l].soft;
    const Grid& hard = flags[l].hard;
    for (int h = 0; h < soft.cols; ++h)
      for (int t = 0; t < soft.rows; ++t)
        os << l << ',' << h << ',' << t << ',' << fmt10(soft.at(t, h)) << ','
           << static_cast<int>(hard.at(t, h)) << '\n';
  }
  os.flush();
  if (!os) throw ConfigError("viz: write to '" + path + "' failed");
}

void write_cache_csv(const std::string& path, const KVCache& cache) {
  std::ofstream os = open_out(path, false);
  os << "layer,head,position\n";
  for (int l = 0; l < cache.num_layers; ++l)
    for (int h = 0; h < cache.num_heads; ++h)
      for (const KVCache::Entry& e : cache.at(l, h))
        os << l << ',' << h << ',' << e.position << '\n';
  os.flush();
  if (!os) throw ConfigError("viz: write to '" + path + "' failed");
}

}  // namespace gatedkv
