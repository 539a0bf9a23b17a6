// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Inspection exports: grayscale PGM images of masks and attention maps, CSV
// dumps of gate decisions and of what survives in the cache.

#pragma once

#include <string>
#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/gate.hpp"
#include "gatedkv/kv_cache.hpp"

namespace gatedkv {

// Binary (P5) PGM, maxval 255. Values are clamped to [lo, hi] and scaled
// linearly; a 0/1 mask with the defaults lands on pure black and white.
void write_pgm(const std::string& path, const Grid& g, double lo = 0.0,
               double hi = 1.0);

// One PGM per head: <prefix>_l<layer>_h<head>.pgm
void write_mask_pgms(const std::string& prefix,
                     const std::vector<std::vector<Grid>>& per_layer_masks);
void write_attention_pgms(const std::string& prefix,
                          const std::vector<std::vector<Grid>>& per_layer_attn);

// layer,head,token,soft,hard rows for every gate decision.
void write_flags_csv(const std::string& path,
                     const std::vector<EvictionFlags>& flags);

// layer,head,position rows for every entry still in the cache.
void write_cache_csv(const std::string& path, const KVCache& cache);

}  // namespace gatedkv
