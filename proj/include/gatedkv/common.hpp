// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gatedkv {

// Library misuse: bad shapes, out-of-range arguments, broken preconditions.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid user-supplied configuration. The CLI maps this to exit code 2,
// anything else unexpected to exit code 3.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// Additive masking constant: masked attention scores are shifted by -kMaskInf
// before the softmax, which underflows to an exact zero weight after the
// row-max subtraction.
inline constexpr double kMaskInf = 1e9;

// Plain row-major matrix of doubles with no gradient tracking. Used for flags,
// masks, attention snapshots and logits handed to evaluation code.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t numel() const { return v.size(); }
};

// Deterministic uniform source. mt19937_64 output is pinned by the standard,
// and the double conversion is done by hand so streams are identical across
// platforms and library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>(gen_() % static_cast<uint64_t>(n));
  }

 private:
  std::mt19937_64 gen_;
};

inline std::string shape_str(int r, int c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

}  // namespace gatedkv
