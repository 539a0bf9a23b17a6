// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0
//
// Autograd correctness. Every op gets its analytic gradient compared
// against a central finite difference of the scalarized forward pass.
// Step is 1e-4; a check passes when the relative error is at most 1e-4
// or the absolute error is at most 1e-7.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "gatedkv/common.hpp"
#include "gatedkv/tensor.hpp"

using namespace gatedkv;

namespace {

constexpr double kFdStep = 1e-4;

bool grad_close(double analytic, double numeric) {
  const double diff = std::fabs(analytic - numeric);
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  return diff <= 1e-4 * scale || diff <= 1e-7;
}

// Checks d(scalar_fn)/d(leaf) for every element of every leaf. The
// functor must rebuild the graph from the leaves on each call so that
// perturbed values flow through.
void check_gradients(std::vector<Tensor> leaves, const std::function<Tensor()>& scalar_fn) {
  for (auto& leaf : leaves) leaf.set_requires_grad(true);
  Tensor loss = scalar_fn();
  backward(loss);
  for (auto& leaf : leaves) {
    const auto& g = leaf.grad();
    for (size_t i = 0; i < leaf.numel(); ++i) {
      double saved = leaf.values()[i];
      leaf.mutable_values()[i] = saved + kFdStep;
      double up;
      {
        NoGradGuard ng;
        up = scalar_fn().item();
      }
      leaf.mutable_values()[i] = saved - kFdStep;
      double dn;
      {
        NoGradGuard ng;
        dn = scalar_fn().item();
      }
      leaf.mutable_values()[i] = saved;
      const double numeric = (up - dn) / (2 * kFdStep);
      INFO("leaf element ", i, " analytic=", g[i], " numeric=", numeric);
      CHECK(grad_close(g[i], numeric));
    }
  }
}

Tensor random_tensor(Rng& rng, int r, int c) {
  std::vector<double> v(static_cast<size_t>(r) * c);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(r, c, v);
}

}  // namespace

TEST_CASE("sigmoid fixed value") {
  Tensor x = Tensor::scalar(2.0);
  Tensor y = sigmoid(x);
  CHECK(y.item() == doctest::Approx(0.8807970779778823).epsilon(1e-15));
}

TEST_CASE("sigmoid derivative at zero is exactly one quarter") {
  Tensor x = Tensor::scalar(0.0);
  x.set_requires_grad(true);
  Tensor y = sigmoid(x);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax rows: uniform input, one-hot under masking, full mask throws") {
  Tensor two = Tensor::from_values(1, 2, {0.0, 0.0});
  Tensor sm = softmax_rows(two);
  CHECK(sm.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sm.values()[1] == doctest::Approx(0.5).epsilon(1e-15));

  // one live column -> exactly one-hot, masked weights exactly zero
  Grid mask(1, 3, 0.0);
  mask.at(0, 1) = 1.0;
  Tensor scores = Tensor::from_values(1, 3, {5.0, -2.0, 7.0});
  Tensor w = softmax_rows(apply_mask(scores, mask));
  CHECK(w.values()[0] == 0.0);
  CHECK(w.values()[1] == 1.0);
  CHECK(w.values()[2] == 0.0);

  Grid dead(1, 3, 0.0);
  Tensor masked = apply_mask(scores, dead);
  CHECK_THROWS_AS(softmax_rows(masked), ContractError);
}

TEST_CASE("masked softmax zeroes every masked weight exactly") {
  Rng rng(9);
  Tensor scores = random_tensor(rng, 4, 6);
  Grid mask(4, 6, 0.0);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c)
      if (rng.uniform() < 0.5 || c == r) mask.at(r, c) = 1.0;
  Tensor w = softmax_rows(apply_mask(scores, mask));
  for (int r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 6; ++c) {
      const double wv = w.values()[static_cast<size_t>(r) * 6 + c];
      if (mask.at(r, c) == 0.0) CHECK(wv == 0.0);
      sum += wv;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward of elementwise sums") {
  Tensor x = Tensor::from_values(1, 3, {1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  backward(sum_all(x));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);

  Tensor y = Tensor::from_values(1, 2, {1.0, 2.0});
  y.set_requires_grad(true);
  backward(sum_all(mul(y, y)));
  CHECK(y.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(y.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("finite differences: matmul chain") {
  Rng rng(21);
  Tensor a = random_tensor(rng, 3, 4);
  Tensor b = random_tensor(rng, 4, 2);
  check_gradients({a, b}, [&] { return sum_all(matmul(a, b)); });
}

TEST_CASE("finite differences: transpose in a product") {
  Rng rng(22);
  Tensor a = random_tensor(rng, 3, 4);
  Tensor b = random_tensor(rng, 3, 2);
  check_gradients({a, b}, [&] { return sum_all(matmul(transpose(a), b)); });
}

TEST_CASE("finite differences: add, sub, mul, scale, add_scalar") {
  Rng rng(23);
  Tensor a = random_tensor(rng, 2, 3);
  Tensor b = random_tensor(rng, 2, 3);
  check_gradients({a, b}, [&] {
    Tensor s = add(mul(a, b), sub(a, b));
    return sum_all(add_scalar(scale(s, 1.7), -0.3));
  });
}

TEST_CASE("finite differences: sigmoid and silu") {
  Rng rng(24);
  Tensor a = random_tensor(rng, 2, 5);
  check_gradients({a}, [&] { return sum_all(sigmoid(a)); });
  Tensor b = random_tensor(rng, 2, 5);
  check_gradients({b}, [&] { return sum_all(silu(b)); });
}

TEST_CASE("finite differences: abs away from the kink") {
  Tensor a = Tensor::from_values(1, 4, {0.7, -0.9, 1.3, -2.0});
  check_gradients({a}, [&] { return sum_all(abs_val(a)); });
}

TEST_CASE("abs subgradient at zero is zero") {
  Tensor a = Tensor::from_values(1, 2, {0.0, 3.0});
  a.set_requires_grad(true);
  backward(sum_all(abs_val(a)));
  CHECK(a.grad()[0] == 0.0);
  CHECK(a.grad()[1] == 1.0);
}

TEST_CASE("finite differences: rms_norm") {
  Rng rng(25);
  Tensor x = random_tensor(rng, 3, 6);
  Tensor g = random_tensor(rng, 1, 6);
  check_gradients({x, g}, [&] { return sum_all(rms_norm(x, g)); });
}

TEST_CASE("finite differences: masked softmax weighted sum") {
  Rng rng(26);
  Tensor scores = random_tensor(rng, 3, 3);
  Tensor v = random_tensor(rng, 3, 2);
  Grid mask(3, 3, 0.0);
  mask.at(0, 0) = 1.0;
  mask.at(1, 0) = 1.0;
  mask.at(1, 1) = 1.0;
  mask.at(2, 0) = 1.0;
  mask.at(2, 2) = 1.0;
  check_gradients({scores, v}, [&] {
    Tensor w = softmax_rows(apply_mask(scores, mask));
    return sum_all(matmul(w, v));
  });
}

TEST_CASE("finite differences: concat_cols") {
  Rng rng(27);
  Tensor a = random_tensor(rng, 3, 2);
  Tensor b = random_tensor(rng, 3, 4);
  Tensor w = random_tensor(rng, 6, 2);
  check_gradients({a, b, w}, [&] { return sum_all(matmul(concat_cols({a, b}), w)); });
}

TEST_CASE("finite differences: mean_all") {
  Rng rng(28);
  Tensor a = random_tensor(rng, 4, 5);
  check_gradients({a}, [&] { return mean_all(mul(a, a)); });
}

TEST_CASE("finite differences: embedding row gather scatters into the table") {
  Rng rng(29);
  Tensor table = random_tensor(rng, 7, 3);
  const std::vector<int> ids = {2, 5, 2, 0};
  check_gradients({table}, [&] {
    Tensor rows = embedding_rows(table, ids);
    return sum_all(mul(rows, rows));
  });
}

TEST_CASE("cross entropy matches a hand logsumexp and its gradient checks out") {
  Rng rng(30);
  Tensor logits = random_tensor(rng, 3, 5);
  const std::vector<int> targets = {1, 4, 0};

  double manual = 0.0;
  for (int r = 0; r < 3; ++r) {
    double mx = logits.values()[static_cast<size_t>(r) * 5];
    for (int c = 1; c < 5; ++c) mx = std::max(mx, logits.values()[static_cast<size_t>(r) * 5 + c]);
    double lse = 0.0;
    for (int c = 0; c < 5; ++c) lse += std::exp(logits.values()[static_cast<size_t>(r) * 5 + c] - mx);
    manual += mx + std::log(lse) - logits.values()[static_cast<size_t>(r) * 5 + targets[r]];
  }
  manual /= 3.0;
  {
    NoGradGuard ng;
    CHECK(cross_entropy_rows(logits, targets).item() == doctest::Approx(manual).epsilon(1e-12));
  }
  check_gradients({logits}, [&] { return cross_entropy_rows(logits, targets); });
}

TEST_CASE("finite differences: ste_spread routes per-column gate values") {
  Rng rng(31);
  const int n = 4, heads = 2;
  Tensor gate = random_tensor(rng, n, heads);
  auto pattern = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n) * n, 0);
  for (int j = 0; j < n; ++j)
    for (int t = 0; t < j; ++t) (*pattern)[static_cast<size_t>(j) * n + t] = 1;
  Tensor v = random_tensor(rng, n, 3);
  check_gradients({gate, v}, [&] {
    Tensor f0 = ste_spread(gate, 0, pattern, n);
    Tensor f1 = ste_spread(gate, 1, pattern, n);
    return sum_all(add(matmul(f0, v), matmul(f1, v)));
  });

  // forward routing: gated position takes the column gate, rest are 1
  {
    NoGradGuard ng;
    Tensor f = ste_spread(gate, 1, pattern, n);
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < n; ++t) {
        const double got = f.values()[static_cast<size_t>(j) * n + t];
        if ((*pattern)[static_cast<size_t>(j) * n + t])
          CHECK(got == gate.values()[static_cast<size_t>(t) * heads + 1]);
        else
          CHECK(got == 1.0);
      }
  }
}

TEST_CASE("repeated backward accumulates into leaf grads") {
  Tensor x = Tensor::from_values(1, 2, {3.0, -1.0});
  x.set_requires_grad(true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-14));
  CHECK(x.grad()[1] == doctest::Approx(-4.0).epsilon(1e-14));
  x.zero_grad();
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  Tensor x = Tensor::from_values(1, 2, {1.0, 2.0});
  x.set_requires_grad(true);
  NoGradGuard ng;
  Tensor y = sum_all(mul(x, x));
  CHECK_FALSE(y.requires_grad());
}
