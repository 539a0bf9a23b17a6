// Copyright (C) 2026 gatedkv authors
// SPDX-License-Identifier: Apache-2.0

#include "gatedkv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "gatedkv/kernels.hpp"

namespace gatedkv {

namespace {

thread_local bool t_grad_enabled = true;

NodePtr make_node(int rows, int cols) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

// Wires a result node: it requires grad only if grad mode is on and some
// parent requires it; the closure is dropped otherwise so evaluation-only
// forwards carry no graph.
Tensor finish(NodePtr out, std::vector<NodePtr> parents,
              std::function<void(TensorNode&)> fn) {
  bool need = false;
  if (t_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) need = true;
  }
  if (need) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
  }
  return Tensor::wrap(std::move(out));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.rows() == b.rows() && a.cols() == b.cols(),
        std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
            " vs " + shape_str(b.rows(), b.cols()));
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  check(rows > 0 && cols > 0, "Tensor::zeros: non-positive shape " + shape_str(rows, cols));
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_values(int rows, int cols, std::vector<double> v,
                           bool requires_grad) {
  check(v.size() == static_cast<size_t>(rows) * cols,
        "Tensor::from_values: got " + std::to_string(v.size()) +
            " values for shape " + shape_str(rows, cols));
  auto n = make_node(rows, cols);
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_grid(const Grid& g, bool requires_grad) {
  return from_values(g.rows, g.cols, g.v, requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_values(1, 1, {v}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  check(numel() == 1, "Tensor::item: tensor has " + std::to_string(numel()) +
                          " elements, expected 1");
  return node_->value[0];
}

Grid Tensor::to_grid() const {
  Grid g(rows(), cols());
  g.v = node_->value;
  return g;
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(),
        "matmul: inner dimensions disagree, " + shape_str(a.rows(), a.cols()) +
            " * " + shape_str(b.rows(), b.cols()));
  const int m = a.rows(), k = a.cols(), p = b.cols();
  auto out = make_node(m, p);
  kernels::matmul_nn(a.values().data(), b.values().data(), out->value.data(), m,
                     k, p);
  NodePtr pa = a.node(), pb = b.node();
  return finish(out, {pa, pb}, [pa, pb, m, k, p](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA = dC * B^T
      kernels::matmul_nt(self.grad.data(), pb->value.data(), pa->grad.data(), m,
                         p, k, /*accumulate=*/true);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB = A^T * dC
      kernels::matmul_tn(pa->value.data(), self.grad.data(), pb->grad.data(), k,
                         m, p, /*accumulate=*/true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  auto out = make_node(n, m);
  kernels::transpose(a.values().data(), out->value.data(), m, n);
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    kernels::transpose(self.grad.data(), pa->grad.data(), n, m,
                       /*accumulate=*/true);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  NodePtr pa = a.node(), pb = b.node();
  return finish(out, {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  NodePtr pa = a.node(), pb = b.node();
  return finish(out, {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  NodePtr pa = a.node(), pb = b.node();
  return finish(out, {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * s;
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa, s](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + s;
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i)
    out->value[i] = 1.0 / (1.0 + std::exp(-av[i]));
  NodePtr pa = a.node();
  // d/dx = y(1-y), read back from the stored output
  return finish(out, {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      pa->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor silu(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-av[i]));
    out->value[i] = av[i] * s;
  }
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = pa->value[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      pa->grad[i] += self.grad[i] * (s + x * s * (1.0 - s));
    }
  });
}

Tensor abs_val(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = std::fabs(av[i]);
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = pa->value[i];
      // subgradient at the kink is 0
      const double sg = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      pa->grad[i] += self.grad[i] * sg;
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  check(gain.rows() == 1 && gain.cols() == x.cols(),
        "rms_norm: gain must be [1x" + std::to_string(x.cols()) + "], got " +
            shape_str(gain.rows(), gain.cols()));
  const int m = x.rows(), n = x.cols();
  auto out = make_node(m, n);
  std::vector<double> inv(m);
  const auto& xv = x.values();
  const auto& gv = gain.values();
  for (int r = 0; r < m; ++r) {
    double ms = 0.0;
    for (int j = 0; j < n; ++j) ms += xv[r * n + j] * xv[r * n + j];
    ms = ms / n + eps;
    inv[r] = 1.0 / std::sqrt(ms);
    for (int j = 0; j < n; ++j)
      out->value[r * n + j] = xv[r * n + j] * inv[r] * gv[j];
  }
  NodePtr px = x.node(), pg = gain.node();
  return finish(out, {px, pg}, [px, pg, m, n, inv](TensorNode& self) {
    const auto& xv = px->value;
    const auto& gv = pg->value;
    if (pg->requires_grad) {
      pg->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < n; ++j)
          pg->grad[j] += self.grad[r * n + j] * xv[r * n + j] * inv[r];
    }
    if (px->requires_grad) {
      px->ensure_grad();
      for (int r = 0; r < m; ++r) {
        double dot = 0.0;  // sum_j dy_j * g_j * x_j
        for (int j = 0; j < n; ++j)
          dot += self.grad[r * n + j] * gv[j] * xv[r * n + j];
        const double c = inv[r] * inv[r] * inv[r] * dot / n;
        for (int j = 0; j < n; ++j)
          px->grad[r * n + j] +=
              self.grad[r * n + j] * gv[j] * inv[r] - xv[r * n + j] * c;
      }
    }
  });
}

Tensor apply_mask(const Tensor& scores, const Grid& mask01) {
  check(scores.rows() == mask01.rows && scores.cols() == mask01.cols,
        "apply_mask: mask shape " + shape_str(mask01.rows, mask01.cols) +
            " does not match scores " + shape_str(scores.rows(), scores.cols()));
  auto out = make_node(scores.rows(), scores.cols());
  const auto& sv = scores.values();
  for (size_t i = 0; i < sv.size(); ++i)
    out->value[i] = sv[i] + (mask01.v[i] - 1.0) * kMaskInf;
  NodePtr pa = scores.node();
  // additive constant shift: gradient passes through unchanged
  return finish(out, {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  const auto& av = a.values();
  // A row whose every entry sits at the masking floor has no live position;
  // that means a mask dropped the diagonal somewhere upstream.
  for (int r = 0; r < m; ++r) {
    double mx = av[r * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, av[r * n + j]);
    check(mx > -0.5 * kMaskInf,
          "softmax_rows: row " + std::to_string(r) +
              " is fully masked; every row must keep at least one live entry");
  }
  auto out = make_node(m, n);
  kernels::softmax_rows(av.data(), out->value.data(), m, n);
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int r = 0; r < m; ++r) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j)
        dot += self.grad[r * n + j] * self.value[r * n + j];
      for (int j = 0; j < n; ++j)
        pa->grad[r * n + j] +=
            self.value[r * n + j] * (self.grad[r * n + j] - dot);
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const int m = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    check(p.rows() == m, "concat_cols: row mismatch " +
                             shape_str(p.rows(), p.cols()) + " vs " +
                             std::to_string(m) + " rows");
    total += p.cols();
  }
  auto out = make_node(m, total);
  std::vector<NodePtr> parents;
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.cols();
    for (int r = 0; r < m; ++r)
      std::copy_n(p.values().data() + static_cast<size_t>(r) * c, c,
                  out->value.data() + static_cast<size_t>(r) * total + off);
    off += c;
    parents.push_back(p.node());
  }
  return finish(out, parents, [parents, m, total](TensorNode& self) {
    int off = 0;
    for (const auto& p : parents) {
      const int c = p->cols;
      if (p->requires_grad) {
        p->ensure_grad();
        for (int r = 0; r < m; ++r)
          for (int j = 0; j < c; ++j)
            p->grad[static_cast<size_t>(r) * c + j] +=
                self.grad[static_cast<size_t>(r) * total + off + j];
      }
      off += c;
    }
  });
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node(1, 1);
  double s = 0.0;
  for (double v : a.values()) s += v;
  out->value[0] = s;
  NodePtr pa = a.node();
  return finish(out, {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum_all(a), inv);
}

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
  const int v = table.rows(), d = table.cols();
  check(!ids.empty(), "embedding_rows: empty id list");
  for (int id : ids)
    check(id >= 0 && id < v, "embedding_rows: id " + std::to_string(id) +
                                 " outside table with " + std::to_string(v) +
                                 " rows");
  const int n = static_cast<int>(ids.size());
  auto out = make_node(n, d);
  for (int r = 0; r < n; ++r)
    std::copy_n(table.values().data() + static_cast<size_t>(ids[r]) * d, d,
                out->value.data() + static_cast<size_t>(r) * d);
  NodePtr pt = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return finish(out, {pt}, [pt, idv, d](TensorNode& self) {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (size_t r = 0; r < idv.size(); ++r)
      for (int j = 0; j < d; ++j)
        pt->grad[static_cast<size_t>(idv[r]) * d + j] += self.grad[r * d + j];
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets) {
  const int n = logits.rows(), v = logits.cols();
  check(static_cast<int>(targets.size()) == n,
        "cross_entropy_rows: " + std::to_string(targets.size()) +
            " targets for " + std::to_string(n) + " rows");
  for (int t : targets)
    check(t >= 0 && t < v, "cross_entropy_rows: target " + std::to_string(t) +
                               " outside vocab of " + std::to_string(v));
  const auto& lv = logits.values();
  auto out = make_node(1, 1);
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = lv.data() + static_cast<size_t>(r) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    total += mx + std::log(sum) - row[targets[r]];
  }
  out->value[0] = total / n;
  NodePtr pl = logits.node();
  std::vector<int> tv(targets.begin(), targets.end());
  return finish(out, {pl}, [pl, tv, n, v](TensorNode& self) {
    if (!pl->requires_grad) return;
    pl->ensure_grad();
    const double g = self.grad[0] / n;
    for (int r = 0; r < n; ++r) {
      const double* row = pl->value.data() + static_cast<size_t>(r) * v;
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
      double* grow = pl->grad.data() + static_cast<size_t>(r) * v;
      for (int j = 0; j < v; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        grow[j] += g * (p - (j == tv[r] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor ste_spread(const Tensor& gate_nh, int head,
                  std::shared_ptr<const std::vector<uint8_t>> pattern, int n) {
  const int h = gate_nh.cols();
  check(gate_nh.rows() == n, "ste_spread: gate has " +
                                 std::to_string(gate_nh.rows()) +
                                 " rows, expected " + std::to_string(n));
  check(head >= 0 && head < h,
        "ste_spread: head " + std::to_string(head) + " out of " +
            std::to_string(h));
  check(pattern && pattern->size() == static_cast<size_t>(n) * n,
        "ste_spread: pattern size mismatch");
  auto out = make_node(n, n);
  const auto& gv = gate_nh.values();
  for (int j = 0; j < n; ++j)
    for (int t = 0; t < n; ++t)
      out->value[static_cast<size_t>(j) * n + t] =
          (*pattern)[static_cast<size_t>(j) * n + t] ? gv[t * h + head] : 1.0;
  NodePtr pg = gate_nh.node();
  return finish(out, {pg}, [pg, head, pattern, n, h](TensorNode& self) {
    if (!pg->requires_grad) return;
    pg->ensure_grad();
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < n; ++t)
        if ((*pattern)[static_cast<size_t>(j) * n + t])
          pg->grad[static_cast<size_t>(t) * h + head] +=
              self.grad[static_cast<size_t>(j) * n + t];
  });
}

void backward(const Tensor& loss) {
  check(loss.defined(), "backward: undefined tensor");
  check(loss.numel() == 1, "backward: loss must be scalar, got " +
                               shape_str(loss.rows(), loss.cols()));
  // reverse topological order via iterative post-order DFS
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* next = node->parents[idx++].get();
      if (seen.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior nodes get a fresh gradient each sweep; only leaves (parameters)
  // accumulate across repeated backward calls.
  for (TensorNode* node : order)
    if (node->backward_fn) node->grad.assign(node->value.size(), 0.0);
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn && node->requires_grad) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

}  // namespace gatedkv
