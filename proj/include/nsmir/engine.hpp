// nsmir/engine.hpp
//
// Copyright 2026 NSMIR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nsmir/common.hpp"

namespace nsmir::engine {

// Reverse-mode tape. One Graph per forward/backward pass; nodes are created
// in topological order by construction and backward walks them in exact
// reverse order. Single-threaded within a graph; independent graphs may run
// in parallel.

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

struct Node;
class Graph;

struct Node {
  std::vector<int> shape;
  std::vector<float> value;        // owned storage (empty for external leaves)
  const float* ext = nullptr;      // external leaf storage (model parameters)
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<Node*> parents;
  std::function<void(Node&)> backward_fn;
  Graph* graph = nullptr;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  const float* data() const { return ext != nullptr ? ext : value.data(); }
  float* mutable_value() { return value.data(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(size_t(numel()), 0.0f);
  }
};

// Value-semantic handle; the graph owns the node.
struct Tensor {
  Node* node = nullptr;

  const std::vector<int>& shape() const { return node->shape; }
  int dim(int i) const { return node->shape[size_t(i)]; }
  int rank() const { return int(node->shape.size()); }
  int64_t numel() const { return node->numel(); }
  std::span<const float> data() const { return {node->data(), size_t(node->numel())}; }
  std::span<const float> grad() const { return {node->grad.data(), node->grad.size()}; }
  bool requires_grad() const { return node->requires_grad; }
  float scalar() const {
    if (node->numel() != 1) throw ShapeError("scalar() on non-scalar tensor");
    return node->data()[0];
  }
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf holding a copy of the given values.
  Tensor constant(std::vector<int> shape, std::vector<float> values) {
    Node* n = alloc(std::move(shape));
    if (int64_t(values.size()) != n->numel()) throw ShapeError("constant: value count != shape product");
    n->value = std::move(values);
    check_finite(*n, "constant");
    return {n};
  }

  // Leaf viewing external storage. Used for model parameters (with grad)
  // and large inputs like spectrograms (without).
  Tensor leaf(std::vector<int> shape, const float* ext_data, bool requires_grad) {
    Node* n = alloc(std::move(shape));
    n->ext = ext_data;
    n->requires_grad = requires_grad;
    check_finite(*n, "leaf");
    return {n};
  }

  void backward(Tensor loss) {
    if (loss.node->graph != this) throw ParamError("backward: tensor from another graph");
    if (loss.node->numel() != 1) throw ShapeError("backward: loss must be scalar");
    if (backward_done_) throw ParamError("backward already ran on this graph");
    backward_done_ = true;
    loss.node->ensure_grad();
    loss.node->grad[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.grad.empty() || !n.backward_fn || !n.requires_grad) continue;
      n.backward_fn(n);
    }
  }

  bool backward_done() const { return backward_done_; }
  size_t size() const { return nodes_.size(); }

  Node* alloc(std::vector<int> shape) {
    for (int d : shape) {
      if (d <= 0) throw ShapeError("non-positive dimension");
    }
    nodes_.push_back(std::make_unique<Node>());
    Node* n = nodes_.back().get();
    n->shape = std::move(shape);
    n->graph = this;
    return n;
  }

  static void check_finite(const Node& n, const char* op) {
    const float* p = n.data();
    const int64_t count = n.numel();
    for (int64_t i = 0; i < count; ++i) {
      if (!std::isfinite(p[i])) throw NumericError(std::string(op) + ": non-finite value produced");
    }
  }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

namespace detail {

inline Graph& graph_of(Tensor t) { return *t.node->graph; }

inline void same_graph(Tensor a, Tensor b) {
  if (a.node->graph != b.node->graph) throw ParamError("tensors from different graphs");
}

inline Node* make(Graph& g, std::vector<int> shape, std::vector<Node*> parents) {
  Node* n = g.alloc(std::move(shape));
  n->parents = std::move(parents);
  for (Node* p : n->parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->value.assign(size_t(n->numel()), 0.0f);
  return n;
}

inline void accumulate(Node* parent, const float* g, int64_t count) {
  if (!parent->requires_grad) return;
  parent->ensure_grad();
  for (int64_t i = 0; i < count; ++i) parent->grad[size_t(i)] += g[size_t(i)];
}

// shape split around an axis: [outer, axis, inner]
inline void axis_split(const std::vector<int>& shape, int axis, int64_t& outer, int64_t& ax, int64_t& inner) {
  if (axis < 0 || axis >= int(shape.size())) throw ShapeError("axis out of range");
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[size_t(i)];
  ax = shape[size_t(axis)];
  for (int i = axis + 1; i < int(shape.size()); ++i) inner *= shape[size_t(i)];
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Elementwise and broadcast ops.

inline Tensor add(Tensor a, Tensor b) {
  detail::same_graph(a, b);
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  Node* n = detail::make(detail::graph_of(a), a.shape(), {a.node, b.node});
  const int64_t count = n->numel();
  const float* pa = a.node->data();
  const float* pb = b.node->data();
  for (int64_t i = 0; i < count; ++i) n->value[size_t(i)] = pa[size_t(i)] + pb[size_t(i)];
  Graph::check_finite(*n, "add");
  n->backward_fn = [](Node& self) {
    detail::accumulate(self.parents[0], self.grad.data(), self.numel());
    detail::accumulate(self.parents[1], self.grad.data(), self.numel());
  };
  return {n};
}

inline Tensor mul(Tensor a, Tensor b) {
  detail::same_graph(a, b);
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Node* n = detail::make(detail::graph_of(a), a.shape(), {a.node, b.node});
  const int64_t count = n->numel();
  const float* pa = a.node->data();
  const float* pb = b.node->data();
  for (int64_t i = 0; i < count; ++i) n->value[size_t(i)] = pa[size_t(i)] * pb[size_t(i)];
  Graph::check_finite(*n, "mul");
  n->backward_fn = [](Node& self) {
    Node* a = self.parents[0];
    Node* b = self.parents[1];
    const int64_t count = self.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      const float* pb = b->data();
      for (int64_t i = 0; i < count; ++i) a->grad[size_t(i)] += self.grad[size_t(i)] * pb[size_t(i)];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      const float* pa = a->data();
      for (int64_t i = 0; i < count; ++i) b->grad[size_t(i)] += self.grad[size_t(i)] * pa[size_t(i)];
    }
  };
  return {n};
}

inline Tensor scale(Tensor x, float c) {
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node});
  const int64_t count = n->numel();
  const float* p = x.node->data();
  for (int64_t i = 0; i < count; ++i) n->value[size_t(i)] = p[size_t(i)] * c;
  Graph::check_finite(*n, "scale");
  n->backward_fn = [c](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int64_t i = 0; i < self.numel(); ++i) a->grad[size_t(i)] += self.grad[size_t(i)] * c;
  };
  return {n};
}

// x [..., d] + b [d], broadcast over leading dims.
inline Tensor add_bias(Tensor x, Tensor b) {
  detail::same_graph(x, b);
  if (b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0)) throw ShapeError("add_bias: last dim mismatch");
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node, b.node});
  const int64_t d = b.dim(0);
  const int64_t rows = n->numel() / d;
  const float* px = x.node->data();
  const float* pb = b.node->data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t i = 0; i < d; ++i) n->value[size_t(r * d + i)] = px[size_t(r * d + i)] + pb[size_t(i)];
  }
  Graph::check_finite(*n, "add_bias");
  n->backward_fn = [d, rows](Node& self) {
    Node* x = self.parents[0];
    Node* b = self.parents[1];
    if (x->requires_grad) detail::accumulate(x, self.grad.data(), self.numel());
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t i = 0; i < d; ++i) b->grad[size_t(i)] += self.grad[size_t(r * d + i)];
      }
    }
  };
  return {n};
}

inline Tensor relu(Tensor x) {
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node});
  const float* p = x.node->data();
  for (int64_t i = 0; i < n->numel(); ++i) n->value[size_t(i)] = p[size_t(i)] > 0.0f ? p[size_t(i)] : 0.0f;
  n->backward_fn = [](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float* p = a->data();
    for (int64_t i = 0; i < self.numel(); ++i) {
      if (p[size_t(i)] > 0.0f) a->grad[size_t(i)] += self.grad[size_t(i)];
    }
  };
  return {n};
}

// Exact gelu: x * Phi(x) with the Gaussian CDF.
inline Tensor gelu(Tensor x) {
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node});
  const float* p = x.node->data();
  for (int64_t i = 0; i < n->numel(); ++i) {
    const double v = p[size_t(i)];
    n->value[size_t(i)] = float(v * 0.5 * (1.0 + std::erf(v / M_SQRT2)));
  }
  Graph::check_finite(*n, "gelu");
  n->backward_fn = [](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float* p = a->data();
    for (int64_t i = 0; i < self.numel(); ++i) {
      const double v = p[size_t(i)];
      const double cdf = 0.5 * (1.0 + std::erf(v / M_SQRT2));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      a->grad[size_t(i)] += self.grad[size_t(i)] * float(cdf + v * pdf);
    }
  };
  return {n};
}

inline Tensor sigmoid(Tensor x) {
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node});
  const float* p = x.node->data();
  for (int64_t i = 0; i < n->numel(); ++i) {
    const double v = p[size_t(i)];
    n->value[size_t(i)] = float(1.0 / (1.0 + std::exp(-v)));
  }
  Graph::check_finite(*n, "sigmoid");
  n->backward_fn = [](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int64_t i = 0; i < self.numel(); ++i) {
      const float y = self.value[size_t(i)];
      a->grad[size_t(i)] += self.grad[size_t(i)] * y * (1.0f - y);
    }
  };
  return {n};
}

// ----------------------------------------------------------------------------
// Linear algebra.

inline Tensor matmul(Tensor a, Tensor b) {
  detail::same_graph(a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError("matmul: bad shapes");
  const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  Node* n = detail::make(detail::graph_of(a), {m, nn}, {a.node, b.node});
  CMatMap A(a.node->data(), m, k);
  CMatMap B(b.node->data(), k, nn);
  MatMap C(n->value.data(), m, nn);
  C.noalias() = A * B;
  Graph::check_finite(*n, "matmul");
  n->backward_fn = [m, k, nn](Node& self) {
    Node* a = self.parents[0];
    Node* b = self.parents[1];
    CMatMap G(self.grad.data(), m, nn);
    if (a->requires_grad) {
      a->ensure_grad();
      CMatMap B(b->data(), k, nn);
      MatMap GA(a->grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      CMatMap A(a->data(), m, k);
      MatMap GB(b->grad.data(), k, nn);
      GB.noalias() += A.transpose() * G;
    }
  };
  return {n};
}

// Batched matmul over the leading dim, with optional operand transposes and
// a constant output scale (covers attention-score scaling without an extra
// materialized node).
inline Tensor bmm(Tensor a, Tensor b, bool trans_a = false, bool trans_b = false, float out_scale = 1.0f) {
  detail::same_graph(a, b);
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) throw ShapeError("bmm: bad shapes");
  const int batch = a.dim(0);
  const int am = trans_a ? a.dim(2) : a.dim(1);
  const int ak = trans_a ? a.dim(1) : a.dim(2);
  const int bk = trans_b ? b.dim(2) : b.dim(1);
  const int bn = trans_b ? b.dim(1) : b.dim(2);
  if (ak != bk) throw ShapeError("bmm: inner dims mismatch");
  Node* n = detail::make(detail::graph_of(a), {batch, am, bn}, {a.node, b.node});

  const int64_t sa = int64_t(a.dim(1)) * a.dim(2);
  const int64_t sb = int64_t(b.dim(1)) * b.dim(2);
  const int64_t sc = int64_t(am) * bn;
  for (int i = 0; i < batch; ++i) {
    CMatMap A(a.node->data() + i * sa, a.dim(1), a.dim(2));
    CMatMap B(b.node->data() + i * sb, b.dim(1), b.dim(2));
    MatMap C(n->value.data() + i * sc, am, bn);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
    if (out_scale != 1.0f) C *= out_scale;
  }
  Graph::check_finite(*n, "bmm");

  n->backward_fn = [batch, am, bn, sa, sb, sc, trans_a, trans_b, out_scale](Node& self) {
    Node* a = self.parents[0];
    Node* b = self.parents[1];
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    for (int i = 0; i < batch; ++i) {
      CMatMap G(self.grad.data() + i * sc, am, bn);
      CMatMap A(a->data() + i * sa, a->shape[1], a->shape[2]);
      CMatMap B(b->data() + i * sb, b->shape[1], b->shape[2]);
      if (a->requires_grad) {
        MatMap GA(a->grad.data() + i * sa, a->shape[1], a->shape[2]);
        if (!trans_a && !trans_b) GA.noalias() += out_scale * (G * B.transpose());
        else if (trans_a && !trans_b) GA.noalias() += out_scale * (B * G.transpose());
        else if (!trans_a && trans_b) GA.noalias() += out_scale * (G * B);
        else GA.noalias() += out_scale * (B.transpose() * G.transpose());
      }
      if (b->requires_grad) {
        MatMap GB(b->grad.data() + i * sb, b->shape[1], b->shape[2]);
        if (!trans_a && !trans_b) GB.noalias() += out_scale * (A.transpose() * G);
        else if (trans_a && !trans_b) GB.noalias() += out_scale * (A * G);
        else if (!trans_a && trans_b) GB.noalias() += out_scale * (G.transpose() * A);
        else GB.noalias() += out_scale * (G.transpose() * A.transpose());
      }
    }
  };
  return {n};
}

inline Tensor transpose2(Tensor x) {
  if (x.rank() != 2) throw ShapeError("transpose2: rank must be 2");
  const int m = x.dim(0), nn = x.dim(1);
  Node* n = detail::make(detail::graph_of(x), {nn, m}, {x.node});
  CMatMap X(x.node->data(), m, nn);
  MatMap Y(n->value.data(), nn, m);
  Y.noalias() = X.transpose();
  n->backward_fn = [m, nn](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    CMatMap G(self.grad.data(), nn, m);
    MatMap GA(a->grad.data(), m, nn);
    GA.noalias() += G.transpose();
  };
  return {n};
}

// 3D axis permutation.
inline Tensor permute3(Tensor x, int p0, int p1, int p2) {
  if (x.rank() != 3) throw ShapeError("permute3: rank must be 3");
  int perm[3] = {p0, p1, p2};
  bool seen[3] = {false, false, false};
  for (int i : perm) {
    if (i < 0 || i > 2 || seen[i]) throw ShapeError("permute3: bad permutation");
    seen[i] = true;
  }
  const int in_d[3] = {x.dim(0), x.dim(1), x.dim(2)};
  Node* n = detail::make(detail::graph_of(x), {in_d[p0], in_d[p1], in_d[p2]}, {x.node});
  const int64_t in_stride[3] = {int64_t(in_d[1]) * in_d[2], in_d[2], 1};
  const float* src = x.node->data();
  int64_t idx = 0;
  for (int i = 0; i < in_d[p0]; ++i) {
    for (int j = 0; j < in_d[p1]; ++j) {
      for (int k = 0; k < in_d[p2]; ++k) {
        n->value[size_t(idx++)] =
            src[size_t(i * in_stride[p0] + j * in_stride[p1] + k * in_stride[p2])];
      }
    }
  }
  n->backward_fn = [p0, p1, p2, in_d, in_stride](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    int64_t idx = 0;
    for (int i = 0; i < in_d[p0]; ++i) {
      for (int j = 0; j < in_d[p1]; ++j) {
        for (int k = 0; k < in_d[p2]; ++k) {
          a->grad[size_t(i * in_stride[p0] + j * in_stride[p1] + k * in_stride[p2])] +=
              self.grad[size_t(idx++)];
        }
      }
    }
  };
  return {n};
}

inline Tensor reshape(Tensor x, std::vector<int> new_shape) {
  int64_t count = 1;
  for (int d : new_shape) count *= d;
  if (count != x.numel()) throw ShapeError("reshape: element count mismatch");
  Node* n = detail::make(detail::graph_of(x), std::move(new_shape), {x.node});
  std::copy(x.node->data(), x.node->data() + x.numel(), n->value.begin());
  n->backward_fn = [](Node& self) {
    detail::accumulate(self.parents[0], self.grad.data(), self.numel());
  };
  return {n};
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto shape = parts[0].shape();
  int64_t outer, ax0, inner;
  detail::axis_split(shape, axis, outer, ax0, inner);
  int total_axis = 0;
  std::vector<Node*> parents;
  for (const auto& t : parts) {
    detail::same_graph(parts[0], t);
    auto s = t.shape();
    if (int(s.size()) != int(shape.size())) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < int(s.size()); ++i) {
      if (i != axis && s[size_t(i)] != shape[size_t(i)]) throw ShapeError("concat: dim mismatch");
    }
    total_axis += s[size_t(axis)];
    parents.push_back(t.node);
  }
  shape[size_t(axis)] = total_axis;
  Node* n = detail::make(detail::graph_of(parts[0]), shape, parents);
  int64_t off = 0;
  for (const auto& t : parts) {
    int64_t o2, a2, i2;
    detail::axis_split(t.shape(), axis, o2, a2, i2);
    const float* src = t.node->data();
    for (int64_t o = 0; o < o2; ++o) {
      std::copy(src + o * a2 * i2, src + (o + 1) * a2 * i2,
                n->value.begin() + o * total_axis * inner + off * inner);
    }
    off += a2;
  }
  const int64_t n_inner = inner;
  const int64_t n_outer = outer;
  const int64_t n_axis = total_axis;
  n->backward_fn = [axis, n_inner, n_outer, n_axis](Node& self) {
    int64_t off = 0;
    for (Node* p : self.parents) {
      int64_t o2, a2, i2;
      detail::axis_split(p->shape, axis, o2, a2, i2);
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t o = 0; o < n_outer; ++o) {
          const float* g = self.grad.data() + o * n_axis * n_inner + off * n_inner;
          float* dst = p->grad.data() + o * a2 * i2;
          for (int64_t i = 0; i < a2 * i2; ++i) dst[size_t(i)] += g[size_t(i)];
        }
      }
      off += a2;
    }
  };
  return {n};
}

inline Tensor slice(Tensor x, int axis, int start, int len) {
  int64_t outer, ax, inner;
  detail::axis_split(x.shape(), axis, outer, ax, inner);
  if (start < 0 || len <= 0 || start + len > ax) throw ShapeError("slice: range out of bounds");
  auto shape = x.shape();
  shape[size_t(axis)] = len;
  Node* n = detail::make(detail::graph_of(x), shape, {x.node});
  const float* src = x.node->data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(src + (o * ax + start) * inner, src + (o * ax + start + len) * inner,
              n->value.begin() + o * len * inner);
  }
  n->backward_fn = [outer, ax, inner, start, len](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      const float* g = self.grad.data() + o * len * inner;
      float* dst = a->grad.data() + (o * ax + start) * inner;
      for (int64_t i = 0; i < len * inner; ++i) dst[size_t(i)] += g[size_t(i)];
    }
  };
  return {n};
}

// ----------------------------------------------------------------------------
// Normalization / activation over rows.

inline Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, float eps = 1e-5f) {
  detail::same_graph(x, gamma);
  detail::same_graph(x, beta);
  const int d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d)
    throw ShapeError("layer_norm: gamma/beta must match last dim");
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node, gamma.node, beta.node});
  const int64_t rows = n->numel() / d;
  const float* px = x.node->data();
  const float* pg = gamma.node->data();
  const float* pb = beta.node->data();

  auto* saved = new std::vector<float>(size_t(rows) * 2);  // mean, inv_std per row
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    (*saved)[size_t(r * 2)] = float(mean);
    (*saved)[size_t(r * 2 + 1)] = float(inv_std);
    float* out = n->value.data() + r * d;
    for (int i = 0; i < d; ++i) out[i] = float((row[i] - mean) * inv_std) * pg[i] + pb[i];
  }
  Graph::check_finite(*n, "layer_norm");
  std::shared_ptr<std::vector<float>> keep(saved);
  n->backward_fn = [d, rows, keep](Node& self) {
    Node* x = self.parents[0];
    Node* gamma = self.parents[1];
    Node* beta = self.parents[2];
    const float* px = x->data();
    const float* pg = gamma->data();
    if (x->requires_grad) x->ensure_grad();
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const float mean = (*keep)[size_t(r * 2)];
      const float inv_std = (*keep)[size_t(r * 2 + 1)];
      const float* row = px + r * d;
      const float* g = self.grad.data() + r * d;
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < d; ++i) {
        const double xhat = (row[i] - mean) * inv_std;
        const double gg = double(g[i]) * pg[i];
        sum_g += gg;
        sum_gx += gg * xhat;
        if (gamma->requires_grad) gamma->grad[size_t(i)] += g[i] * float(xhat);
        if (beta->requires_grad) beta->grad[size_t(i)] += g[i];
      }
      if (x->requires_grad) {
        for (int i = 0; i < d; ++i) {
          const double xhat = (row[i] - mean) * inv_std;
          const double gg = double(g[i]) * pg[i];
          x->grad[size_t(r * d + i)] += float(inv_std * (gg - sum_g / d - xhat * sum_gx / d));
        }
      }
    }
  };
  return {n};
}

// Softmax over the last axis. Rows sum to 1 within 1e-6.
inline Tensor softmax(Tensor x) {
  const int d = x.dim(x.rank() - 1);
  Node* n = detail::make(detail::graph_of(x), x.shape(), {x.node});
  const int64_t rows = n->numel() / d;
  const float* px = x.node->data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * d;
    float mx = row[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    float* out = n->value.data() + r * d;
    for (int i = 0; i < d; ++i) {
      out[i] = float(std::exp(double(row[i]) - mx));
      sum += out[i];
    }
    for (int i = 0; i < d; ++i) out[i] = float(out[i] / sum);
  }
  Graph::check_finite(*n, "softmax");
  n->backward_fn = [d, rows](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const float* y = self.value.data() + r * d;
      const float* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += double(y[i]) * g[i];
      for (int i = 0; i < d; ++i) a->grad[size_t(r * d + i)] += y[i] * float(g[i] - dot);
    }
  };
  return {n};
}

// ----------------------------------------------------------------------------
// Convolution / pooling on [C, H, W].

inline Tensor conv2d(Tensor x, Tensor w, Tensor b) {
  detail::same_graph(x, w);
  detail::same_graph(x, b);
  if (x.rank() != 3 || w.rank() != 4) throw ShapeError("conv2d: x must be [C,H,W], w [O,C,kh,kw]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw ShapeError("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel dims must be odd");
  if (b.rank() != 1 || b.dim(0) != O) throw ShapeError("conv2d: bias must be [O]");

  Node* n = detail::make(detail::graph_of(x), {O, H, W}, {x.node, w.node, b.node});

  // im2col, zero padding: col[(c*kh+i)*kw+j][h*W+w]
  const int K = C * kh * kw;
  const int64_t P = int64_t(H) * W;
  auto col = std::make_shared<std::vector<float>>(size_t(K) * P, 0.0f);
  const float* px = x.node->data();
  const int ph = kh / 2, pw = kw / 2;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        float* dst = col->data() + (int64_t(c) * kh * kw + i * kw + j) * P;
        const int dy = i - ph, dx = j - pw;
        for (int h = 0; h < H; ++h) {
          const int sh = h + dy;
          if (sh < 0 || sh >= H) continue;
          const int w0 = std::max(0, -dx);
          const int w1 = std::min(W, W - dx);
          const float* srow = px + (int64_t(c) * H + sh) * W + dx;
          float* drow = dst + int64_t(h) * W;
          for (int ww = w0; ww < w1; ++ww) drow[ww] = srow[ww];
        }
      }
    }
  }
  {
    CMatMap Wm(w.node->data(), O, K);
    CMatMap Cm(col->data(), K, int(P));
    MatMap Y(n->value.data(), O, int(P));
    Y.noalias() = Wm * Cm;
    const float* pb = b.node->data();
    for (int o = 0; o < O; ++o) {
      float* row = n->value.data() + int64_t(o) * P;
      for (int64_t p = 0; p < P; ++p) row[size_t(p)] += pb[o];
    }
  }
  Graph::check_finite(*n, "conv2d");

  n->backward_fn = [C, H, W, O, kh, kw, K, P, col](Node& self) {
    Node* x = self.parents[0];
    Node* w = self.parents[1];
    Node* b = self.parents[2];
    CMatMap G(self.grad.data(), O, int(P));
    if (b->requires_grad) {
      b->ensure_grad();
      for (int o = 0; o < O; ++o) b->grad[size_t(o)] += G.row(o).sum();
    }
    if (w->requires_grad) {
      w->ensure_grad();
      CMatMap Cm(col->data(), K, int(P));
      MatMap GW(w->grad.data(), O, K);
      GW.noalias() += G * Cm.transpose();
    }
    if (x->requires_grad) {
      x->ensure_grad();
      RowMat Gcol(K, int(P));
      CMatMap Wm(w->data(), O, K);
      Gcol.noalias() = Wm.transpose() * G;
      const int ph = kh / 2, pw = kw / 2;
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
          for (int j = 0; j < kw; ++j) {
            const float* src = Gcol.data() + (int64_t(c) * kh * kw + i * kw + j) * P;
            const int dy = i - ph, dx = j - pw;
            for (int h = 0; h < H; ++h) {
              const int sh = h + dy;
              if (sh < 0 || sh >= H) continue;
              const int w0 = std::max(0, -dx);
              const int w1 = std::min(W, W - dx);
              float* drow = x->grad.data() + (int64_t(c) * H + sh) * W + dx;
              const float* grow = src + int64_t(h) * W;
              for (int ww = w0; ww < w1; ++ww) drow[ww] += grow[ww];
            }
          }
        }
      }
    }
  };
  return {n};
}

inline Tensor maxpool2d(Tensor x, int ph, int pw) {
  if (x.rank() != 3) throw ShapeError("maxpool2d: x must be [C,H,W]");
  if (ph <= 0 || pw <= 0) throw ShapeError("maxpool2d: window must be positive");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int OH = H / ph, OW = W / pw;
  if (OH == 0 || OW == 0) throw ShapeError("maxpool2d: window larger than input");
  Node* n = detail::make(detail::graph_of(x), {C, OH, OW}, {x.node});
  auto argmax = std::make_shared<std::vector<int64_t>>(size_t(C) * OH * OW);
  const float* px = x.node->data();
  int64_t oi = 0;
  for (int c = 0; c < C; ++c) {
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow, ++oi) {
        float best = -std::numeric_limits<float>::infinity();
        int64_t best_idx = 0;
        for (int i = 0; i < ph; ++i) {
          for (int j = 0; j < pw; ++j) {
            const int64_t idx = (int64_t(c) * H + oh * ph + i) * W + ow * pw + j;
            if (px[size_t(idx)] > best) {
              best = px[size_t(idx)];
              best_idx = idx;
            }
          }
        }
        n->value[size_t(oi)] = best;
        (*argmax)[size_t(oi)] = best_idx;
      }
    }
  }
  n->backward_fn = [argmax](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int64_t i = 0; i < self.numel(); ++i) {
      a->grad[size_t((*argmax)[size_t(i)])] += self.grad[size_t(i)];
    }
  };
  return {n};
}

// ----------------------------------------------------------------------------
// Reductions and losses.

inline Tensor sum_all(Tensor x) {
  Node* n = detail::make(detail::graph_of(x), {1}, {x.node});
  double acc = 0.0;
  const float* p = x.node->data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += p[size_t(i)];
  n->value[0] = float(acc);
  Graph::check_finite(*n, "sum");
  n->backward_fn = [](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float g = self.grad[0];
    for (auto& v : a->grad) v += g;
  };
  return {n};
}

inline Tensor mean_all(Tensor x) { return scale(sum_all(x), 1.0f / float(x.numel())); }

// Cross entropy with fused log-softmax; target rows must sum to 1 (soft
// targets welcome). Mean over rows. Stable for logits up to ~1e4.
inline Tensor cross_entropy(Tensor logits, std::span<const float> target) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [T,C]");
  const int T = logits.dim(0), C = logits.dim(1);
  if (int64_t(target.size()) != int64_t(T) * C) throw ShapeError("cross_entropy: target size mismatch");
  for (int t = 0; t < T; ++t) {
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += target[size_t(t) * C + c];
    if (std::abs(sum - 1.0) > 1e-4) throw ParamError("cross_entropy: target row must sum to 1");
  }
  Node* n = detail::make(detail::graph_of(logits), {1}, {logits.node});
  auto probs = std::make_shared<std::vector<float>>(size_t(T) * C);
  const float* pl = logits.node->data();
  double loss = 0.0;
  for (int t = 0; t < T; ++t) {
    const float* row = pl + int64_t(t) * C;
    float mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double lse = 0.0;
    for (int c = 0; c < C; ++c) lse += std::exp(double(row[c]) - mx);
    lse = std::log(lse) + mx;
    for (int c = 0; c < C; ++c) {
      const double logp = double(row[c]) - lse;
      (*probs)[size_t(t) * C + c] = float(std::exp(logp));
      loss -= double(target[size_t(t) * C + c]) * logp;
    }
  }
  n->value[0] = float(loss / T);
  Graph::check_finite(*n, "cross_entropy");
  std::vector<float> tgt(target.begin(), target.end());
  n->backward_fn = [T, C, probs, tgt = std::move(tgt)](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float g = self.grad[0] / float(T);
    for (int64_t i = 0; i < int64_t(T) * C; ++i) {
      a->grad[size_t(i)] += g * ((*probs)[size_t(i)] - tgt[size_t(i)]);
    }
  };
  return {n};
}

// Binary cross entropy on logits, numerically stable, mean over elements.
inline Tensor bce_logits(Tensor logits, std::span<const float> target) {
  const int64_t count = logits.numel();
  if (int64_t(target.size()) != count) throw ShapeError("bce_logits: target size mismatch");
  Node* n = detail::make(detail::graph_of(logits), {1}, {logits.node});
  const float* p = logits.node->data();
  double loss = 0.0;
  for (int64_t i = 0; i < count; ++i) {
    const double x = p[size_t(i)];
    const double t = target[size_t(i)];
    loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  n->value[0] = float(loss / double(count));
  Graph::check_finite(*n, "bce_logits");
  std::vector<float> tgt(target.begin(), target.end());
  n->backward_fn = [count, tgt = std::move(tgt)](Node& self) {
    Node* a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float g = self.grad[0] / float(count);
    const float* p = a->data();
    for (int64_t i = 0; i < count; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-double(p[size_t(i)])));
      a->grad[size_t(i)] += g * float(s - tgt[size_t(i)]);
    }
  };
  return {n};
}

// ----------------------------------------------------------------------------
// Trainable harmonic filterbank applied to a constant spectrogram.
// Triangular band-passes at h * center for h in 1..n_harm, relative width
// alpha; output [n_harm * n_filters, T]. Gradients flow into centers/alpha
// only (the spectrogram is an input).

inline Tensor harmonic_filter(std::span<const float> spec, int f_bins, int frames, Tensor centers,
                              Tensor alpha, int n_harm, int sample_rate_hz, int win) {
  if (centers.rank() != 1) throw ShapeError("harmonic_filter: centers must be 1-D");
  if (alpha.numel() != 1) throw ShapeError("harmonic_filter: alpha must be scalar");
  detail::same_graph(centers, alpha);
  const int F = centers.dim(0);
  const double df = double(sample_rate_hz) / win;  // bin spacing
  const double nyquist = sample_rate_hz / 2.0;

  Node* n = detail::make(detail::graph_of(centers), {n_harm * F, frames}, {centers.node, alpha.node});
  const float* pc = centers.node->data();
  const float a = alpha.node->data()[0];
  if (a <= 0.0f) throw NumericError("harmonic_filter: alpha must stay positive");

  auto supports = std::make_shared<std::vector<std::pair<int, int>>>(size_t(n_harm) * F);
  for (int h = 0; h < n_harm; ++h) {
    for (int f = 0; f < F; ++f) {
      const double c = double(h + 1) * pc[f];
      const double wd = double(a) * c;
      int b0 = int(std::ceil((c - wd) / df));
      int b1 = int(std::floor((c + wd) / df));
      b0 = std::max(b0, 0);
      b1 = std::min(b1, f_bins - 1);
      if (c >= nyquist || wd <= 0.0 || b0 > b1) {
        (*supports)[size_t(h) * F + f] = {0, -1};
        continue;
      }
      (*supports)[size_t(h) * F + f] = {b0, b1};
      float* out = n->value.data() + (int64_t(h) * F + f) * frames;
      for (int b = b0; b <= b1; ++b) {
        const double wgt = 1.0 - std::abs(b * df - c) / wd;
        if (wgt <= 0.0) continue;
        const float* srow = spec.data() + int64_t(b) * frames;
        const float fw = float(wgt);
        for (int t = 0; t < frames; ++t) out[t] += fw * srow[t];
      }
    }
  }
  Graph::check_finite(*n, "harmonic_filter");

  std::vector<float> spec_copy(spec.begin(), spec.end());
  n->backward_fn = [F, f_bins, frames, n_harm, df, supports,
                    spec_copy = std::move(spec_copy)](Node& self) {
    Node* centers = self.parents[0];
    Node* alpha = self.parents[1];
    const float* pc = centers->data();
    const double a = alpha->data()[0];
    if (centers->requires_grad) centers->ensure_grad();
    if (alpha->requires_grad) alpha->ensure_grad();
    for (int h = 0; h < n_harm; ++h) {
      for (int f = 0; f < F; ++f) {
        const auto [b0, b1] = (*supports)[size_t(h) * F + f];
        if (b0 > b1) continue;
        const double c = double(h + 1) * pc[f];
        const double wd = a * c;
        const float* g = self.grad.data() + (int64_t(h) * F + f) * frames;
        double dc_acc = 0.0, da_acc = 0.0;
        for (int b = b0; b <= b1; ++b) {
          const double u = std::abs(b * df - c);
          if (u >= wd) continue;
          double gs = 0.0;  // sum_t g * spec[b, t]
          const float* srow = spec_copy.data() + int64_t(b) * frames;
          for (int t = 0; t < frames; ++t) gs += double(g[t]) * srow[t];
          const double sgn = (c - b * df) >= 0.0 ? 1.0 : -1.0;
          // w = 1 - u / (a c): dw/dc = -(sgn*c - u) / (a c^2), dw/da = u / (a^2 c)
          dc_acc += gs * (-(sgn * c - u) / (a * c * c)) * double(h + 1);
          da_acc += gs * (u / (a * a * c));
        }
        if (centers->requires_grad) centers->grad[size_t(f)] += float(dc_acc);
        if (alpha->requires_grad) alpha->grad[0] += float(da_acc);
      }
    }
  };
  return {n};
}

}  // namespace nsmir::engine
