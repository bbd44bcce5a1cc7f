// Copyright 2026 The SoftCon Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Static reverse-mode autodiff over dense double tensors.
//
// A ComputeGraph is assembled node by node (every parent id is smaller than
// the node's own id, so insertion order is a topological order), then
// evaluated with forward() against named input bindings and differentiated
// with backward(). Shapes are resolved at forward time, which lets the same
// graph be re-run with perturbed inputs by grad_check().

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "softcon/error.hpp"
#include "softcon/tensor.hpp"

namespace softcon {

using NodeId = std::size_t;
using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

enum class OpKind {
  kInput,
  kConstant,
  kAdd,
  kMultiply,
  kMatMul,
  kTranspose,
  kExp,
  kLog,
  kSigmoid,
  kRelu,
  kLayerNorm,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kNormalizeRows,
  kMean,
  kSum,
  kGather,
  kSigmoidBce,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kLogSoftmaxRows: return "log_softmax_rows";
    case OpKind::kNormalizeRows: return "normalize_rows";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kGather: return "gather";
    case OpKind::kSigmoidBce: return "sigmoid_bce";
  }
  return "?";
}

/// Index map of a gather node: output element i reads source[i] at offset[i].
/// With a single source the `source` vector may be left empty.
struct GatherMap {
  Shape out_dims;
  std::vector<std::uint32_t> source;
  std::vector<std::uint32_t> offset;
};

struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<NodeId> parents;
  std::string name;              // kInput
  Tensor constant;               // kConstant
  double scalar = 1.0;           // kMultiply with one parent; layer-norm epsilon
  std::optional<std::size_t> axis;  // kMean / kSum; empty = reduce everything
  bool transpose_b = false;      // kMatMul
  std::shared_ptr<const GatherMap> gather;  // kGather
  bool requires_grad = false;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;

inline ConstMat cmap(const double* p, std::size_t r, std::size_t c) {
  return ConstMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MutMat mmap(double* p, std::size_t r, std::size_t c) {
  return MutMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

class ComputeGraph {
 public:
  // --- construction -------------------------------------------------------

  NodeId input(std::string name) {
    if (input_ids_.count(name)) throw UsageError("duplicate graph input '" + name + "'");
    Node n;
    n.kind = OpKind::kInput;
    n.name = name;
    n.requires_grad = true;
    const NodeId id = push(std::move(n));
    input_ids_.emplace(std::move(name), id);
    return id;
  }

  NodeId constant(Tensor value) {
    Node n;
    n.kind = OpKind::kConstant;
    n.constant = std::move(value);
    return push(std::move(n));
  }

  /// Elementwise sum. `b` may also be broadcast when its dims are a suffix of `a`'s.
  NodeId add(NodeId a, NodeId b) { return op(OpKind::kAdd, {a, b}); }

  /// Elementwise product, same broadcasting rule as add().
  NodeId multiply(NodeId a, NodeId b) { return op(OpKind::kMultiply, {a, b}); }

  NodeId scale(NodeId a, double s) {
    Node n = make(OpKind::kMultiply, {a});
    n.scalar = s;
    return push(std::move(n));
  }

  /// Matrix product over the last two axes. Supports [.., m, k] x [k, n] (shared
  /// right operand) and batched [B, m, k] x [B, k, n]. With transpose_b the right
  /// operand is read as [.., n, k].
  NodeId matmul(NodeId a, NodeId b, bool transpose_b = false) {
    Node n = make(OpKind::kMatMul, {a, b});
    n.transpose_b = transpose_b;
    return push(std::move(n));
  }

  NodeId transpose(NodeId a) { return op(OpKind::kTranspose, {a}); }
  NodeId exp(NodeId a) { return op(OpKind::kExp, {a}); }
  NodeId log(NodeId a) { return op(OpKind::kLog, {a}); }
  NodeId sigmoid(NodeId a) { return op(OpKind::kSigmoid, {a}); }
  NodeId relu(NodeId a) { return op(OpKind::kRelu, {a}); }

  /// Normalizes over the last axis, then applies per-feature gain and bias.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5) {
    Node n = make(OpKind::kLayerNorm, {x, gain, bias});
    n.scalar = eps;
    return push(std::move(n));
  }

  NodeId softmax_rows(NodeId a) { return op(OpKind::kSoftmaxRows, {a}); }
  NodeId log_softmax_rows(NodeId a) { return op(OpKind::kLogSoftmaxRows, {a}); }
  NodeId normalize_rows(NodeId a) { return op(OpKind::kNormalizeRows, {a}); }

  NodeId mean(NodeId a, std::optional<std::size_t> axis = std::nullopt) {
    Node n = make(OpKind::kMean, {a});
    n.axis = axis;
    return push(std::move(n));
  }

  NodeId sum(NodeId a, std::optional<std::size_t> axis = std::nullopt) {
    Node n = make(OpKind::kSum, {a});
    n.axis = axis;
    return push(std::move(n));
  }

  /// Reads elements of one or more source nodes through an index map. Covers
  /// slicing, permutation, token selection and concatenation.
  NodeId gather(std::vector<NodeId> sources, std::shared_ptr<const GatherMap> map) {
    if (!map || map->offset.size() != shape_size(map->out_dims) ||
        (!map->source.empty() && map->source.size() != map->offset.size())) {
      throw ShapeError("gather: index map does not match its output dims");
    }
    if (map->source.empty() && sources.size() != 1) {
      throw ShapeError("gather: multi-source gather needs per-element source ids");
    }
    Node n = make(OpKind::kGather, std::move(sources));
    n.gather = std::move(map);
    return push(std::move(n));
  }

  /// Elementwise binary cross entropy of logits against soft targets, in the
  /// overflow-free form max(x,0) - x*y + log(1 + exp(-|x|)).
  NodeId sigmoid_bce(NodeId logits, NodeId targets) {
    return op(OpKind::kSigmoidBce, {logits, targets});
  }

  void set_output(NodeId id) {
    check_id(id);
    output_ = id;
  }
  std::optional<NodeId> output() const noexcept { return output_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::map<std::string, NodeId>& inputs() const noexcept { return input_ids_; }

  // --- evaluation ---------------------------------------------------------

  /// Evaluates every node and returns the scalar output.
  double forward(const Bindings& bindings) {
    if (!output_) throw UsageError("graph has no output node");
    values_.assign(nodes_.size(), Tensor{});
    aux_.assign(nodes_.size(), {});
    forwarded_ = false;
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      eval(id, bindings);
      if (!values_[id].all_finite()) {
        throw NumericError(label(id) + ": non-finite value in forward pass");
      }
    }
    const Tensor& out = values_[*output_];
    if (out.size() != 1) {
      throw ShapeError(label(*output_) + ": output must be scalar, got " + shape_string(out.dims()));
    }
    forwarded_ = true;
    return out[0];
  }

  bool forwarded() const noexcept { return forwarded_; }

  const Tensor& value(NodeId id) const {
    if (!forwarded_) throw UsageError("value() before forward()");
    return values_.at(id);
  }

  /// Gradient of the output with respect to every named input.
  Gradients backward() {
    if (!forwarded_) throw UsageError("backward() called before forward()");
    grads_.assign(nodes_.size(), Tensor{});
    has_grad_.assign(nodes_.size(), false);
    seed_grad(*output_) = Tensor(values_[*output_].dims(), 1.0);
    for (NodeId id = *output_ + 1; id-- > 0;) {
      if (!has_grad_[id] || !nodes_[id].requires_grad) continue;
      propagate(id);
    }
    Gradients out;
    for (const auto& [name, id] : input_ids_) {
      if (has_grad_[id]) {
        out.emplace(name, std::move(grads_[id]));
      } else if (!values_[id].storage().empty()) {
        out.emplace(name, Tensor(values_[id].dims(), 0.0));
      }
    }
    grads_.clear();
    has_grad_.clear();
    return out;
  }

 private:
  Node make(OpKind kind, std::vector<NodeId> parents) const {
    for (NodeId p : parents) check_id(p);
    Node n;
    n.kind = kind;
    n.parents = std::move(parents);
    for (NodeId p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    return n;
  }

  NodeId op(OpKind kind, std::vector<NodeId> parents) { return push(make(kind, std::move(parents))); }

  NodeId push(Node n) {
    forwarded_ = false;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void check_id(NodeId id) const {
    if (id >= nodes_.size()) throw UsageError("node id " + std::to_string(id) + " does not exist");
  }

  std::string label(NodeId id) const {
    std::string s = "node #" + std::to_string(id) + " (" + std::string(op_name(nodes_[id].kind));
    if (nodes_[id].kind == OpKind::kInput) s += " '" + nodes_[id].name + "'";
    return s + ")";
  }

  [[noreturn]] void shape_fail(NodeId id, const std::string& msg) const {
    throw ShapeError(label(id) + ": " + msg);
  }

  const Tensor& in(NodeId id, std::size_t k) const { return values_[nodes_[id].parents[k]]; }

  Tensor& seed_grad(NodeId id) {
    if (!has_grad_[id]) {
      grads_[id] = Tensor(values_[id].dims(), 0.0);
      has_grad_[id] = true;
    }
    return grads_[id];
  }

  // Returns the gradient buffer of parent k, or nullptr when it needs none.
  Tensor* parent_grad(NodeId id, std::size_t k) {
    const NodeId p = nodes_[id].parents[k];
    if (!nodes_[p].requires_grad) return nullptr;
    return &seed_grad(p);
  }

  // ---- forward kernels ----

  void eval(NodeId id, const Bindings& bindings) {
    const Node& n = nodes_[id];
    Tensor& out = values_[id];
    switch (n.kind) {
      case OpKind::kInput: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw UsageError(label(id) + ": input is not bound");
        out = it->second;
        break;
      }
      case OpKind::kConstant:
        out = n.constant;
        break;
      case OpKind::kAdd:
      case OpKind::kMultiply:
        eval_binary(id);
        break;
      case OpKind::kMatMul:
        eval_matmul(id);
        break;
      case OpKind::kTranspose: {
        const Tensor& a = in(id, 0);
        if (a.rank() < 2) shape_fail(id, "transpose needs rank >= 2, got " + shape_string(a.dims()));
        Shape d = a.dims();
        const std::size_t r = d[d.size() - 2], c = d.back();
        std::swap(d[d.size() - 2], d.back());
        out = Tensor(d);
        const std::size_t batch = a.size() / (r * c);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::mmap(out.data() + b * r * c, c, r) = detail::cmap(a.data() + b * r * c, r, c).transpose();
        }
        break;
      }
      case OpKind::kExp:
        out = in(id, 0);
        for (double& v : out.values()) v = std::exp(v);
        break;
      case OpKind::kLog:
        out = in(id, 0);
        for (double& v : out.values()) v = std::log(v);
        break;
      case OpKind::kSigmoid:
        out = in(id, 0);
        for (double& v : out.values()) v = detail::stable_sigmoid(v);
        break;
      case OpKind::kRelu:
        out = in(id, 0);
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        break;
      case OpKind::kLayerNorm:
        eval_layer_norm(id);
        break;
      case OpKind::kSoftmaxRows:
      case OpKind::kLogSoftmaxRows: {
        out = in(id, 0);
        const std::size_t c = out.cols();
        for (std::size_t r = 0; r < out.rows(); ++r) {
          double* x = out.data() + r * c;
          const double mx = *std::max_element(x, x + c);
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
          if (n.kind == OpKind::kSoftmaxRows) {
            for (std::size_t j = 0; j < c; ++j) x[j] = std::exp(x[j] - mx) / s;
          } else {
            const double lse = mx + std::log(s);
            for (std::size_t j = 0; j < c; ++j) x[j] -= lse;
          }
        }
        break;
      }
      case OpKind::kNormalizeRows: {
        out = in(id, 0);
        const std::size_t c = out.cols();
        auto& norms = aux_[id];
        norms.resize(out.rows());
        for (std::size_t r = 0; r < out.rows(); ++r) {
          const double nr = l2_norm(out.row(r));
          if (nr == 0.0) throw ZeroNormError(label(id), r);
          norms[r] = nr;
          for (std::size_t j = 0; j < c; ++j) out.data()[r * c + j] /= nr;
        }
        break;
      }
      case OpKind::kMean:
      case OpKind::kSum:
        eval_reduce(id);
        break;
      case OpKind::kGather: {
        const GatherMap& g = *n.gather;
        out = Tensor(g.out_dims);
        const bool multi = !g.source.empty();
        for (std::size_t i = 0; i < out.size(); ++i) {
          const std::size_t s = multi ? g.source[i] : 0;
          if (s >= n.parents.size()) shape_fail(id, "gather source id out of range");
          const Tensor& src = in(id, s);
          if (g.offset[i] >= src.size()) {
            shape_fail(id, "gather offset " + std::to_string(g.offset[i]) + " outside source dims " +
                               shape_string(src.dims()));
          }
          out[i] = src[g.offset[i]];
        }
        break;
      }
      case OpKind::kSigmoidBce: {
        const Tensor& x = in(id, 0);
        const Tensor& y = in(id, 1);
        if (x.dims() != y.dims()) {
          shape_fail(id, "logits " + shape_string(x.dims()) + " vs targets " + shape_string(y.dims()));
        }
        out = Tensor(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double v = x[i];
          out[i] = std::max(v, 0.0) - v * y[i] + std::log1p(std::exp(-std::abs(v)));
        }
        break;
      }
    }
  }

  void eval_binary(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor& a = in(id, 0);
    Tensor& out = values_[id];
    out = a;
    if (n.parents.size() == 1) {
      for (double& v : out.values()) v *= n.scalar;
      return;
    }
    const Tensor& b = in(id, 1);
    if (!detail::is_suffix(a.dims(), b.dims())) {
      shape_fail(id, "cannot broadcast " + shape_string(b.dims()) + " onto " + shape_string(a.dims()));
    }
    const std::size_t m = b.size();
    const bool is_add = n.kind == OpKind::kAdd;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (is_add) {
        out[i] += b[i % m];
      } else {
        out[i] *= b[i % m];
      }
    }
  }

  struct MatMulDims {
    std::size_t batch, m, k, n;
    bool batched;
  };

  MatMulDims matmul_dims(NodeId id) const {
    const Tensor& a = in(id, 0);
    const Tensor& b = in(id, 1);
    const bool tb = nodes_[id].transpose_b;
    if (a.rank() < 2 || b.rank() < 2) {
      shape_fail(id, "operands need rank >= 2, got " + shape_string(a.dims()) + " and " +
                         shape_string(b.dims()));
    }
    const std::size_t bk = tb ? b.dims().back() : b.dims()[b.rank() - 2];
    const std::size_t bn = tb ? b.dims()[b.rank() - 2] : b.dims().back();
    if (a.dims().back() != bk) {
      shape_fail(id, "inner dims differ: " + shape_string(a.dims()) + " x " + shape_string(b.dims()) +
                         (tb ? "^T" : ""));
    }
    if (b.rank() == 2) return {1, a.rows(), bk, bn, false};
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
      shape_fail(id, "batched matmul needs [B,m,k] x [B,k,n], got " + shape_string(a.dims()) + " and " +
                         shape_string(b.dims()));
    }
    return {a.dim(0), a.dim(1), bk, bn, true};
  }

  void eval_matmul(NodeId id) {
    const Tensor& a = in(id, 0);
    const Tensor& b = in(id, 1);
    const MatMulDims d = matmul_dims(id);
    Shape od = a.dims();
    od.back() = d.n;
    Tensor& out = values_[id];
    out = Tensor(od);
    const bool tb = nodes_[id].transpose_b;
    for (std::size_t s = 0; s < d.batch; ++s) {
      auto A = detail::cmap(a.data() + s * d.m * d.k, d.m, d.k);
      const double* bp = b.data() + (d.batched ? s * d.k * d.n : 0);
      auto C = detail::mmap(out.data() + s * d.m * d.n, d.m, d.n);
      if (tb) {
        C.noalias() = A * detail::cmap(bp, d.n, d.k).transpose();
      } else {
        C.noalias() = A * detail::cmap(bp, d.k, d.n);
      }
    }
  }

  void eval_layer_norm(NodeId id) {
    const Tensor& x = in(id, 0);
    const Tensor& gain = in(id, 1);
    const Tensor& bias = in(id, 2);
    const std::size_t c = x.cols();
    if (gain.dims() != Shape{c} || bias.dims() != Shape{c}) {
      shape_fail(id, "gain/bias must be [" + std::to_string(c) + "], got " + shape_string(gain.dims()) +
                         " and " + shape_string(bias.dims()));
    }
    Tensor& out = values_[id];
    out = Tensor(x.dims());
    auto& rstd = aux_[id];
    rstd.resize(x.rows());
    const double eps = nodes_[id].scalar;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double* xr = x.data() + r * c;
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += xr[j];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<double>(c);
      const double rs = 1.0 / std::sqrt(var + eps);
      rstd[r] = rs;
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    }
  }

  struct ReduceDims {
    std::size_t outer, n, inner;
  };

  ReduceDims reduce_dims(NodeId id) const {
    const Tensor& a = in(id, 0);
    const auto& axis = nodes_[id].axis;
    if (!axis) return {1, a.size(), 1};
    if (*axis >= a.rank()) shape_fail(id, "axis " + std::to_string(*axis) + " out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < *axis; ++i) outer *= a.dim(i);
    for (std::size_t i = *axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    return {outer, a.dim(*axis), inner};
  }

  void eval_reduce(NodeId id) {
    const Tensor& a = in(id, 0);
    const Node& n = nodes_[id];
    const ReduceDims d = reduce_dims(id);
    Shape od;
    if (n.axis) {
      od = a.dims();
      od.erase(od.begin() + static_cast<std::ptrdiff_t>(*n.axis));
    }
    Tensor& out = values_[id];
    out = Tensor(od, 0.0);
    const double f = n.kind == OpKind::kMean ? 1.0 / static_cast<double>(d.n) : 1.0;
    for (std::size_t o = 0; o < d.outer; ++o) {
      for (std::size_t k = 0; k < d.n; ++k) {
        const double* src = a.data() + (o * d.n + k) * d.inner;
        double* dst = out.data() + o * d.inner;
        for (std::size_t i = 0; i < d.inner; ++i) dst[i] += src[i];
      }
    }
    if (f != 1.0) {
      for (double& v : out.values()) v *= f;
    }
  }

  // ---- backward kernels ----

  void propagate(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    const Tensor& y = values_[id];
    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kConstant:
        break;
      case OpKind::kAdd: {
        if (Tensor* ga = parent_grad(id, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor* gb = parent_grad(id, 1)) {
          const std::size_t m = gb->size();
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % m] += g[i];
        }
        break;
      }
      case OpKind::kMultiply: {
        if (n.parents.size() == 1) {
          if (Tensor* ga = parent_grad(id, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.scalar;
          }
          break;
        }
        const Tensor& a = in(id, 0);
        const Tensor& b = in(id, 1);
        const std::size_t m = b.size();
        if (Tensor* ga = parent_grad(id, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i % m];
        }
        if (Tensor* gb = parent_grad(id, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % m] += g[i] * a[i];
        }
        break;
      }
      case OpKind::kMatMul:
        backprop_matmul(id);
        break;
      case OpKind::kTranspose: {
        if (Tensor* ga = parent_grad(id, 0)) {
          const Shape& d = g.dims();
          const std::size_t r = d[d.size() - 2], c = d.back();
          const std::size_t batch = g.size() / (r * c);
          for (std::size_t b = 0; b < batch; ++b) {
            detail::mmap(ga->data() + b * r * c, c, r) += detail::cmap(g.data() + b * r * c, r, c).transpose();
          }
        }
        break;
      }
      case OpKind::kExp:
        if (Tensor* ga = parent_grad(id, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
        }
        break;
      case OpKind::kLog:
        if (Tensor* ga = parent_grad(id, 0)) {
          const Tensor& a = in(id, 0);
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a[i];
        }
        break;
      case OpKind::kSigmoid:
        if (Tensor* ga = parent_grad(id, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
      case OpKind::kRelu:
        if (Tensor* ga = parent_grad(id, 0)) {
          const Tensor& a = in(id, 0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (a[i] > 0.0) (*ga)[i] += g[i];
          }
        }
        break;
      case OpKind::kLayerNorm:
        backprop_layer_norm(id);
        break;
      case OpKind::kSoftmaxRows:
        if (Tensor* ga = parent_grad(id, 0)) {
          const std::size_t c = y.cols();
          for (std::size_t r = 0; r < y.rows(); ++r) {
            const double* yr = y.data() + r * c;
            const double* gr = g.data() + r * c;
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += gr[j] * yr[j];
            for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += yr[j] * (gr[j] - s);
          }
        }
        break;
      case OpKind::kLogSoftmaxRows:
        if (Tensor* ga = parent_grad(id, 0)) {
          const std::size_t c = y.cols();
          for (std::size_t r = 0; r < y.rows(); ++r) {
            const double* yr = y.data() + r * c;
            const double* gr = g.data() + r * c;
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += gr[j];
            for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += gr[j] - std::exp(yr[j]) * s;
          }
        }
        break;
      case OpKind::kNormalizeRows:
        if (Tensor* ga = parent_grad(id, 0)) {
          const std::size_t c = y.cols();
          const auto& norms = aux_[id];
          for (std::size_t r = 0; r < y.rows(); ++r) {
            const double* yr = y.data() + r * c;
            const double* gr = g.data() + r * c;
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += gr[j] * yr[j];
            for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += (gr[j] - yr[j] * s) / norms[r];
          }
        }
        break;
      case OpKind::kMean:
      case OpKind::kSum:
        if (Tensor* ga = parent_grad(id, 0)) {
          const ReduceDims d = reduce_dims(id);
          const double f = n.kind == OpKind::kMean ? 1.0 / static_cast<double>(d.n) : 1.0;
          for (std::size_t o = 0; o < d.outer; ++o) {
            const double* src = g.data() + o * d.inner;
            for (std::size_t k = 0; k < d.n; ++k) {
              double* dst = ga->data() + (o * d.n + k) * d.inner;
              for (std::size_t i = 0; i < d.inner; ++i) dst[i] += f * src[i];
            }
          }
        }
        break;
      case OpKind::kGather: {
        const GatherMap& m = *n.gather;
        std::vector<Tensor*> targets(n.parents.size());
        for (std::size_t s = 0; s < n.parents.size(); ++s) targets[s] = parent_grad(id, s);
        const bool multi = !m.source.empty();
        for (std::size_t i = 0; i < g.size(); ++i) {
          Tensor* t = targets[multi ? m.source[i] : 0];
          if (t) (*t)[m.offset[i]] += g[i];
        }
        break;
      }
      case OpKind::kSigmoidBce: {
        const Tensor& x = in(id, 0);
        const Tensor& t = in(id, 1);
        if (Tensor* gx = parent_grad(id, 0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (detail::stable_sigmoid(x[i]) - t[i]);
        }
        if (Tensor* gt = parent_grad(id, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gt)[i] -= g[i] * x[i];
        }
        break;
      }
    }
  }

  void backprop_matmul(NodeId id) {
    const Tensor& a = in(id, 0);
    const Tensor& b = in(id, 1);
    const Tensor& g = grads_[id];
    const MatMulDims d = matmul_dims(id);
    const bool tb = nodes_[id].transpose_b;
    Tensor* ga = parent_grad(id, 0);
    Tensor* gb = parent_grad(id, 1);
    for (std::size_t s = 0; s < d.batch; ++s) {
      auto G = detail::cmap(g.data() + s * d.m * d.n, d.m, d.n);
      const std::size_t boff = d.batched ? s * d.k * d.n : 0;
      if (ga) {
        auto GA = detail::mmap(ga->data() + s * d.m * d.k, d.m, d.k);
        if (tb) {
          GA.noalias() += G * detail::cmap(b.data() + boff, d.n, d.k);
        } else {
          GA.noalias() += G * detail::cmap(b.data() + boff, d.k, d.n).transpose();
        }
      }
      if (gb) {
        auto A = detail::cmap(a.data() + s * d.m * d.k, d.m, d.k);
        if (tb) {
          detail::mmap(gb->data() + boff, d.n, d.k).noalias() += G.transpose() * A;
        } else {
          detail::mmap(gb->data() + boff, d.k, d.n).noalias() += A.transpose() * G;
        }
      }
    }
  }

  void backprop_layer_norm(NodeId id) {
    const Tensor& x = in(id, 0);
    const Tensor& gain = in(id, 1);
    const Tensor& g = grads_[id];
    const auto& rstd = aux_[id];
    const std::size_t c = x.cols();
    Tensor* gx = parent_grad(id, 0);
    Tensor* ggain = parent_grad(id, 1);
    Tensor* gbias = parent_grad(id, 2);
    std::vector<double> xhat(c), dxhat(c);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double* xr = x.data() + r * c;
      const double* gr = g.data() + r * c;
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += xr[j];
      mu /= static_cast<double>(c);
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        xhat[j] = (xr[j] - mu) * rstd[r];
        dxhat[j] = gr[j] * gain[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat[j];
        if (ggain) (*ggain)[j] += gr[j] * xhat[j];
        if (gbias) (*gbias)[j] += gr[j];
      }
      if (gx) {
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) (*gx)[r * c + j] += rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> input_ids_;
  std::optional<NodeId> output_;

  std::vector<Tensor> values_;
  std::vector<std::vector<double>> aux_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  bool forwarded_ = false;
};

/// Compares backward() against central differences (f(x+e) - f(x-e)) / 2e on
/// every coordinate of every bound input. Returns the largest
/// |analytic - numeric| / max(1, |analytic|, |numeric|). The graph is left
/// forwarded at the unperturbed inputs.
inline double grad_check(ComputeGraph& graph, const Bindings& inputs, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("grad_check: epsilon must be positive");
  graph.forward(inputs);
  const Gradients analytic = graph.backward();
  Bindings probe = inputs;
  double worst = 0.0;
  for (auto& [name, tensor] : probe) {
    if (!graph.inputs().count(name)) continue;
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + epsilon;
      const double fp = graph.forward(probe);
      tensor[i] = orig - epsilon;
      const double fm = graph.forward(probe);
      tensor[i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = ga[i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  graph.forward(inputs);
  return worst;
}

}  // namespace softcon
