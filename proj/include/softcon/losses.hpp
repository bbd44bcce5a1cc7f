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

// Contrastive loss family over similarity matrices.
//
// Every loss is available twice: as a graph builder (used by training, so the
// gradient comes from the autodiff engine) and as an eager function on plain
// tensors. The eager functions build a throwaway graph, so the two paths share
// one implementation. Losses are literal sums over anchors, not means.

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "softcon/error.hpp"
#include "softcon/graph.hpp"
#include "softcon/tensor.hpp"

namespace softcon {

/// N x d batch of unit-L2 projected embeddings.
class EmbeddingBatch {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  explicit EmbeddingBatch(Tensor rows) : rows_(std::move(rows)) {
    if (rows_.rank() != 2) throw ShapeError("EmbeddingBatch needs rank 2, got " + shape_string(rows_.dims()));
    for (std::size_t r = 0; r < rows_.rows(); ++r) {
      if (std::abs(l2_norm(rows_.row(r)) - 1.0) > kUnitTolerance) {
        throw ValidationError("EmbeddingBatch row " + std::to_string(r) + " is not unit norm");
      }
    }
  }

  /// Normalizes raw features row-wise before wrapping them.
  static EmbeddingBatch from_raw(const Tensor& raw) { return EmbeddingBatch(row_normalize(raw)); }

  std::size_t count() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  const Tensor& rows() const noexcept { return rows_; }

 private:
  Tensor rows_;
};

/// Single-label class ids, one per anchor.
class ClassIdBatch {
 public:
  explicit ClassIdBatch(std::vector<int> ids) : ids_(std::move(ids)) {
    for (int id : ids_) {
      if (id < 0) throw ValidationError("class ids must be nonnegative");
    }
  }
  std::size_t count() const noexcept { return ids_.size(); }
  std::span<const int> ids() const noexcept { return ids_; }

 private:
  std::vector<int> ids_;
};

struct LossConfig {
  double temperature = 0.2;  // contrast term only
  double weight = 0.1;       // lambda on the soft term
  bool symmetrize = false;

  void validate() const {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
    if (!(weight >= 0.0)) throw ValidationError("loss weight must be >= 0");
  }
};

/// Which terms the training objective combines.
enum class Objective {
  kContrast,         // InfoNCE only
  kSoftCon,          // soft BCE only
  kContrastSupCon,   // InfoNCE + lambda * SupCon on the second head
  kContrastSoftCon,  // InfoNCE + lambda * soft BCE on the second head
};

inline std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::kContrast: return "contrast";
    case Objective::kSoftCon: return "softcon";
    case Objective::kContrastSupCon: return "contrast+supcon";
    case Objective::kContrastSoftCon: return "contrast+softcon";
  }
  return "?";
}

inline Objective parse_objective(std::string_view s) {
  for (Objective o : {Objective::kContrast, Objective::kSoftCon, Objective::kContrastSupCon,
                      Objective::kContrastSoftCon}) {
    if (s == objective_name(o)) return o;
  }
  throw ValidationError("unknown objective '" + std::string(s) + "'");
}

inline bool uses_contrast(Objective o) { return o != Objective::kSoftCon; }
inline bool uses_second_head(Objective o) { return o != Objective::kContrast; }

namespace losses_detail {

inline void check_temperature(double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be > 0, got " + std::to_string(tau));
}

inline void check_targets(const Tensor& y) {
  for (double v : y.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("label similarity entries must lie in [0,1]");
  }
}

inline void check_square(const Tensor& x, std::string_view what) {
  if (x.rank() != 2 || x.rows() != x.cols()) {
    throw ShapeError(std::string(what) + " expects a square matrix, got " + shape_string(x.dims()));
  }
}

// Cross entropy -sum(W .* log_softmax(X / tau)) for a constant weight matrix W.
inline NodeId weighted_log_softmax_loss(ComputeGraph& g, NodeId x, double tau, Tensor weights) {
  const NodeId ls = g.log_softmax_rows(g.scale(x, 1.0 / tau));
  const NodeId w = g.constant(std::move(weights));
  return g.scale(g.sum(g.multiply(ls, w)), -1.0);
}

inline double eval(ComputeGraph& g, NodeId out, const Tensor& x) {
  g.set_output(out);
  return g.forward({{"X", x}});
}

}  // namespace losses_detail

// --- graph builders ---------------------------------------------------------

/// X = A * B^T for two N x d embedding nodes.
inline NodeId similarity_matrix(ComputeGraph& g, NodeId a, NodeId b) { return g.matmul(a, b, true); }

/// InfoNCE over an N x M similarity matrix (M >= N) whose positive for anchor i
/// sits in column i. Extra columns beyond N act as additional negatives.
inline NodeId info_nce(ComputeGraph& g, NodeId x, std::size_t n, std::size_t m, double tau) {
  losses_detail::check_temperature(tau);
  if (m < n) throw ShapeError("info_nce needs at least as many columns as anchors");
  Tensor eye({n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
  return losses_detail::weighted_log_softmax_loss(g, x, tau, std::move(eye));
}

inline NodeId info_nce(ComputeGraph& g, NodeId x, std::size_t n, double tau) { return info_nce(g, x, n, n, tau); }

/// Multi-positive contrastive loss: anchors sharing a class id are positives,
/// each anchor's log-likelihoods averaged over its positive set.
inline NodeId supcon(ComputeGraph& g, NodeId x, const ClassIdBatch& labels, double tau) {
  losses_detail::check_temperature(tau);
  const auto ids = labels.ids();
  const std::size_t n = ids.size();
  Tensor w({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t np = 0;
    for (std::size_t p = 0; p < n; ++p) np += ids[p] == ids[i];
    for (std::size_t p = 0; p < n; ++p) {
      if (ids[p] == ids[i]) w.at(i, p) = 1.0 / static_cast<double>(np);
    }
  }
  return losses_detail::weighted_log_softmax_loss(g, x, tau, std::move(w));
}

/// Per-element sigmoid BCE of X against the soft targets Y, summed.
inline NodeId softcon(ComputeGraph& g, NodeId x, const Tensor& y) {
  losses_detail::check_targets(y);
  return g.sum(g.sigmoid_bce(x, g.constant(y)));
}

struct CombinedNodes {
  NodeId total;
  NodeId contrast;
  NodeId soft;
};

/// InfoNCE on the contrast-head matrix plus weight * SoftCon on the soft-head
/// matrix. With cfg.symmetrize both terms are averaged with their transposed
/// (view-swapped) counterparts; that requires square matrices.
inline CombinedNodes combined(ComputeGraph& g, NodeId xc, NodeId xs, const Tensor& y, const LossConfig& cfg) {
  cfg.validate();
  losses_detail::check_square(y, "combined");
  const std::size_t n = y.rows();
  NodeId contrast = info_nce(g, xc, n, cfg.temperature);
  NodeId soft = softcon(g, xs, y);
  if (cfg.symmetrize) {
    const NodeId c2 = info_nce(g, g.transpose(xc), n, cfg.temperature);
    const NodeId s2 = softcon(g, g.transpose(xs), transposed(y));
    contrast = g.scale(g.add(contrast, c2), 0.5);
    soft = g.scale(g.add(soft, s2), 0.5);
  }
  const NodeId total = g.add(contrast, g.scale(soft, cfg.weight));
  return {total, contrast, soft};
}

// --- eager evaluation -------------------------------------------------------

inline Tensor similarity_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  if (a.count() != b.count() || a.dim() != b.dim()) {
    throw ShapeError("similarity_matrix: batches " + shape_string(a.rows().dims()) + " and " +
                     shape_string(b.rows().dims()) + " differ");
  }
  return matmul_transposed(a.rows(), b.rows());
}

inline double info_nce(const Tensor& x, double tau) {
  losses_detail::check_temperature(tau);
  losses_detail::check_square(x, "info_nce");
  ComputeGraph g;
  const NodeId in = g.input("X");
  return losses_detail::eval(g, info_nce(g, in, x.rows(), tau), x);
}

inline double supcon(const Tensor& x, const ClassIdBatch& labels, double tau) {
  losses_detail::check_temperature(tau);
  losses_detail::check_square(x, "supcon");
  if (labels.count() != x.rows()) throw ShapeError("supcon: label count does not match N");
  ComputeGraph g;
  const NodeId in = g.input("X");
  return losses_detail::eval(g, supcon(g, in, labels, tau), x);
}

inline double softcon(const Tensor& x, const Tensor& y) {
  losses_detail::check_square(x, "softcon");
  if (x.dims() != y.dims()) {
    throw ShapeError("softcon: X " + shape_string(x.dims()) + " vs Y " + shape_string(y.dims()));
  }
  ComputeGraph g;
  const NodeId in = g.input("X");
  return losses_detail::eval(g, softcon(g, in, y), x);
}

struct LossBreakdown {
  double total;
  double contrast;
  double soft;
};

inline LossBreakdown combined(const Tensor& xc, const Tensor& xs, const Tensor& y, const LossConfig& cfg) {
  losses_detail::check_square(xc, "combined");
  if (xc.dims() != xs.dims() || xs.dims() != y.dims()) throw ShapeError("combined: matrix shapes differ");
  ComputeGraph g;
  const NodeId c = g.input("Xc");
  const NodeId s = g.input("Xs");
  const CombinedNodes nodes = combined(g, c, s, y, cfg);
  g.set_output(nodes.total);
  const double total = g.forward({{"Xc", xc}, {"Xs", xs}});
  return {total, g.value(nodes.contrast).item(), g.value(nodes.soft).item()};
}

}  // namespace softcon
