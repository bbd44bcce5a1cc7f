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

// Siamese pretraining: two seasonal views per scene, a masked trainable branch,
// an unmasked momentum branch, the weighted contrastive + soft contrastive
// objective, AdamW, EMA, and an optional FIFO negative queue.
//
// Every random draw for a scene comes from a stream seeded by
// (master seed, scene id, epoch), so batch composition never changes what a
// scene sees.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "softcon/checkpoint.hpp"
#include "softcon/encoder.hpp"
#include "softcon/error.hpp"
#include "softcon/graph.hpp"
#include "softcon/labelsim.hpp"
#include "softcon/losses.hpp"
#include "softcon/rng.hpp"
#include "softcon/scene.hpp"
#include "softcon/tensor.hpp"
#include "softcon/text.hpp"

namespace softcon {

// --- view selection -------------------------------------------------------------

/// Two distinct season indices, ordered, uniform without replacement. A
/// single-season scene yields (0, 0).
inline std::pair<std::size_t, std::size_t> select_views(const Scene& scene, Rng& rng) {
  const std::size_t s = scene.num_seasons();
  if (s == 0) throw ValidationError("scene " + std::to_string(scene.id) + " has no seasons");
  if (s == 1) return {0, 0};
  const auto a = static_cast<std::size_t>(rng.index(s));
  auto b = static_cast<std::size_t>(rng.index(s - 1));
  if (b >= a) ++b;
  return {a, b};
}

// --- augmentation -----------------------------------------------------------------

struct AugmentPolicy {
  std::size_t out_size = 32;
  double scale_min = 0.5, scale_max = 1.0;  // crop area fraction
  double aspect_min = 3.0 / 4.0, aspect_max = 4.0 / 3.0;
  double hflip_p = 0.5, vflip_p = 0.5;
  double jitter_p = 0.8, jitter_lo = 0.8, jitter_hi = 1.2;
  double grey_p = 0.2;
  double blur_p = 0.5;

  /// Full-image crop with every random transform disabled.
  static AugmentPolicy identity(std::size_t size) {
    AugmentPolicy p;
    p.out_size = size;
    p.scale_min = p.scale_max = 1.0;
    p.aspect_min = p.aspect_max = 1.0;
    p.hflip_p = p.vflip_p = p.jitter_p = p.grey_p = p.blur_p = 0.0;
    return p;
  }

  void validate() const {
    if (out_size == 0) throw ValidationError("augment out_size must be positive");
    if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
      throw ValidationError("crop scale range must satisfy 0 < min <= max <= 1");
    }
    if (!(aspect_min > 0.0 && aspect_min <= aspect_max)) throw ValidationError("bad crop aspect range");
    for (double p : {hflip_p, vflip_p, jitter_p, grey_p, blur_p}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("augment probabilities must lie in [0,1]");
    }
    if (!(jitter_lo > 0.0 && jitter_lo <= jitter_hi)) throw ValidationError("bad jitter range");
  }
};

/// The random choices behind one augmented view.
struct AugmentDraws {
  std::size_t x0 = 0, y0 = 0, crop_w = 0, crop_h = 0;
  bool hflip = false, vflip = false;
  std::vector<double> jitter;  // per-channel factors; empty when not applied
  bool grey = false, blur = false;
};

/// Draw order: scale, aspect, x0, y0, hflip, vflip, jitter gate (+ C factors), grey, blur.
inline AugmentDraws sample_augment(Rng& rng, const AugmentPolicy& pol, std::size_t channels, std::size_t height,
                                   std::size_t width) {
  pol.validate();
  if (pol.out_size > height || pol.out_size > width) {
    throw ValidationError("crop size " + std::to_string(pol.out_size) + " exceeds image " + std::to_string(height) +
                          "x" + std::to_string(width));
  }
  AugmentDraws d;
  const double area = rng.uniform(pol.scale_min, pol.scale_max) * static_cast<double>(height * width);
  const double aspect = std::exp(rng.uniform(std::log(pol.aspect_min), std::log(pol.aspect_max)));
  d.crop_w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))), 1, width);
  d.crop_h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area / aspect))), 1, height);
  d.x0 = static_cast<std::size_t>(rng.index(width - d.crop_w + 1));
  d.y0 = static_cast<std::size_t>(rng.index(height - d.crop_h + 1));
  d.hflip = rng.bernoulli(pol.hflip_p);
  d.vflip = rng.bernoulli(pol.vflip_p);
  if (rng.bernoulli(pol.jitter_p)) {
    d.jitter.resize(channels);
    for (double& f : d.jitter) f = rng.uniform(pol.jitter_lo, pol.jitter_hi);
  }
  d.grey = rng.bernoulli(pol.grey_p);
  d.blur = rng.bernoulli(pol.blur_p);
  return d;
}

namespace augment_detail {

// Bilinear sample positions for resizing `len` source pixels starting at `x0`
// onto `out` pixels (pixel-center aligned).
inline void resize_taps(std::size_t x0, std::size_t len, std::size_t out, std::vector<std::size_t>& lo,
                        std::vector<double>& frac) {
  lo.resize(out);
  frac.resize(out);
  const double step = static_cast<double>(len) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * step - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(len - 1));
    const auto f = static_cast<std::size_t>(std::floor(s));
    lo[o] = x0 + f;
    frac[o] = s - static_cast<double>(f);
  }
}

}  // namespace augment_detail

/// Applies crop-resize, flips, jitter, greyscale and blur, in that order.
inline Tensor apply_augment(const Tensor& image, const AugmentDraws& d, std::size_t out_size) {
  if (image.rank() != 3) throw ShapeError("augment expects C x H x W, got " + shape_string(image.dims()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2), n = out_size;
  if (d.x0 + d.crop_w > w || d.y0 + d.crop_h > h) throw ValidationError("crop window outside the image");
  std::vector<std::size_t> xl, yl;
  std::vector<double> xf, yf;
  augment_detail::resize_taps(d.x0, d.crop_w, n, xl, xf);
  augment_detail::resize_taps(d.y0, d.crop_h, n, yl, yf);
  Tensor out({c, n, n});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = image.data() + ch * h * w;
    for (std::size_t oy = 0; oy < n; ++oy) {
      const std::size_t y1 = std::min(yl[oy] + 1, h - 1);
      const std::size_t ty = d.vflip ? n - 1 - oy : oy;
      for (std::size_t ox = 0; ox < n; ++ox) {
        const std::size_t x1 = std::min(xl[ox] + 1, w - 1);
        const double top = src[yl[oy] * w + xl[ox]] * (1.0 - xf[ox]) + src[yl[oy] * w + x1] * xf[ox];
        const double bot = src[y1 * w + xl[ox]] * (1.0 - xf[ox]) + src[y1 * w + x1] * xf[ox];
        const std::size_t tx = d.hflip ? n - 1 - ox : ox;
        out[(ch * n + ty) * n + tx] = top * (1.0 - yf[oy]) + bot * yf[oy];
      }
    }
  }
  if (!d.jitter.empty()) {
    if (d.jitter.size() != c) throw ShapeError("jitter factors do not match channel count");
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n * n; ++i) out[ch * n * n + i] *= d.jitter[ch];
  }
  if (d.grey) {
    for (std::size_t i = 0; i < n * n; ++i) {
      double m = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) m += out[ch * n * n + i];
      m /= static_cast<double>(c);
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * n * n + i] = m;
    }
  }
  if (d.blur) {
    // Separable [1 2 1] / 4 kernel with replicated borders.
    Tensor tmp = out;
    auto px = [&](const Tensor& t, std::size_t ch, std::ptrdiff_t y, std::ptrdiff_t x) {
      const auto last = static_cast<std::ptrdiff_t>(n) - 1;
      y = std::clamp<std::ptrdiff_t>(y, 0, last);
      x = std::clamp<std::ptrdiff_t>(x, 0, last);
      return t[(ch * n + static_cast<std::size_t>(y)) * n + static_cast<std::size_t>(x)];
    };
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(n); ++y)
        for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(n); ++x)
          tmp[(ch * n + y) * n + x] = 0.25 * px(out, ch, y, x - 1) + 0.5 * px(out, ch, y, x) + 0.25 * px(out, ch, y, x + 1);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(n); ++y)
        for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(n); ++x)
          out[(ch * n + y) * n + x] = 0.25 * px(tmp, ch, y - 1, x) + 0.5 * px(tmp, ch, y, x) + 0.25 * px(tmp, ch, y + 1, x);
  }
  return out;
}

inline Tensor augment(const Tensor& image, Rng& rng, const AugmentPolicy& pol) {
  if (image.rank() != 3) throw ShapeError("augment expects C x H x W, got " + shape_string(image.dims()));
  return apply_augment(image, sample_augment(rng, pol, image.dim(0), image.dim(1), image.dim(2)), pol.out_size);
}

// --- learning-rate schedule ---------------------------------------------------------

struct Schedule {
  double base_lr = 1e-3;
  std::size_t warmup_epochs = 10;
  std::size_t total_epochs = 30;
  std::size_t steps_per_epoch = 1;

  std::size_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }

  void validate() const {
    if (!(base_lr >= 0.0)) throw ValidationError("base_lr must be non-negative");
    if (warmup_epochs > total_epochs) throw ValidationError("warmup_epochs exceeds total_epochs");
    if (steps_per_epoch == 0) throw ValidationError("steps_per_epoch must be positive");
  }
};

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at the final step.
inline double cosine_warmup_lr(std::size_t step, const Schedule& s) {
  s.validate();
  const std::size_t warm = s.warmup_steps(), total = s.total_steps();
  if (step > total) {
    throw ValidationError("step " + std::to_string(step) + " beyond schedule of " + std::to_string(total) + " steps");
  }
  if (step < warm) return s.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total == warm) return s.base_lr;
  const double t = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return 0.5 * s.base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

// --- negative queue ------------------------------------------------------------------

/// Fixed-capacity FIFO of unit-norm key embeddings.
class NegativeQueue {
 public:
  /// Starts full of random unit rows.
  NegativeQueue(std::size_t capacity, std::size_t dim, Rng& rng) : rows_({capacity, dim}) {
    if (capacity == 0 || dim == 0) throw ValidationError("queue capacity and dim must be positive");
    for (double& v : rows_.values()) v = rng.normal();
    rows_ = row_normalize(rows_);
  }

  /// Starts from explicit rows, oldest first.
  explicit NegativeQueue(Tensor rows) : rows_(std::move(rows)) {
    if (rows_.rank() != 2) throw ShapeError("queue rows must be K x d");
  }

  std::size_t capacity() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }

  void push(const Tensor& keys) {
    if (keys.rank() != 2 || keys.cols() != dim()) {
      throw ShapeError("queue of dim " + std::to_string(dim()) + " cannot take keys " + shape_string(keys.dims()));
    }
    if (keys.rows() > capacity()) throw ValidationError("key batch larger than queue capacity");
    for (std::size_t r = 0; r < keys.rows(); ++r) {
      std::copy_n(keys.data() + r * dim(), dim(), rows_.data() + cursor_ * dim());
      cursor_ = (cursor_ + 1) % capacity();
    }
  }

  /// K x d, oldest row first.
  Tensor contents() const {
    Tensor out({capacity(), dim()});
    for (std::size_t i = 0; i < capacity(); ++i) {
      const std::size_t src = (cursor_ + i) % capacity();
      std::copy_n(rows_.data() + src * dim(), dim(), out.data() + i * dim());
    }
    return out;
  }

 private:
  Tensor rows_;
  std::size_t cursor_ = 0;  // slot of the oldest row
};

// --- optimizer ---------------------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.05;
};

/// Decoupled weight decay, applied to matrices only (biases, gains and
/// position tables of rank 1 are exempt; pos_embed is rank 2 and decays).
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamSet& params, const Gradients& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      if (g.dims() != p.dims()) throw ShapeError("gradient for '" + name + "' has wrong shape");
      auto [mit, fresh] = m_.try_emplace(name, p.dims(), 0.0);
      Tensor& m = mit->second;
      Tensor& v = v_.try_emplace(name, p.dims(), 0.0).first->second;
      const double decay = p.rank() >= 2 ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        p[i] -= lr * (update + decay * p[i]);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }
  const ParamSet& first_moments() const noexcept { return m_; }
  const ParamSet& second_moments() const noexcept { return v_; }

 private:
  AdamWConfig cfg_;
  ParamSet m_, v_;
  std::uint64_t t_ = 0;
};

// --- configuration -----------------------------------------------------------------------

struct TrainConfig {
  Architecture arch;
  Objective objective = Objective::kContrastSoftCon;
  LossConfig loss;
  double momentum = 0.99;
  double mask_ratio = 0.2;
  bool use_queue = false;
  std::size_t queue_size = 512;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 10;
  double base_lr = 1e-3;
  AdamWConfig adamw;
  AugmentPolicy augment;
  std::uint64_t seed = 0;

  void validate() const {
    arch.validate();
    loss.validate();
    augment.validate();
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0,1)");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ValidationError("mask_ratio must lie in [0,1)");
    if (visible_count(arch.num_patches(), mask_ratio) == 0) throw ValidationError("mask_ratio leaves no visible patch");
    if (batch_size < 2) throw ValidationError("batch_size must be at least 2 for in-batch negatives");
    if (use_queue && queue_size < batch_size) throw ValidationError("queue_size must be at least batch_size");
    if (use_queue && loss.symmetrize) throw ValidationError("symmetrized loss is not defined with a negative queue");
    if (augment.out_size != arch.image_size) throw ValidationError("augment out_size must equal arch image_size");
    if (warmup_epochs > epochs) throw ValidationError("warmup_epochs exceeds epochs");
    if (!(base_lr >= 0.0)) throw ValidationError("base_lr must be non-negative");
    if (!(adamw.weight_decay >= 0.0 && adamw.eps > 0.0)) throw ValidationError("bad AdamW constants");
  }

  std::map<std::string, std::string> to_metadata() const {
    auto m = arch.to_metadata();
    m["train.objective"] = std::string(objective_name(objective));
    m["train.temperature"] = format_double(loss.temperature);
    m["train.lambda"] = format_double(loss.weight);
    m["train.symmetrize"] = loss.symmetrize ? "1" : "0";
    m["train.momentum"] = format_double(momentum);
    m["train.mask_ratio"] = format_double(mask_ratio);
    m["train.queue"] = use_queue ? "1" : "0";
    m["train.queue_size"] = std::to_string(queue_size);
    m["train.batch_size"] = std::to_string(batch_size);
    m["train.epochs"] = std::to_string(epochs);
    m["train.warmup_epochs"] = std::to_string(warmup_epochs);
    m["train.base_lr"] = format_double(base_lr);
    m["train.weight_decay"] = format_double(adamw.weight_decay);
    m["train.crop_scale_min"] = format_double(augment.scale_min);
    m["train.seed"] = std::to_string(seed);
    return m;
  }
};

// --- state ----------------------------------------------------------------------------------

inline constexpr std::uint64_t kInitStream = 0x1417;
inline constexpr std::uint64_t kQueueStream = 0x9e11e;
inline constexpr std::uint64_t kShuffleStream = 0x5f0ff1e;

struct TrainState {
  ParamSet base;
  ParamSet momentum;
  AdamW optimizer;
  std::optional<NegativeQueue> queue;
  std::size_t step = 0;
};

/// Fresh state. Tensors in `init` (e.g. from init_continual) replace the
/// random draws; the momentum branch starts as a copy of the base.
inline TrainState init_train_state(const TrainConfig& cfg, const ParamSet* init = nullptr) {
  cfg.validate();
  TrainState s{.base = {}, .momentum = {}, .optimizer = AdamW(cfg.adamw), .queue = std::nullopt, .step = 0};
  Rng rng(derive_seed({cfg.seed, kInitStream}));
  s.base = init_params(cfg.arch, rng, kBothHeads);
  if (init) {
    for (const auto& [name, t] : *init) {
      auto it = s.base.find(name);
      if (it == s.base.end() || it->second.dims() != t.dims()) {
        throw ValidationError("initial tensor '" + name + "' " + shape_string(t.dims()) + " does not fit the architecture");
      }
      it->second = t;
    }
  }
  s.momentum = s.base;
  if (cfg.use_queue) {
    Rng qrng(derive_seed({cfg.seed, kQueueStream}));
    s.queue.emplace(cfg.queue_size, cfg.arch.d_proj, qrng);
  }
  return s;
}

// --- one step --------------------------------------------------------------------------------

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double contrast = 0.0;
  double soft = 0.0;  // second-head term: SoftCon, or SupCon for that objective
  std::size_t tokens = 0;  // trainable-branch tokens per scene
};

/// Views, masks and targets for one batch, drawn from per-scene streams.
struct PreparedBatch {
  std::vector<Tensor> patches_a;  // trainable branch (masked)
  std::vector<Tensor> patches_b;  // momentum branch (unmasked)
  std::vector<MaskPattern> masks;
  std::vector<MultiHot> labels;
  std::vector<int> class_ids;  // dominant pixel class, for SupCon
};

inline PreparedBatch prepare_batch(std::span<const Scene* const> scenes, const TrainConfig& cfg, std::size_t epoch) {
  PreparedBatch b;
  const std::size_t patches = cfg.arch.num_patches();
  for (const Scene* s : scenes) {
    if (s->channels != cfg.arch.channels) {
      throw ValidationError("scene " + std::to_string(s->id) + " has " + std::to_string(s->channels) +
                            " channels, architecture expects " + std::to_string(cfg.arch.channels));
    }
    Rng rng(derive_seed({cfg.seed, s->id, epoch}));
    const auto [va, vb] = select_views(*s, rng);
    const Tensor a = augment(s->season(va), rng, cfg.augment);
    const Tensor v = augment(s->season(vb), rng, cfg.augment);
    b.masks.push_back(sample_mask(patches, cfg.mask_ratio, rng));
    b.patches_a.push_back(patchify(a, cfg.arch.patch_size));
    b.patches_b.push_back(patchify(v, cfg.arch.patch_size));
    b.labels.push_back(s->label);
    b.class_ids.push_back(dominant_class(s->map, static_cast<int>(s->label.num_classes())));
  }
  return b;
}

/// Momentum-branch key embeddings [N, d_proj] for the requested heads; no graph
/// gradients are ever taken from these.
inline std::map<std::string, Tensor> momentum_keys(const ParamSet& momentum, const Architecture& a,
                                                   std::span<const Tensor> patches,
                                                   std::span<const std::string_view> heads) {
  ComputeGraph g;
  ParamScope p(g);
  const std::vector<MaskPattern> full(patches.size(), MaskPattern::full(a.num_patches()));
  const NodeId feats = build_trunk(p, a, build_tokens(p, a, patches, full), patches.size(), a.num_patches());
  std::vector<std::pair<std::string, NodeId>> outs;
  std::optional<NodeId> acc;
  for (auto h : heads) {
    const NodeId z = build_projector(p, feats, h);
    outs.emplace_back(std::string(h), z);
    acc = acc ? g.add(*acc, g.sum(z)) : g.sum(z);
  }
  if (!acc) throw UsageError("momentum_keys: no heads requested");
  g.set_output(*acc);
  g.forward(momentum);
  std::map<std::string, Tensor> keys;
  for (const auto& [name, id] : outs) keys.emplace(name, g.value(id));
  return keys;
}

struct LossNodes {
  NodeId total, contrast, soft;
};

/// Builds the per-scene-averaged objective for one prepared batch on graph g.
/// Key tensors enter as constants, which is the stop-gradient.
inline LossNodes build_objective(ParamScope& p, const TrainConfig& cfg, const PreparedBatch& b,
                                 const std::map<std::string, Tensor>& keys, const NegativeQueue* queue,
                                 EncodeTrace* trace = nullptr) {
  ComputeGraph& g = p.graph();
  const std::size_t n = b.patches_a.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const NodeId feats = build_trunk(p, cfg.arch, build_tokens(p, cfg.arch, b.patches_a, b.masks), n,
                                   b.masks.front().visible.size(), trace);
  const double tau = cfg.loss.temperature;
  const NodeId zero = g.constant(Tensor::scalar(0.0));
  NodeId contrast = zero, soft = zero;
  if (uses_contrast(cfg.objective)) {
    const NodeId zc = build_projector(p, feats, kContrastHead);
    Tensor k = keys.at(std::string(kContrastHead));
    if (queue) {
      const Tensor q = queue->contents();
      Tensor cat({n + q.rows(), k.cols()});
      std::copy_n(k.data(), k.size(), cat.data());
      std::copy_n(q.data(), q.size(), cat.data() + k.size());
      k = std::move(cat);
    }
    const std::size_t m = k.rows();
    const NodeId xc = similarity_matrix(g, zc, g.constant(std::move(k)));
    contrast = info_nce(g, xc, n, m, tau);
    if (cfg.loss.symmetrize) contrast = g.scale(g.add(contrast, info_nce(g, g.transpose(xc), n, tau)), 0.5);
  }
  if (uses_second_head(cfg.objective)) {
    const NodeId zs = build_projector(p, feats, kSoftHead);
    const NodeId xs = similarity_matrix(g, zs, g.constant(keys.at(std::string(kSoftHead))));
    if (cfg.objective == Objective::kContrastSupCon) {
      const ClassIdBatch ids(b.class_ids);
      soft = supcon(g, xs, ids, tau);
      if (cfg.loss.symmetrize) soft = g.scale(g.add(soft, supcon(g, g.transpose(xs), ids, tau)), 0.5);
    } else {
      std::vector<NormalizedLabel> labels;
      for (const auto& l : b.labels) labels.push_back(normalize_label(l));
      const Tensor y = label_similarity(labels, labels);
      soft = softcon(g, xs, y);
      if (cfg.loss.symmetrize) soft = g.scale(g.add(soft, softcon(g, g.transpose(xs), transposed(y))), 0.5);
    }
  }
  NodeId total;
  switch (cfg.objective) {
    case Objective::kContrast: total = contrast; break;
    case Objective::kSoftCon: total = soft; break;
    default: total = g.add(contrast, g.scale(soft, cfg.loss.weight)); break;
  }
  return {g.scale(total, inv_n), g.scale(contrast, inv_n), g.scale(soft, inv_n)};
}

inline std::vector<std::string_view> heads_for(Objective o) {
  std::vector<std::string_view> h;
  if (uses_contrast(o)) h.push_back(kContrastHead);
  if (uses_second_head(o)) h.push_back(kSoftHead);
  return h;
}

/// One optimizer step on a batch of scenes.
inline StepMetrics train_step(std::span<const Scene* const> scenes, TrainState& state, const TrainConfig& cfg,
                              const Schedule& sched, std::size_t epoch) {
  if (scenes.size() < 2) throw ValidationError("train_step needs at least 2 scenes for in-batch negatives");
  const PreparedBatch batch = prepare_batch(scenes, cfg, epoch);
  const auto heads = heads_for(cfg.objective);
  const auto keys = momentum_keys(state.momentum, cfg.arch, batch.patches_b, heads);

  ComputeGraph g;
  ParamScope p(g);
  const NegativeQueue* queue = cfg.use_queue && state.queue ? &*state.queue : nullptr;
  const LossNodes nodes = build_objective(p, cfg, batch, keys, queue);
  g.set_output(nodes.total);
  StepMetrics m;
  m.step = state.step;
  m.epoch = epoch;
  m.lr = cosine_warmup_lr(state.step, sched);
  m.tokens = batch.masks.front().visible.size();
  try {
    m.total = g.forward(state.base);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(state.step) + " (epoch " + std::to_string(epoch) + ", lr " +
                       format_double(m.lr) + "): " + e.what());
  }
  m.contrast = g.value(nodes.contrast).item();
  m.soft = g.value(nodes.soft).item();
  state.optimizer.step(state.base, g.backward(), m.lr);
  ema_update(state.momentum, state.base, cfg.momentum);
  if (queue) state.queue->push(keys.at(std::string(kContrastHead)));
  ++state.step;
  return m;
}

// --- full run ------------------------------------------------------------------------------

inline std::string metrics_csv(std::span<const StepMetrics> rows) {
  std::string out = "step,epoch,lr,loss_total,loss_contrast,loss_softcon\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + format_double(r.lr) + "," +
           format_double(r.total) + "," + format_double(r.contrast) + "," + format_double(r.soft) + "\n";
  }
  return out;
}

/// Base parameters under their own names plus "momentum."-prefixed copies.
inline Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg) {
  Checkpoint c;
  c.tensors = state.base;
  for (const auto& [name, t] : state.momentum) c.tensors.emplace("momentum." + name, t);
  c.metadata = cfg.to_metadata();
  c.metadata["step"] = std::to_string(state.step);
  c.metadata["seed"] = std::to_string(cfg.seed);
  return c;
}

/// Base (non-momentum) parameters of a checkpoint.
inline ParamSet base_params(const Checkpoint& c) {
  ParamSet out;
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("momentum.", 0) != 0) out.emplace(name, t);
  }
  return out;
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<StepMetrics> metrics;
};

using StepCallback = std::function<void(const StepMetrics&)>;

/// Trains on the dataset's train split. Batches are consecutive slices of a
/// per-epoch shuffle; a trailing partial batch is dropped.
inline PretrainResult pretrain(const Dataset& ds, const TrainConfig& cfg, const ParamSet* init = nullptr,
                               const StepCallback& on_step = {}) {
  cfg.validate();
  if (ds.channels != cfg.arch.channels || ds.size != cfg.arch.image_size) {
    throw ValidationError("dataset is " + std::to_string(ds.channels) + "x" + std::to_string(ds.size) + "x" +
                          std::to_string(ds.size) + " but the architecture expects " +
                          std::to_string(cfg.arch.channels) + "x" + std::to_string(cfg.arch.image_size) + "x" +
                          std::to_string(cfg.arch.image_size));
  }
  const auto train = ds.split(Split::kTrain);
  if (train.empty()) throw ValidationError("dataset has no training scenes");
  const std::size_t per_epoch = train.size() / cfg.batch_size;
  if (cfg.epochs > 0 && per_epoch == 0) {
    throw ValidationError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                          std::to_string(train.size()) + " training scenes");
  }
  const Schedule sched{cfg.base_lr, cfg.warmup_epochs, cfg.epochs, std::max<std::size_t>(per_epoch, 1)};
  TrainState state = init_train_state(cfg, init);
  PretrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<const Scene*> order = train;
    Rng rng(derive_seed({cfg.seed, kShuffleStream, epoch}));
    rng.shuffle(order);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::span<const Scene* const> batch(order.data() + b * cfg.batch_size, cfg.batch_size);
      result.metrics.push_back(train_step(batch, state, cfg, sched, epoch));
      if (on_step) on_step(result.metrics.back());
    }
  }
  result.checkpoint = make_checkpoint(state, cfg);
  return result;
}

}  // namespace softcon
