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

// Frozen-feature evaluation: feature extraction, average precision, a
// linear multi-label probe, and the pretrain -> probe ablation harness.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softcon/checkpoint.hpp"
#include "softcon/encoder.hpp"
#include "softcon/error.hpp"
#include "softcon/rng.hpp"
#include "softcon/scene.hpp"
#include "softcon/tensor.hpp"
#include "softcon/text.hpp"
#include "softcon/trainkit.hpp"

namespace softcon {

// --- features -----------------------------------------------------------------------

struct FeatureTable {
  Tensor features;  // N x d
  Tensor targets;   // N x C, 0/1
  std::vector<std::uint32_t> ids;

  std::size_t rows() const noexcept { return ids.size(); }
};

/// Unmasked, unaugmented features of each scene's first season, in dataset order.
inline FeatureTable extract_features(const ParamSet& params, const Architecture& a, const Dataset& ds, Split split) {
  if (ds.channels != a.channels || ds.size != a.image_size) {
    throw ValidationError("architecture (" + std::to_string(a.channels) + " channels, " + std::to_string(a.image_size) +
                          " px) does not match dataset (" + std::to_string(ds.channels) + " channels, " +
                          std::to_string(ds.size) + " px)");
  }
  const auto scenes = ds.split(split);
  if (scenes.empty()) throw ValidationError("split '" + std::string(split_name(split)) + "' is empty");
  std::vector<Tensor> images;
  images.reserve(scenes.size());
  FeatureTable t;
  t.targets = Tensor({scenes.size(), ds.num_classes}, 0.0);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    images.push_back(scenes[i]->season(0));
    t.ids.push_back(scenes[i]->id);
    for (std::size_t c = 0; c < ds.num_classes; ++c) t.targets.at(i, c) = scenes[i]->label.test(c) ? 1.0 : 0.0;
  }
  t.features = encode_images(params, a, images);
  return t;
}

// --- average precision -------------------------------------------------------------------

/// Ranks by descending score, ties by ascending index, and averages
/// precision@k over the ranks k that hold a positive.
inline double average_precision(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) throw ShapeError("average_precision: scores and targets differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (targets[order[k]] > 0.5) {
      hits += 1.0;
      sum += hits / static_cast<double>(k + 1);
    }
  }
  if (hits == 0.0) throw ValidationError("average precision is undefined without positive targets");
  return sum / hits;
}

enum class MapMode { kMicro, kMacro };

/// Per-class AP; classes with no positive are left empty.
inline std::vector<std::optional<double>> per_class_ap(const Tensor& scores, const Tensor& targets) {
  if (scores.dims() != targets.dims() || scores.rank() != 2) {
    throw ShapeError("mean_ap: scores " + shape_string(scores.dims()) + " vs targets " + shape_string(targets.dims()));
  }
  const std::size_t n = scores.rows(), c = scores.cols();
  std::vector<std::optional<double>> out(c);
  std::vector<double> s(n), t(n);
  for (std::size_t k = 0; k < c; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores.at(i, k);
      t[i] = targets.at(i, k);
      any = any || t[i] > 0.5;
    }
    if (any) out[k] = average_precision(s, t);
  }
  return out;
}

inline double mean_ap(const Tensor& scores, const Tensor& targets, MapMode mode) {
  if (scores.dims() != targets.dims() || scores.rank() != 2) {
    throw ShapeError("mean_ap: scores " + shape_string(scores.dims()) + " vs targets " + shape_string(targets.dims()));
  }
  if (mode == MapMode::kMicro) return average_precision(scores.values(), targets.values());
  double sum = 0.0;
  int used = 0;
  for (const auto& ap : per_class_ap(scores, targets)) {
    if (ap) {
      sum += *ap;
      ++used;
    }
  }
  if (used == 0) throw ValidationError("mean average precision is undefined without positive targets");
  return sum / used;
}

// --- linear probe ------------------------------------------------------------------------

struct ProbeConfig {
  std::size_t epochs = 100;
  double lr = 0.05;
  std::size_t batch_size = 256;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ValidationError("probe epochs and batch_size must be positive");
    if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw ValidationError("probe lr must be positive, decay non-negative");
  }

  std::string to_text() const {
    return "probe.epochs = " + std::to_string(epochs) + "\nprobe.lr = " + format_double(lr) +
           "\nprobe.batch_size = " + std::to_string(batch_size) + "\nprobe.weight_decay = " +
           format_double(weight_decay) + "\nprobe.seed = " + std::to_string(seed) + "\n";
  }
};

struct ProbeReport {
  double micro_map = 0.0;
  double macro_map = 0.0;
  std::vector<std::optional<double>> per_class;
  Tensor test_scores;  // sigmoid probabilities
  std::string config;
};

/// Trains one affine layer with elementwise BCE on `train` and scores `test`.
/// Features are standardized with train-split statistics.
inline ProbeReport linear_probe(const FeatureTable& train, const FeatureTable& test, const ProbeConfig& cfg) {
  cfg.validate();
  if (train.rows() == 0 || test.rows() == 0) throw ValidationError("linear probe needs nonempty train and test splits");
  if (train.features.cols() != test.features.cols() || train.targets.cols() != test.targets.cols()) {
    throw ShapeError("train and test feature tables differ in width");
  }
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const std::size_t n = train.rows(), d = train.features.cols(), c = train.targets.cols();

  const CMap xtr(train.features.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd[j] = sd[j] > 1e-12 ? sd[j] : 1.0;
  auto standardize = [&](const Tensor& f) -> Mat {
    const CMap x(f.data(), static_cast<Eigen::Index>(f.rows()), static_cast<Eigen::Index>(d));
    return ((x.rowwise() - mu).array().rowwise() / sd.array()).matrix();
  };
  const Mat x = standardize(train.features);
  const CMap y(train.targets.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));

  ParamSet params{{"probe.weight", Tensor({d, c}, 0.0)}, {"probe.bias", Tensor({c}, 0.0)}};
  AdamW opt(AdamWConfig{.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = cfg.weight_decay});
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule sched{cfg.lr, 0, cfg.epochs, per_epoch};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed({cfg.seed, 0x9be, epoch}));
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      Mat xb(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d));
      Mat yb(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
      for (std::size_t i = 0; i < b; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[start + i]));
        yb.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(order[start + i]));
      }
      const CMap w(params.at("probe.weight").data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c));
      const Eigen::Map<const Eigen::RowVectorXd> bias(params.at("probe.bias").data(), static_cast<Eigen::Index>(c));
      Mat logits = (xb * w).rowwise() + bias;
      const Mat resid = (1.0 / (1.0 + (-logits.array()).exp())).matrix() - yb;
      Gradients grads{{"probe.weight", Tensor({d, c})}, {"probe.bias", Tensor({c})}};
      Eigen::Map<Mat>(grads["probe.weight"].data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) =
          xb.transpose() * resid / static_cast<double>(b);
      Eigen::Map<Eigen::RowVectorXd>(grads["probe.bias"].data(), static_cast<Eigen::Index>(c)) =
          resid.colwise().sum() / static_cast<double>(b);
      opt.step(params, grads, cosine_warmup_lr(step++, sched));
    }
  }

  const Mat xt = standardize(test.features);
  const CMap w(params.at("probe.weight").data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c));
  const Eigen::Map<const Eigen::RowVectorXd> bias(params.at("probe.bias").data(), static_cast<Eigen::Index>(c));
  const auto rows = static_cast<Eigen::Index>(test.rows()), cols = static_cast<Eigen::Index>(c);
  // Ranking uses logits; saturated probabilities would introduce artificial ties.
  Tensor logits({test.rows(), c});
  Eigen::Map<Mat>(logits.data(), rows, cols) = (xt * w).rowwise() + bias;
  ProbeReport r;
  r.micro_map = mean_ap(logits, test.targets, MapMode::kMicro);
  r.macro_map = mean_ap(logits, test.targets, MapMode::kMacro);
  r.per_class = per_class_ap(logits, test.targets);
  r.test_scores = Tensor({test.rows(), c});
  Eigen::Map<Mat>(r.test_scores.data(), rows, cols) =
      (1.0 / (1.0 + (-Eigen::Map<const Mat>(logits.data(), rows, cols).array()).exp())).matrix();
  r.config = cfg.to_text();
  return r;
}

/// Extract train/test features with frozen parameters and probe them.
inline ProbeReport probe_encoder(const ParamSet& params, const Architecture& a, const Dataset& ds,
                                 const ProbeConfig& cfg) {
  return linear_probe(extract_features(params, a, ds, Split::kTrain), extract_features(params, a, ds, Split::kTest),
                      cfg);
}

// --- ablations ------------------------------------------------------------------------------

enum class InitMode { kScratch, kContinual };

/// Seeds the re-randomized input embedding of a continual run.
inline constexpr std::uint64_t kContinualStream = 0xc0ffee;

inline std::string_view init_name(InitMode m) { return m == InitMode::kScratch ? "scratch" : "continual"; }

inline InitMode parse_init(std::string_view s) {
  if (s == "scratch") return InitMode::kScratch;
  if (s == "continual") return InitMode::kContinual;
  throw ValidationError("unknown init mode '" + std::string(s) + "' (expected scratch or continual)");
}

struct AblationVariant {
  Objective objective = Objective::kContrastSoftCon;
  double lambda = 0.1;
  double mask_ratio = 0.2;
  InitMode init = InitMode::kScratch;
};

struct AblationRow {
  AblationVariant variant;
  std::uint64_t seed = 0;
  double micro_map = 0.0;
  double macro_map = 0.0;
};

struct AblationSetup {
  TrainConfig train;   // objective, lambda and mask_ratio are overridden per variant
  ProbeConfig probe;
  const Checkpoint* source = nullptr;  // required for continual variants
};

using AblationProgress = std::function<void(const AblationRow&)>;

/// pretrain -> probe for one (variant, seed).
inline AblationRow run_variant(const Dataset& ds, const AblationVariant& v, std::uint64_t seed,
                               const AblationSetup& setup) {
  TrainConfig cfg = setup.train;
  cfg.objective = v.objective;
  cfg.loss.weight = v.lambda;
  cfg.mask_ratio = v.mask_ratio;
  cfg.seed = seed;
  std::optional<ParamSet> init;
  if (v.init == InitMode::kContinual) {
    if (!setup.source) throw ValidationError("continual variant requires a source checkpoint");
    Rng rng(derive_seed({seed, kContinualStream}));
    init = init_continual(*setup.source, cfg.arch, rng);
  }
  const PretrainResult run = pretrain(ds, cfg, init ? &*init : nullptr);
  ProbeConfig pc = setup.probe;
  pc.seed = seed;
  const ProbeReport rep = probe_encoder(base_params(run.checkpoint), cfg.arch, ds, pc);
  return {v, seed, rep.micro_map, rep.macro_map};
}

inline std::vector<AblationRow> ablation_report(const Dataset& ds, std::span<const AblationVariant> variants,
                                                std::span<const std::uint64_t> seeds, const AblationSetup& setup,
                                                const AblationProgress& progress = {}) {
  if (variants.empty() || seeds.empty()) throw ValidationError("ablation needs at least one variant and one seed");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    for (auto seed : seeds) {
      rows.push_back(run_variant(ds, v, seed, setup));
      if (progress) progress(rows.back());
    }
  }
  return rows;
}

struct VariantSummary {
  AblationVariant variant;
  std::size_t runs = 0;
  double micro_mean = 0.0, micro_std = 0.0, macro_mean = 0.0, macro_std = 0.0;
};

inline bool same_variant(const AblationVariant& a, const AblationVariant& b) {
  return a.objective == b.objective && a.lambda == b.lambda && a.mask_ratio == b.mask_ratio && a.init == b.init;
}

/// Mean and sample standard deviation per variant, in first-seen order.
inline std::vector<VariantSummary> summarize(std::span<const AblationRow> rows) {
  std::vector<VariantSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const VariantSummary& s) { return same_variant(s.variant, r.variant); });
    if (it != out.end()) continue;
    VariantSummary s{r.variant};
    std::vector<double> mi, ma;
    for (const auto& q : rows) {
      if (!same_variant(q.variant, r.variant)) continue;
      mi.push_back(q.micro_map);
      ma.push_back(q.macro_map);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    s.runs = mi.size();
    stats(mi, s.micro_mean, s.micro_std);
    stats(ma, s.macro_mean, s.macro_std);
    out.push_back(s);
  }
  return out;
}

/// One row per run, then "mean" and "std" rows per variant in the seed column.
inline std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "variant,lambda,mask_ratio,init,seed,micro_map,macro_map\n";
  auto prefix = [](const AblationVariant& v) {
    return std::string(objective_name(v.objective)) + "," + format_double(v.lambda) + "," +
           format_double(v.mask_ratio) + "," + std::string(init_name(v.init)) + ",";
  };
  for (const auto& r : rows) {
    out += prefix(r.variant) + std::to_string(r.seed) + "," + format_double(r.micro_map) + "," +
           format_double(r.macro_map) + "\n";
  }
  for (const auto& s : summarize(rows)) {
    out += prefix(s.variant) + "mean," + format_double(s.micro_mean) + "," + format_double(s.macro_mean) + "\n";
    out += prefix(s.variant) + "std," + format_double(s.micro_std) + "," + format_double(s.macro_std) + "\n";
  }
  return out;
}

}  // namespace softcon
