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

// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 1 6 10`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "softcon/datasynth.hpp"
#include "softcon/evalkit.hpp"
#include "softcon/gradsuite.hpp"
#include "softcon/trainkit.hpp"
#include "test_support.hpp"

namespace softcon {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass;
  std::string detail;
};

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// --- 1-6: exact oracles ---------------------------------------------------------------

constexpr std::size_t kOracleBatch = 8;

Tensor random_label_similarity(std::size_t n, Rng& rng, bool single) {
  std::vector<MultiHot> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const auto mask = single ? 1u << rng.index(9) : static_cast<std::uint32_t>(1 + rng.index(511));
    labels.push_back(MultiHot::from_mask(mask, 9));
  }
  return label_similarity(labels, labels);
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto results = run_grad_suite(GradSuiteConfig{.instances = 100, .batch = 8, .dim = 16, .epsilon = 1e-5});
  const double secs = seconds_since(t0);
  bool ok = secs < 10.0;
  std::string d;
  for (const auto& r : results) {
    ok = ok && r.max_error <= 1e-6;
    d += fmt("%s %.2e, ", r.loss.c_str(), r.max_error);
  }
  return {ok, d + fmt("%.1f s (limits 1e-6, 10 s)", secs)};
}

Outcome softcon_gradient_identity() {
  Rng rng(2);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const Tensor x = testing::random_tensor({kOracleBatch, kOracleBatch}, rng);
    const Tensor y = random_label_similarity(kOracleBatch, rng, false);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double numeric = testing::five_point_derivative([&](const Tensor& v) { return softcon(v, y); }, x, i);
      worst = std::max(worst, std::abs(numeric - (testing::oracle_sigmoid(x[i]) - y[i])));
    }
  }
  return {worst <= 1e-10, fmt("max |numeric - (sigma(X) - Y)| = %.2e over 20 instances (limit 1e-10)", worst)};
}

Outcome degeneracy() {
  Rng rng(3);
  double worst = 0.0;
  std::vector<int> distinct(kOracleBatch);
  for (std::size_t i = 0; i < kOracleBatch; ++i) distinct[i] = static_cast<int>(i);
  for (int inst = 0; inst < 100; ++inst) {
    const Tensor x = testing::oracle_similarity(testing::random_tensor({kOracleBatch, 16}, rng),
                                                testing::random_tensor({kOracleBatch, 16}, rng));
    worst = std::max(worst, std::abs(supcon(x, ClassIdBatch(distinct), 0.2) - info_nce(x, 0.2)));
  }
  std::size_t non_binary = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const Tensor y = random_label_similarity(kOracleBatch, rng, true);
    for (double v : y.values()) non_binary += v != 0.0 && v != 1.0;
  }
  return {worst <= 1e-12 && non_binary == 0,
          fmt("max |supcon - info_nce| = %.2e (limit 1e-12); non-binary single-label Y entries: %zu", worst, non_binary)};
}

Outcome ema_law() {
  const Architecture a;
  Rng rb(4), rm(5);
  const ParamSet base = init_params(a, rb, kBothHeads);
  ParamSet mom = init_params(a, rm, kBothHeads);
  auto dist = [&] {
    double s = 0.0;
    for (const auto& [k, t] : mom) {
      const Tensor& b = base.at(k);
      for (std::size_t i = 0; i < t.size(); ++i) s += (t[i] - b[i]) * (t[i] - b[i]);
    }
    return std::sqrt(s);
  };
  const double m = TrainConfig{}.momentum, d0 = dist();
  double worst = 0.0;
  for (int k = 1; k <= 50; ++k) {
    ema_update(mom, base, m);
    worst = std::max(worst, std::abs(dist() - std::pow(m, k) * d0));
  }
  return {worst <= 1e-12, fmt("m = %.2f, d0 = %.3f, max |d_k - m^k d0| = %.2e for k <= 50 (limit 1e-12)", m, d0, worst)};
}

Outcome masking_contract() {
  const Architecture a;
  Rng rng(6);
  const ParamSet params = init_params(a, rng);
  bool ok = a.num_patches() == 16;
  std::string d = fmt("P = %zu; tokens", a.num_patches());
  for (auto [ratio, expected] : {std::pair{0.0, 16u}, {0.2, 13u}, {0.5, 8u}}) {
    std::set<std::size_t> seen;
    bool invariant = true;
    for (int t = 0; t < 20; ++t) {
      const Tensor tokens = patch_embed(testing::random_tensor({a.channels, a.image_size, a.image_size}, rng),
                                        a.patch_size, params);
      const MaskPattern m = sample_mask(a.num_patches(), ratio, rng);
      EncodeTrace trace;
      const Tensor out = encode(tokens, params, a, &m, &trace);
      seen.insert(trace.tokens);
      for (const auto& s : trace.attention) ok = ok && s == Shape{expected, expected};
      Tensor perturbed = tokens;
      for (std::uint32_t i = 0; i < tokens.rows(); ++i) {
        if (std::binary_search(m.visible.begin(), m.visible.end(), i)) continue;
        for (std::size_t k = 0; k < tokens.cols(); ++k) perturbed.at(i, k) += rng.uniform(-5, 5);
      }
      invariant = invariant && encode(perturbed, params, a, &m) == out;
    }
    ok = ok && seen == std::set<std::size_t>{expected} && invariant;
    d += fmt(" r=%.1f:%zu%s", ratio, *seen.begin(), invariant ? "" : "(perturbation leaked)");
  }
  return {ok, d + " (expected 16/13/8, bitwise invariant)"};
}

Outcome map_oracle() {
  Rng rng(7);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::uint32_t pattern = 1; pattern < (1u << n); ++pattern) {
      std::vector<double> t(n), s(n);
      for (std::size_t i = 0; i < n; ++i) t[i] = (pattern >> i) & 1u;
      for (int draw = 0; draw < 200; ++draw) {
        for (auto& v : s) v = draw % 2 ? rng.uniform() : static_cast<double>(rng.index(3));
        worst = std::max(worst, std::abs(average_precision(s, t) - testing::oracle_average_precision(s, t)));
        ++cases;
      }
    }
  }
  return {worst <= 1e-12, fmt("%zu instances, max |AP - brute force| = %.2e (limit 1e-12)", cases, worst)};
}

// --- 7, 9, 11: desk-scale replays on the default dataset ------------------------------

struct RunRecord {
  double micro = 0.0;
  std::vector<std::uint8_t> checkpoint;
  std::string metrics;
};

class RunCache {
 public:
  const Dataset& dataset() {
    if (!ds_) ds_ = generate_dataset(GenConfig{});
    return *ds_;
  }

  static TrainConfig config(Objective o, double mask, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.objective = o;
    cfg.mask_ratio = mask;
    cfg.seed = seed;
    return cfg;
  }

  static RunRecord execute(const Dataset& ds, const TrainConfig& cfg) {
    const PretrainResult r = pretrain(ds, cfg);
    ProbeConfig pc;
    pc.seed = cfg.seed;
    return {probe_encoder(base_params(r.checkpoint), cfg.arch, ds, pc).micro_map, encode_checkpoint(r.checkpoint),
            metrics_csv(r.metrics)};
  }

  const RunRecord& get(Objective o, double mask, std::uint64_t seed) {
    const auto key = std::make_tuple(o, mask, seed);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    const auto t0 = Clock::now();
    RunRecord rec = execute(dataset(), config(o, mask, seed));
    progress(fmt("%s r=%.1f seed %llu: micro %.4f (%.0f s)", std::string(objective_name(o)).c_str(), mask,
                 static_cast<unsigned long long>(seed), rec.micro, seconds_since(t0)));
    return runs_.emplace(key, std::move(rec)).first->second;
  }

  double mean_micro(Objective o, double mask) {
    double s = 0.0;
    for (std::uint64_t seed : kSeeds) s += get(o, mask, seed).micro;
    return s / static_cast<double>(kSeeds.size());
  }

  static constexpr std::array<std::uint64_t, 3> kSeeds{0, 1, 2};

 private:
  std::optional<Dataset> ds_;
  std::map<std::tuple<Objective, double, std::uint64_t>, RunRecord> runs_;
};

RunCache& cache() {
  static RunCache c;
  return c;
}

Outcome loss_ablation() {
  const auto t0 = Clock::now();
  const double contrast = cache().mean_micro(Objective::kContrast, 0.2);
  const double supcon = cache().mean_micro(Objective::kContrastSupCon, 0.2);
  const double soft = cache().mean_micro(Objective::kContrastSoftCon, 0.2);
  const double minutes = seconds_since(t0) / 60.0;
  const double gap = 100.0 * (soft - contrast);
  const bool ok = soft >= supcon && supcon >= contrast && gap >= 0.5 && minutes < 30.0;
  return {ok, fmt("mean micro mAP contrast %.2f, +supcon %.2f, +softcon %.2f; gap %+.2f pts (need >= +0.5); "
                  "%.1f min (limit 30)",
                  100 * contrast, 100 * supcon, 100 * soft, gap, minutes)};
}

Outcome masking_replay() {
  const double r0 = cache().mean_micro(Objective::kContrastSoftCon, 0.0);
  const double r2 = cache().mean_micro(Objective::kContrastSoftCon, 0.2);
  const double r5 = cache().mean_micro(Objective::kContrastSoftCon, 0.5);

  const Dataset& ds = cache().dataset();
  const auto scenes = ds.split(Split::kTrain);
  const std::vector<const Scene*> batch(scenes.begin(), scenes.begin() + 64);
  std::size_t tokens[2];
  for (int i = 0; i < 2; ++i) {
    TrainConfig cfg = RunCache::config(Objective::kContrastSoftCon, i == 0 ? 0.0 : 0.5, 0);
    TrainState st = init_train_state(cfg);
    tokens[i] = train_step(batch, st, cfg, Schedule{cfg.base_lr, 0, 1, 1}, 0).tokens;
  }
  const bool ok = r2 >= r0 - 0.01 && r5 >= r0 - 0.02 && 2 * tokens[1] == tokens[0];
  return {ok, fmt("mean micro mAP r=0 %.2f, r=0.2 %.2f (%+.2f, floor -1.0), r=0.5 %.2f (%+.2f, floor -2.0); "
                  "tokens per step %zu vs %zu",
                  100 * r0, 100 * r2, 100 * (r2 - r0), 100 * r5, 100 * (r5 - r0), tokens[1], tokens[0])};
}

Outcome determinism() {
  const TrainConfig cfg = RunCache::config(Objective::kContrastSoftCon, 0.2, 0);
  const RunRecord& first = cache().get(cfg.objective, cfg.mask_ratio, cfg.seed);
  const RunRecord second = RunCache::execute(cache().dataset(), cfg);
  const bool same_ckpt = first.checkpoint == second.checkpoint, same_metrics = first.metrics == second.metrics;
  return {same_ckpt && same_metrics,
          fmt("checkpoint %zu bytes %s, metrics CSV %zu bytes %s", first.checkpoint.size(),
              same_ckpt ? "identical" : "DIFFERENT", first.metrics.size(), same_metrics ? "identical" : "DIFFERENT")};
}

// --- 8: continual pretraining across channel counts -------------------------------------

Outcome continual_replay() {
  GenConfig source_gen;
  source_gen.channels = 3;
  source_gen.seed = 100;
  GenConfig target_gen;
  target_gen.channels = 13;
  target_gen.seed = 200;
  const Dataset source_ds = generate_dataset(source_gen), target_ds = generate_dataset(target_gen);

  TrainConfig source_cfg;
  source_cfg.arch.channels = 3;
  const auto t0 = Clock::now();
  const Checkpoint source = pretrain(source_ds, source_cfg).checkpoint;
  progress(fmt("3-channel source pretrained (%.0f s)", seconds_since(t0)));

  AblationSetup setup;
  setup.train.arch.channels = 13;
  setup.train.epochs = 10;
  setup.train.warmup_epochs = 3;
  setup.source = &source;
  const std::vector<AblationVariant> variants{{.init = InitMode::kScratch}, {.init = InitMode::kContinual}};
  const auto rows = ablation_report(target_ds, variants, RunCache::kSeeds, setup, [](const AblationRow& r) {
    progress(fmt("%s seed %llu: micro %.4f", std::string(init_name(r.variant.init)).c_str(),
                 static_cast<unsigned long long>(r.seed), r.micro_map));
  });
  const auto summary = summarize(rows);
  const double scratch = summary[0].micro_mean, continual = summary[1].micro_mean;
  return {continual >= scratch,
          fmt("13-channel target, 10 epochs: mean micro mAP continual %.2f vs scratch %.2f (%+.2f)", 100 * continual,
              100 * scratch, 100 * (continual - scratch))};
}

// --- 10: generator statistics ---------------------------------------------------------------

Outcome generator_statistics() {
  GenConfig cfg;
  cfg.num_scenes = 10000;
  const DatasetStats st = dataset_stats(generate_dataset(cfg));
  const double single = st.single_label_fraction(), four = st.at_least_labels(4), seasons = st.at_least_seasons(2);
  const bool ok = std::abs(single - 0.17) <= 0.05 && std::abs(four - 0.70) <= 0.05 && seasons >= 0.95;
  return {ok, fmt("10000 scenes: single-label %.4f (0.17 +- 0.05), >=4 labels %.4f (0.70 +- 0.05), "
                  ">=2 seasons %.4f (>= 0.95)",
                  single, four, seasons)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace softcon

int main(int argc, char** argv) {
  using namespace softcon;
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "soft BCE gradient identity", softcon_gradient_identity},
      {3, "degeneracy oracle", degeneracy},
      {4, "EMA law", ema_law},
      {5, "masking contract", masking_contract},
      {6, "mAP oracle equivalence", map_oracle},
      {10, "generator statistics", generator_statistics},
      {7, "loss-ablation replay", loss_ablation},
      {9, "masking-ratio replay", masking_replay},
      {11, "determinism", determinism},
      {8, "continual-init replay", continual_replay},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
