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

#include <gtest/gtest.h>

#include <numeric>
#include <vector>

#include "softcon/datasynth.hpp"
#include "softcon/evalkit.hpp"
#include "test_support.hpp"

namespace softcon {
namespace {

using testing::oracle_average_precision;

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision(std::vector<double>{0.9, 0.8, 0.1}, std::vector<double>{1, 1, 0}), 1.0);
  EXPECT_EQ(average_precision(std::vector<double>{0.9, 0.5, 0.1}, std::vector<double>{0, 1, 0}), 0.5);
  EXPECT_EQ(average_precision(std::vector<double>{0.3, 0.3}, std::vector<double>{1, 0}), 1.0);
  EXPECT_EQ(average_precision(std::vector<double>{0.3, 0.3}, std::vector<double>{0, 1}), 0.5);
  EXPECT_THROW(average_precision(std::vector<double>{0.3, 0.2}, std::vector<double>{0, 0}), ValidationError);
  EXPECT_THROW(average_precision(std::vector<double>{0.3}, std::vector<double>{1, 0}), ShapeError);
}

TEST(AveragePrecision, MatchesBruteForceExhaustively) {
  Rng rng(17);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::uint32_t pattern = 1; pattern < (1u << n); ++pattern) {
      std::vector<double> t(n);
      for (std::size_t i = 0; i < n; ++i) t[i] = (pattern >> i) & 1u;
      for (int draw = 0; draw < 200; ++draw) {
        std::vector<double> s(n);
        // Coarse scores on every other draw so ties are exercised.
        for (auto& v : s) v = draw % 2 ? rng.uniform() : static_cast<double>(rng.index(3));
        ASSERT_NEAR(average_precision(s, t), oracle_average_precision(s, t), 1e-12) << n << " " << pattern;
      }
    }
  }
}

TEST(MeanAp, MacroAveragesClassesWithPositives) {
  // Class 0 perfectly ranked, class 1 has its single positive second, class 2 has none.
  const Tensor scores = Tensor::matrix({{0.9, 0.9, 0.5}, {0.1, 0.5, 0.4}, {0.0, 0.1, 0.3}});
  const Tensor targets = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  EXPECT_DOUBLE_EQ(mean_ap(scores, targets, MapMode::kMacro), 0.75);
  const auto per = per_class_ap(scores, targets);
  EXPECT_FALSE(per[2].has_value());
  EXPECT_THROW(mean_ap(scores, Tensor({3, 3}, 0.0), MapMode::kMicro), ValidationError);
  EXPECT_THROW(mean_ap(scores, Tensor({3, 2}, 0.0), MapMode::kMicro), ShapeError);
}

TEST(MeanAp, MicroIsFlattenedAp) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor scores({5, 3}), targets({5, 3}, 0.0);
    for (double& v : scores.values()) v = rng.uniform();
    for (double& v : targets.values()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    targets[trial % 15] = 1.0;
    const std::vector<double> s(scores.values().begin(), scores.values().end());
    const std::vector<double> t(targets.values().begin(), targets.values().end());
    EXPECT_NEAR(mean_ap(scores, targets, MapMode::kMicro), oracle_average_precision(s, t), 1e-12);
  }
}

TEST(MeanAp, SingleClassMicroEqualsAp) {
  const Tensor scores = Tensor::matrix({{0.2}, {0.7}, {0.4}, {0.1}});
  const Tensor targets = Tensor::matrix({{1}, {0}, {1}, {0}});
  EXPECT_EQ(mean_ap(scores, targets, MapMode::kMicro),
            average_precision(std::vector<double>{0.2, 0.7, 0.4, 0.1}, std::vector<double>{1, 0, 1, 0}));
}

TEST(MeanAp, PerfectPredictor) {
  const Tensor t = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  EXPECT_EQ(mean_ap(t, t, MapMode::kMicro), 1.0);
  EXPECT_EQ(mean_ap(t, t, MapMode::kMacro), 1.0);
}

FeatureTable synthetic_table(std::size_t n, std::size_t d, std::size_t c, Rng& rng, bool separable) {
  FeatureTable t;
  t.features = Tensor({n, d});
  t.targets = Tensor({n, c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    t.ids.push_back(static_cast<std::uint32_t>(i));
    for (std::size_t j = 0; j < d; ++j) t.features.at(i, j) = rng.normal();
    for (std::size_t k = 0; k < c; ++k) {
      const bool on = separable ? t.features.at(i, k) > 0.3 : rng.bernoulli(0.3);
      t.targets.at(i, k) = on ? 1.0 : 0.0;
    }
  }
  return t;
}

TEST(LinearProbe, SeparableFeatures) {
  Rng rng(5);
  const FeatureTable train = synthetic_table(600, 8, 3, rng, true), test = synthetic_table(300, 8, 3, rng, true);
  const ProbeReport r = linear_probe(train, test, ProbeConfig{});
  EXPECT_GE(r.micro_map, 0.99);
  EXPECT_GE(r.macro_map, 0.99);
  for (double v : r.test_scores.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NE(r.config.find("epochs"), std::string::npos);
}

TEST(LinearProbe, NoiseFeaturesScoreNearPrevalence) {
  Rng rng(6);
  const FeatureTable train = synthetic_table(1000, 8, 3, rng, false), test = synthetic_table(2000, 8, 3, rng, false);
  const ProbeReport r = linear_probe(train, test, ProbeConfig{});
  const auto& tv = test.targets.values();
  const double prevalence = std::accumulate(tv.begin(), tv.end(), 0.0) / static_cast<double>(tv.size());
  EXPECT_NEAR(r.micro_map, prevalence, 0.05);
}

TEST(LinearProbe, RejectsDegenerateInput) {
  Rng rng(7);
  const FeatureTable good = synthetic_table(20, 4, 2, rng, true);
  EXPECT_THROW(linear_probe(FeatureTable{}, good, ProbeConfig{}), ValidationError);
  FeatureTable narrow = synthetic_table(20, 3, 2, rng, true);
  EXPECT_THROW(linear_probe(good, narrow, ProbeConfig{}), ShapeError);
}

Architecture tiny_arch() {
  Architecture a;
  a.channels = 4;
  a.image_size = 16;
  a.patch_size = 4;
  a.d_model = 16;
  a.heads = 2;
  a.blocks = 1;
  a.d_hidden = 32;
  a.d_proj = 8;
  return a;
}

Dataset tiny_dataset() {
  GenConfig g;
  g.num_scenes = 60;
  g.size = 16;
  g.seed = 2;
  return generate_dataset(g);
}

TEST(ExtractFeatures, FrozenDeterministicAndOrdered) {
  const Dataset ds = tiny_dataset();
  const Architecture a = tiny_arch();
  Rng rng(1);
  const ParamSet params = init_params(a, rng);
  const ParamSet before = params;
  const FeatureTable t1 = extract_features(params, a, ds, Split::kTest);
  const FeatureTable t2 = extract_features(params, a, ds, Split::kTest);
  EXPECT_EQ(params, before);
  EXPECT_EQ(t1.features, t2.features);
  const auto scenes = ds.split(Split::kTest);
  ASSERT_EQ(t1.rows(), scenes.size());
  EXPECT_EQ(t1.features.rows(), scenes.size());
  EXPECT_EQ(t1.features.cols(), a.d_model);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(t1.ids[i], scenes[i]->id);
    for (std::size_t k = 0; k < ds.num_classes; ++k) EXPECT_EQ(t1.targets.at(i, k), scenes[i]->label.test(k) ? 1.0 : 0.0);
  }
  probe_encoder(params, a, ds, ProbeConfig{.epochs = 2});
  EXPECT_EQ(params, before);
}

TEST(ExtractFeatures, ArchitectureMismatch) {
  const Dataset ds = tiny_dataset();
  Architecture a = tiny_arch();
  Rng rng(1);
  const ParamSet params = init_params(a, rng);
  a.channels = 13;
  EXPECT_THROW(extract_features(params, a, ds, Split::kTrain), ValidationError);
}

TEST(Ablation, SingleRunCsv) {
  const Dataset ds = tiny_dataset();
  AblationSetup setup;
  setup.train.arch = tiny_arch();
  setup.train.augment.out_size = 16;
  setup.train.batch_size = 8;
  setup.train.epochs = 1;
  setup.train.warmup_epochs = 0;
  setup.probe.epochs = 3;
  const std::vector<AblationVariant> variants{{Objective::kContrastSupCon, 0.1, 0.2, InitMode::kScratch}};
  const std::vector<std::uint64_t> seeds{4};
  const auto rows = ablation_report(ds, variants, seeds, setup);
  ASSERT_EQ(rows.size(), 1u);
  const std::string csv = ablation_csv(rows);
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t nl; (nl = csv.find('\n', start)) != std::string::npos; start = nl + 1)
    lines.push_back(csv.substr(start, nl - start));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "variant,lambda,mask_ratio,init,seed,micro_map,macro_map");
  EXPECT_EQ(lines[1].rfind("contrast+supcon,0.1,0.2,scratch,4,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("contrast+supcon,0.1,0.2,scratch,mean,", 0), 0u);
  EXPECT_EQ(lines[3], "contrast+supcon,0.1,0.2,scratch,std,0,0");
  EXPECT_GE(rows[0].micro_map, 0.0);
  EXPECT_LE(rows[0].micro_map, 1.0);
}

TEST(Ablation, ContinualWithoutSourceFails) {
  const Dataset ds = tiny_dataset();
  AblationSetup setup;
  setup.train.arch = tiny_arch();
  EXPECT_THROW(run_variant(ds, AblationVariant{.init = InitMode::kContinual}, 0, setup), ValidationError);
  EXPECT_THROW(parse_init("warm"), ValidationError);
  EXPECT_EQ(parse_init("continual"), InitMode::kContinual);
}

TEST(Summarize, SampleStandardDeviation) {
  const AblationVariant v;
  const std::vector<AblationRow> rows{{v, 0, 0.8, 0.7}, {v, 1, 0.9, 0.7}, {v, 2, 1.0, 0.7}};
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].micro_mean, 0.9, 1e-15);
  EXPECT_NEAR(s[0].micro_std, 0.1, 1e-15);
  EXPECT_NEAR(s[0].macro_std, 0.0, 1e-15);
}

}  // namespace
}  // namespace softcon
