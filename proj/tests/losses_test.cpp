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

#include <cmath>
#include <numeric>

#include "softcon/losses.hpp"
#include "test_support.hpp"

namespace softcon {
namespace {

using testing::random_tensor;
using testing::random_unit_rows;

// Hand-evaluated values (see each test for the arithmetic).
constexpr double kInfoNceEye2 = 0.6265233750364457;     // 2 log(1 + e^-1)
constexpr double kSupConEye2SameClass = 1.6265233750364456;  // log(1+e^-1) + log(1+e)
constexpr double kBceLogit2Target1 = 0.1269280110429726;      // log(1 + e^-2)

TEST(SimilarityMatrix, OrthonormalRowsGiveIdentity) {
  const Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  EXPECT_EQ(similarity_matrix(EmbeddingBatch(eye), EmbeddingBatch(eye)), eye);
}

TEST(SimilarityMatrix, HandDotProduct) {
  const Tensor x =
      similarity_matrix(EmbeddingBatch(Tensor::matrix({{0.6, 0.8}})), EmbeddingBatch(Tensor::matrix({{0.8, 0.6}})));
  EXPECT_NEAR(x[0], 0.96, 1e-15);
}

TEST(SimilarityMatrix, SelfSimilarityOfOneRow) {
  const EmbeddingBatch a(Tensor::matrix({{0.0, 1.0}}));
  EXPECT_NEAR(similarity_matrix(a, a)[0], 1.0, 1e-15);
}

TEST(SimilarityMatrix, ShapeMismatch) {
  Rng rng(1);
  EXPECT_THROW(similarity_matrix(EmbeddingBatch(random_unit_rows(3, 4, rng)), EmbeddingBatch(random_unit_rows(2, 4, rng))),
               ShapeError);
  EXPECT_THROW(similarity_matrix(EmbeddingBatch(random_unit_rows(3, 4, rng)), EmbeddingBatch(random_unit_rows(3, 5, rng))),
               ShapeError);
}

TEST(SimilarityMatrix, EntriesBoundedForUnitRows) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = similarity_matrix(EmbeddingBatch(random_unit_rows(6, 5, rng)), EmbeddingBatch(random_unit_rows(6, 5, rng)));
    for (double v : x.values()) {
      EXPECT_GE(v, -1.0 - 1e-9);
      EXPECT_LE(v, 1.0 + 1e-9);
    }
  }
}

TEST(EmbeddingBatch, RejectsNonUnitRows) {
  EXPECT_THROW(EmbeddingBatch(Tensor::matrix({{1.0, 1.0}})), ValidationError);
  EXPECT_NO_THROW(EmbeddingBatch::from_raw(Tensor::matrix({{1.0, 1.0}})));
}

TEST(InfoNce, SingleAnchorIsZero) { EXPECT_EQ(info_nce(Tensor::matrix({{0.37}}), 0.2), 0.0); }

TEST(InfoNce, IdentityTwoByTwo) {
  const double v = info_nce(Tensor::matrix({{1, 0}, {0, 1}}), 1.0);
  EXPECT_NEAR(v, kInfoNceEye2, 1e-14);
  EXPECT_NEAR(v, testing::oracle_info_nce(Tensor::matrix({{1, 0}, {0, 1}}), 1.0), 1e-14);
}

TEST(InfoNce, RejectsNonPositiveTemperature) {
  EXPECT_THROW(info_nce(Tensor::matrix({{1}}), 0.0), ValidationError);
  EXPECT_THROW(info_nce(Tensor::matrix({{1}}), -0.2), ValidationError);
}

TEST(InfoNce, DefaultTemperature) { EXPECT_EQ(LossConfig{}.temperature, 0.2); }

TEST(InfoNce, MatchesOracleOnRandomInstances) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor({8, 8}, rng);
    EXPECT_NEAR(info_nce(x, 0.2), testing::oracle_info_nce(x, 0.2), 1e-10);
  }
}

TEST(InfoNce, DecreasesAsPositiveSimilarityGrows) {
  Rng rng(12);
  Tensor x = random_tensor({5, 5}, rng);
  double prev = info_nce(x, 0.2);
  for (int step = 0; step < 20; ++step) {
    x.at(2, 2) += 0.05;
    const double cur = info_nce(x, 0.2);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(InfoNce, QueueColumnsAddNegatives) {
  Rng rng(13);
  const Tensor x = random_tensor({4, 4}, rng);
  Tensor wide({4, 7});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 7; ++j) wide.at(i, j) = j < 4 ? x.at(i, j) : 0.5;
  }
  ComputeGraph g;
  g.set_output(info_nce(g, g.input("X"), 4, 7, 0.2));
  const double with_queue = g.forward({{"X", wide}});
  EXPECT_GT(with_queue, info_nce(x, 0.2));
  double oracle = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < 7; ++j) denom += std::exp(wide.at(i, j) / 0.2);
    oracle -= std::log(std::exp(wide.at(i, i) / 0.2) / denom);
  }
  EXPECT_NEAR(with_queue, oracle, 1e-10);
}

TEST(SupCon, DistinctIdsReduceToInfoNce) {
  Rng rng(21);
  std::vector<int> ids(8);
  std::iota(ids.begin(), ids.end(), 0);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor({8, 8}, rng);
    EXPECT_NEAR(supcon(x, ClassIdBatch(ids), 0.2), info_nce(x, 0.2), 1e-12);
  }
}

TEST(SupCon, TwoAnchorsSameClass) {
  // Per anchor: (1/2)(log(1+e^-1) + log(1+e)); two anchors.
  EXPECT_NEAR(supcon(Tensor::matrix({{1, 0}, {0, 1}}), ClassIdBatch({0, 0}), 1.0), kSupConEye2SameClass, 1e-14);
}

TEST(SupCon, SingleAnchorIsZero) {
  EXPECT_NEAR(supcon(Tensor::matrix({{0.9}}), ClassIdBatch({3}), 0.2), 0.0, 1e-15);
}

TEST(SupCon, MatchesOracleWithRepeatedClasses) {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> ids(8);
    for (int& id : ids) id = static_cast<int>(rng.index(3));
    const Tensor x = random_tensor({8, 8}, rng);
    EXPECT_NEAR(supcon(x, ClassIdBatch(ids), 0.2), testing::oracle_supcon(x, ids, 0.2), 1e-10);
  }
}

TEST(SupCon, Errors) {
  EXPECT_THROW(supcon(Tensor::matrix({{1}}), ClassIdBatch({0}), 0.0), ValidationError);
  EXPECT_THROW(supcon(Tensor::matrix({{1}}), ClassIdBatch({0, 1}), 0.2), ShapeError);
  EXPECT_THROW(ClassIdBatch({-1}), ValidationError);
}

TEST(SoftCon, ZeroLogitsGiveLogTwoPerEntry) {
  Rng rng(31);
  const Tensor y = random_tensor({2, 2}, rng, 0.0, 1.0);
  EXPECT_NEAR(softcon(Tensor({2, 2}, 0.0), y), 4.0 * std::log(2.0), 1e-14);
}

TEST(SoftCon, ScalarCases) {
  EXPECT_NEAR(softcon(Tensor::matrix({{2}}), Tensor::matrix({{1}})), kBceLogit2Target1, 1e-15);
  EXPECT_NEAR(softcon(Tensor::matrix({{0}}), Tensor::matrix({{0.5}})), std::log(2.0), 1e-15);
}

TEST(SoftCon, MatchesOracle) {
  Rng rng(32);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor({6, 6}, rng);
    const Tensor y = random_tensor({6, 6}, rng, 0.0, 1.0);
    EXPECT_NEAR(softcon(x, y), testing::oracle_softcon(x, y), 1e-11);
  }
}

TEST(SoftCon, Errors) {
  EXPECT_THROW(softcon(Tensor::matrix({{0}}), Tensor::matrix({{1.5}})), ValidationError);
  EXPECT_THROW(softcon(Tensor::matrix({{0}}), Tensor::matrix({{-0.1}})), ValidationError);
  EXPECT_THROW(softcon(Tensor({2, 2}), Tensor({3, 3})), ShapeError);
}

TEST(SoftCon, GradientIsSigmoidMinusTarget) {
  Rng rng(33);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = random_tensor({5, 5}, rng, -1, 1);
    const Tensor y = random_tensor({5, 5}, rng, 0, 1);
    ComputeGraph g;
    g.set_output(softcon(g, g.input("X"), y));
    g.forward({{"X", x}});
    const Tensor grad = g.backward().at("X");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double closed = testing::oracle_sigmoid(x[i]) - y[i];
      EXPECT_NEAR(grad[i], closed, 1e-15);
      const double numeric =
          testing::five_point_derivative([&](const Tensor& xx) { return softcon(xx, y); }, x, i);
      EXPECT_NEAR(numeric, closed, 1e-10);
    }
  }
}

TEST(Combined, ZeroWeightIsContrastOnly) {
  Rng rng(41);
  const Tensor xc = random_tensor({4, 4}, rng), xs = random_tensor({4, 4}, rng);
  const Tensor y = random_tensor({4, 4}, rng, 0, 1);
  LossConfig cfg;
  cfg.weight = 0.0;
  const LossBreakdown b = combined(xc, xs, y, cfg);
  EXPECT_EQ(b.total, info_nce(xc, cfg.temperature));
  EXPECT_EQ(b.contrast, b.total);
}

TEST(Combined, DefaultWeight) { EXPECT_EQ(LossConfig{}.weight, 0.1); }

TEST(Combined, ScalarSum) {
  LossConfig cfg;
  cfg.weight = 0.1;
  const LossBreakdown b = combined(Tensor::matrix({{0.3}}), Tensor::matrix({{2}}), Tensor::matrix({{1}}), cfg);
  EXPECT_NEAR(b.total, 0.012692801104297262, 1e-16);
  EXPECT_EQ(b.contrast, 0.0);
  EXPECT_NEAR(b.soft, kBceLogit2Target1, 1e-15);
}

TEST(Combined, SymmetrizedEqualsPlainOnSymmetricInputs) {
  Rng rng(42);
  const Tensor a = random_tensor({5, 5}, rng);
  Tensor x = a;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) x.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
  const Tensor y = Tensor({5, 5}, 0.25);
  LossConfig plain, sym;
  sym.symmetrize = true;
  EXPECT_NEAR(combined(x, x, y, plain).total, combined(x, x, y, sym).total, 1e-12);
  // On asymmetric input it averages the two view orders.
  const double expected = 0.5 * (info_nce(a, 0.2) + info_nce(transposed(a), 0.2));
  EXPECT_NEAR(combined(a, a, y, sym).contrast, expected, 1e-12);
}

TEST(Combined, RejectsBadConfig) {
  LossConfig cfg;
  cfg.temperature = 0.0;
  EXPECT_THROW(combined(Tensor::matrix({{0}}), Tensor::matrix({{0}}), Tensor::matrix({{0}}), cfg), ValidationError);
  cfg = LossConfig{};
  cfg.weight = -1.0;
  EXPECT_THROW(combined(Tensor::matrix({{0}}), Tensor::matrix({{0}}), Tensor::matrix({{0}}), cfg), ValidationError);
}

// Applying one permutation to both views, class ids and Y leaves every loss unchanged.
TEST(Properties, PermutationEquivariance) {
  Rng rng(51);
  const std::size_t n = 7, d = 5;
  for (int t = 0; t < 50; ++t) {
    const Tensor a = random_unit_rows(n, d, rng), b = random_unit_rows(n, d, rng);
    const Tensor y = random_tensor({n, n}, rng, 0, 1);
    std::vector<int> ids(n);
    for (int& id : ids) id = static_cast<int>(rng.index(3));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor pa({n, d}), pb({n, d}), py({n, n});
    std::vector<int> pids(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        pa.at(i, k) = a.at(perm[i], k);
        pb.at(i, k) = b.at(perm[i], k);
      }
      for (std::size_t j = 0; j < n; ++j) py.at(i, j) = y.at(perm[i], perm[j]);
      pids[i] = ids[perm[i]];
    }
    const Tensor x = similarity_matrix(EmbeddingBatch(a), EmbeddingBatch(b));
    const Tensor px = similarity_matrix(EmbeddingBatch(pa), EmbeddingBatch(pb));
    EXPECT_NEAR(info_nce(x, 0.2), info_nce(px, 0.2), 1e-12);
    EXPECT_NEAR(supcon(x, ClassIdBatch(ids), 0.2), supcon(px, ClassIdBatch(pids), 0.2), 1e-12);
    EXPECT_NEAR(softcon(x, y), softcon(px, py), 1e-12);
    EXPECT_NEAR(combined(x, x, y, {}).total, combined(px, px, py, {}).total, 1e-12);
  }
}

TEST(Properties, LossesAreNonNegative) {
  Rng rng(52);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor({6, 6}, rng);
    const Tensor y = random_tensor({6, 6}, rng, 0, 1);
    std::vector<int> ids(6);
    for (int& id : ids) id = static_cast<int>(rng.index(2));
    EXPECT_GE(info_nce(x, 0.2), 0.0);
    EXPECT_GE(supcon(x, ClassIdBatch(ids), 0.2), 0.0);
    EXPECT_GE(softcon(x, y), 0.0);
  }
}

TEST(Properties, GradCheckThroughEmbeddings) {
  Rng rng(53);
  const std::size_t n = 6, d = 8;
  for (int t = 0; t < 10; ++t) {
    std::vector<int> ids(n);
    for (int& id : ids) id = static_cast<int>(rng.index(3));
    const Tensor y = random_tensor({n, n}, rng, 0, 1);
    ComputeGraph g;
    const NodeId xc = similarity_matrix(g, g.normalize_rows(g.input("zc")), g.normalize_rows(g.input("kc")));
    const NodeId xs = similarity_matrix(g, g.normalize_rows(g.input("zs")), g.normalize_rows(g.input("ks")));
    LossConfig cfg;
    cfg.symmetrize = t % 2 == 1;
    const NodeId total = g.add(combined(g, xc, xs, y, cfg).total, supcon(g, xs, ClassIdBatch(ids), 0.2));
    g.set_output(total);
    const Bindings in{{"zc", random_tensor({n, d}, rng)}, {"kc", random_tensor({n, d}, rng)},
                      {"zs", random_tensor({n, d}, rng)}, {"ks", random_tensor({n, d}, rng)}};
    EXPECT_LE(grad_check(g, in, 1e-5), 1e-6);
  }
}

TEST(Objective, NamesRoundTrip) {
  for (Objective o : {Objective::kContrast, Objective::kSoftCon, Objective::kContrastSupCon, Objective::kContrastSoftCon}) {
    EXPECT_EQ(parse_objective(objective_name(o)), o);
  }
  EXPECT_THROW(parse_objective("bogus"), ValidationError);
}

}  // namespace
}  // namespace softcon
