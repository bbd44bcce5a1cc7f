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

// Finite-difference checks of every loss on random embedding batches.

#include <array>
#include <string>
#include <vector>

#include "softcon/graph.hpp"
#include "softcon/labelsim.hpp"
#include "softcon/losses.hpp"
#include "softcon/rng.hpp"

namespace softcon {

struct GradSuiteConfig {
  std::size_t instances = 100;
  std::size_t batch = 8;
  std::size_t dim = 16;
  double epsilon = 1e-5;
  std::uint64_t seed = 0;
};

struct GradSuiteResult {
  std::string loss;
  double max_error = 0.0;
  std::size_t instances = 0;
};

inline constexpr std::array<std::string_view, 4> kGradSuiteLosses = {"info_nce", "supcon", "softcon", "combined"};

/// Each instance draws fresh inputs z, k (and a second pair for the soft head),
/// feeds cos(normalize(z), normalize(k)) to the loss and records grad_check's
/// worst relative error.
inline std::vector<GradSuiteResult> run_grad_suite(const GradSuiteConfig& cfg) {
  if (cfg.instances == 0 || cfg.batch < 2 || cfg.dim == 0) throw ValidationError("gradcheck needs instances, batch >= 2, dim >= 1");
  std::vector<GradSuiteResult> out;
  const std::size_t n = cfg.batch, d = cfg.dim;
  for (std::size_t which = 0; which < kGradSuiteLosses.size(); ++which) {
    GradSuiteResult r{std::string(kGradSuiteLosses[which]), 0.0, cfg.instances};
    Rng rng(derive_seed({cfg.seed, which}));
    auto draw = [&] {
      Tensor t({n, d});
      for (double& v : t.values()) v = rng.normal();
      return t;
    };
    for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
      std::vector<int> ids(n);
      for (int& id : ids) id = static_cast<int>(rng.index(3));
      std::vector<MultiHot> labels;
      for (std::size_t i = 0; i < n; ++i) labels.push_back(MultiHot::from_mask(static_cast<std::uint32_t>(1 + rng.index(511)), 9));
      const Tensor y = label_similarity(labels, labels);

      ComputeGraph g;
      const NodeId xc = similarity_matrix(g, g.normalize_rows(g.input("zc")), g.normalize_rows(g.input("kc")));
      Bindings in{{"zc", draw()}, {"kc", draw()}};
      NodeId loss = 0;
      switch (which) {
        case 0: loss = info_nce(g, xc, n, 0.2); break;
        case 1: loss = supcon(g, xc, ClassIdBatch(ids), 0.2); break;
        case 2: loss = softcon(g, xc, y); break;
        default: {
          const NodeId xs = similarity_matrix(g, g.normalize_rows(g.input("zs")), g.normalize_rows(g.input("ks")));
          in.emplace("zs", draw());
          in.emplace("ks", draw());
          loss = combined(g, xc, xs, y, LossConfig{}).total;
        }
      }
      g.set_output(loss);
      r.max_error = std::max(r.max_error, grad_check(g, in, cfg.epsilon));
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace softcon
