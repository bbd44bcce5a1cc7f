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

// In-memory scenes: several seasonal images of one location sharing a pixel
// map and a multi-hot label. Images are kept as f32, the on-disk precision.

#include <cstdint>
#include <string_view>
#include <vector>

#include "softcon/error.hpp"
#include "softcon/labelsim.hpp"
#include "softcon/rng.hpp"
#include "softcon/tensor.hpp"

namespace softcon {

enum class Split { kTrain, kTest };

inline std::string_view split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

/// 80/20 split keyed on the scene id alone.
inline Split split_of(std::uint32_t id) { return mix64(id) % 5 == 0 ? Split::kTest : Split::kTrain; }

struct Scene {
  std::uint32_t id = 0;
  std::size_t channels = 0;
  std::size_t size = 0;
  std::vector<std::vector<float>> seasons;  // each C*H*W, channel-major
  PixelMap map{1, 1, std::uint8_t{0}};
  MultiHot label{1};

  std::size_t num_seasons() const noexcept { return seasons.size(); }

  Tensor season(std::size_t s) const {
    const auto& src = seasons.at(s);
    Tensor t({channels, size, size});
    for (std::size_t i = 0; i < src.size(); ++i) t[i] = src[i];
    return t;
  }
};

struct Dataset {
  std::size_t channels = 0;
  std::size_t size = 0;
  std::size_t num_classes = 0;
  std::vector<Scene> scenes;

  std::vector<const Scene*> split(Split s) const {
    std::vector<const Scene*> out;
    for (const auto& sc : scenes) {
      if (split_of(sc.id) == s) out.push_back(&sc);
    }
    return out;
  }
};

}  // namespace softcon
