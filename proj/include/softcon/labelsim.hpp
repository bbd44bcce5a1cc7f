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

// Scene-level multi-hot labels from pixel class maps, and the cosine
// similarity between label sets that serves as the soft contrastive target.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softcon/error.hpp"
#include "softcon/tensor.hpp"

namespace softcon {

inline constexpr int kDefaultNumClasses = 9;
inline constexpr double kDefaultMinFraction = 0.01;

/// H x W map of per-pixel class ids.
class PixelMap {
 public:
  PixelMap(std::size_t height, std::size_t width, std::vector<std::uint8_t> classes)
      : height_(height), width_(width), classes_(std::move(classes)) {
    if (height_ == 0 || width_ == 0) throw ValidationError("pixel map must be nonempty");
    if (classes_.size() != height_ * width_) throw ShapeError("pixel map data does not match H x W");
  }

  PixelMap(std::size_t height, std::size_t width, std::uint8_t fill)
      : PixelMap(height, width, std::vector<std::uint8_t>(height * width, fill)) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return classes_.size(); }
  std::span<const std::uint8_t> classes() const noexcept { return classes_; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return classes_[r * width_ + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return classes_[r * width_ + c]; }

  friend bool operator==(const PixelMap&, const PixelMap&) = default;

 private:
  std::size_t height_, width_;
  std::vector<std::uint8_t> classes_;
};

/// C-dimensional presence vector.
class MultiHot {
 public:
  explicit MultiHot(std::size_t num_classes) : bits_(num_classes, 0) {}

  static MultiHot from_mask(std::uint32_t mask, std::size_t num_classes) {
    MultiHot m(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) m.bits_[c] = (mask >> c) & 1u;
    return m;
  }

  static MultiHot from_classes(std::initializer_list<std::size_t> classes, std::size_t num_classes) {
    MultiHot m(num_classes);
    for (auto c : classes) m.set(c);
    return m;
  }

  std::size_t num_classes() const noexcept { return bits_.size(); }
  bool test(std::size_t c) const { return bits_.at(c) != 0; }
  void set(std::size_t c, bool on = true) { bits_.at(c) = on ? 1 : 0; }
  std::size_t count() const noexcept { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }
  bool empty() const noexcept { return count() == 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  std::uint32_t mask() const noexcept {
    std::uint32_t m = 0;
    for (std::size_t c = 0; c < bits_.size() && c < 32; ++c) m |= static_cast<std::uint32_t>(bits_[c]) << c;
    return m;
  }

  friend bool operator==(const MultiHot&, const MultiHot&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Nonnegative unit-L2 label vector.
class NormalizedLabel {
 public:
  std::span<const double> values() const noexcept { return values_; }
  std::size_t num_classes() const noexcept { return values_.size(); }

  bool same_support(const NormalizedLabel& o) const noexcept {
    if (o.values_.size() != values_.size()) return false;
    for (std::size_t c = 0; c < values_.size(); ++c) {
      if ((values_[c] > 0.0) != (o.values_[c] > 0.0)) return false;
    }
    return true;
  }

 private:
  friend NormalizedLabel normalize_label(const MultiHot& m);
  std::vector<double> values_;
};

/// Per-class pixel counts of a map.
inline std::vector<std::size_t> class_histogram(const PixelMap& map, int num_classes) {
  if (num_classes <= 0) throw ValidationError("class count must be positive");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::uint8_t id : map.classes()) {
    if (id >= num_classes) {
      throw ValidationError("pixel class id " + std::to_string(id) + " >= class count " +
                            std::to_string(num_classes));
    }
    ++counts[id];
  }
  return counts;
}

/// Class covering the most pixels; ties go to the lowest id.
inline int dominant_class(const PixelMap& map, int num_classes) {
  const auto counts = class_histogram(map, num_classes);
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

/// Sets bit c when class c covers more than min_fraction of the pixels. If the
/// threshold removes every class, the dominant class is kept.
inline MultiHot aggregate_scene_labels(const PixelMap& map, int num_classes,
                                       double min_fraction = kDefaultMinFraction) {
  if (num_classes <= 0) throw ValidationError("class count must be positive");
  if (!(min_fraction >= 0.0 && min_fraction < 1.0)) throw ValidationError("min_fraction must lie in [0,1)");
  const auto counts = class_histogram(map, num_classes);
  const double total = static_cast<double>(map.size());
  MultiHot out(static_cast<std::size_t>(num_classes));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (static_cast<double>(counts[c]) / total > min_fraction) out.set(c);
  }
  if (out.empty()) out.set(static_cast<std::size_t>(dominant_class(map, num_classes)));
  return out;
}

inline NormalizedLabel normalize_label(const MultiHot& m) {
  const std::size_t k = m.count();
  if (k == 0) throw ValidationError("cannot normalize an empty multi-hot label");
  const double v = 1.0 / std::sqrt(static_cast<double>(k));
  NormalizedLabel out;
  out.values_.assign(m.num_classes(), 0.0);
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    if (m.test(c)) out.values_[c] = v;
  }
  return out;
}

/// Y_ij = a_i . b_j. Identical label sets yield exactly 1 and the result is
/// clipped to [0,1], so rounding in the normalized entries cannot leak out.
inline Tensor label_similarity(std::span<const NormalizedLabel> a, std::span<const NormalizedLabel> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("label_similarity: batch counts differ or are empty");
  const std::size_t dim = a.front().num_classes();
  for (const auto& l : a) {
    if (l.num_classes() != dim) throw ShapeError("label_similarity: class dimensions differ");
  }
  for (const auto& l : b) {
    if (l.num_classes() != dim) throw ShapeError("label_similarity: class dimensions differ");
  }
  Tensor y({a.size(), b.size()});
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      y.at(i, j) = a[i].same_support(b[j]) ? 1.0 : std::clamp(dot(a[i].values(), b[j].values()), 0.0, 1.0);
    }
  }
  return y;
}

inline Tensor label_similarity(std::span<const MultiHot> a, std::span<const MultiHot> b) {
  std::vector<NormalizedLabel> na, nb;
  na.reserve(a.size());
  nb.reserve(b.size());
  for (const auto& m : a) na.push_back(normalize_label(m));
  for (const auto& m : b) nb.push_back(normalize_label(m));
  return label_similarity(std::span<const NormalizedLabel>(na), std::span<const NormalizedLabel>(nb));
}

}  // namespace softcon
