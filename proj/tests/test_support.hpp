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

// Shared test helpers: random instances and independent reference
// implementations written directly from the loss formulas (plain loops, no
// autodiff graph) so they can check the library's graph-based versions.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "softcon/rng.hpp"
#include "softcon/tensor.hpp"

namespace softcon::testing {

inline Tensor random_tensor(const Shape& dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(dims);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  return row_normalize(random_tensor({n, d}, rng));
}

/// Cosine similarity matrix of two raw batches.
inline Tensor oracle_similarity(const Tensor& a, const Tensor& b) {
  const Tensor na = row_normalize(a), nb = row_normalize(b);
  Tensor x({na.rows(), nb.rows()});
  for (std::size_t i = 0; i < na.rows(); ++i) {
    for (std::size_t j = 0; j < nb.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < na.cols(); ++k) s += na.at(i, k) * nb.at(j, k);
      x.at(i, j) = s;
    }
  }
  return x;
}

/// -sum_i log( exp(X_ii/t) / sum_j exp(X_ij/t) ), evaluated literally.
inline double oracle_info_nce(const Tensor& x, double tau) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) denom += std::exp(x.at(i, j) / tau);
    loss -= std::log(std::exp(x.at(i, i) / tau) / denom);
  }
  return loss;
}

inline double oracle_supcon(const Tensor& x, const std::vector<int>& ids, double tau) {
  double loss = 0.0;
  const std::size_t n = x.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(x.at(i, j) / tau);
    double acc = 0.0;
    int np = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (ids[p] != ids[i]) continue;
      acc += std::log(std::exp(x.at(i, p) / tau) / denom);
      ++np;
    }
    loss -= acc / np;
  }
  return loss;
}

inline double oracle_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline double oracle_softcon(const Tensor& x, const Tensor& y) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = oracle_sigmoid(x[i]);
    loss -= y[i] * std::log(s) + (1.0 - y[i]) * std::log(1.0 - s);
  }
  return loss;
}

/// Average precision by direct precision-at-rank enumeration, no sorting. An
/// item's rank counts strictly higher scores plus equal scores at lower indices.
inline double oracle_average_precision(const std::vector<double>& s, const std::vector<double>& t) {
  const std::size_t n = s.size();
  auto rank = [&](std::size_t i) {
    std::size_t r = 1;
    for (std::size_t j = 0; j < n; ++j) r += s[j] > s[i] || (s[j] == s[i] && j < i);
    return r;
  };
  double sum = 0.0, pos = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] == 0.0) continue;
    pos += 1.0;
    const std::size_t k = rank(i);
    double hits = 0.0;
    for (std::size_t j = 0; j < n; ++j) hits += t[j] != 0.0 && rank(j) <= k;
    sum += hits / static_cast<double>(k);
  }
  return sum / pos;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("softcon_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Five-point central difference of a scalar function of one coordinate;
/// truncation error O(h^4), so h can stay large enough to keep roundoff small.
template <typename F>
double five_point_derivative(F&& f, Tensor x, std::size_t i, double h = 1e-3) {
  const double orig = x[i];
  auto at = [&](double v) {
    x[i] = v;
    return f(x);
  };
  const double d = (-at(orig + 2 * h) + 8 * at(orig + h) - 8 * at(orig - h) + at(orig - 2 * h)) / (12 * h);
  x[i] = orig;
  return d;
}

}  // namespace softcon::testing
