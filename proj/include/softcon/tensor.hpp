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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "softcon/error.hpp"

namespace softcon {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

class Tensor;

/// Named tensors, iterated in name order.
using ParamSet = std::map<std::string, Tensor>;

/// Dense row-major tensor of doubles. A rank-0 tensor holds one scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape dims, double fill = 0.0) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(shape_size(dims_), fill);
  }

  Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(dims_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + shape_string(dims_));
    }
  }

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  /// Builds a rank-2 tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }

  /// Extent of the last axis (1 for scalars).
  std::size_t cols() const noexcept { return dims_.empty() ? 1 : dims_.back(); }
  /// Product of all axes but the last.
  std::size_t rows() const noexcept { return cols() ? size() / cols() : 0; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor with dims " + shape_string(dims_));
    return data_[0];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape dims) const {
    if (shape_size(dims) != size()) {
      throw ShapeError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
    }
    return Tensor(std::move(dims), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (auto d : dims_) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(dims_));
    }
  }

  Shape dims_;
  std::vector<double> data_;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Divides every row of a rank-2 tensor by its L2 norm.
inline Tensor row_normalize(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("row_normalize expects rank 2, got " + shape_string(m.dims()));
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (n == 0.0) throw ZeroNormError("row_normalize", r);
    for (double& v : out.row(r)) v /= n;
  }
  return out;
}

/// A * B^T for rank-2 operands with equal column counts.
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: incompatible " + shape_string(a.dims()) + " and " +
                     shape_string(b.dims()));
  }
  Tensor out({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out.at(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

inline Tensor transposed(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transposed expects rank 2");
  Tensor out({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(j, i) = m.at(i, j);
  }
  return out;
}

}  // namespace softcon
