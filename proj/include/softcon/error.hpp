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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace softcon {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ZeroNormError : public ValidationError {
 public:
  ZeroNormError(const std::string& what, std::size_t row)
      : ValidationError(what + ": row " + std::to_string(row) + " has zero L2 norm"),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A NaN or Inf appeared in a forward value or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API called out of order, e.g. backward before forward.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written (CLI exit code 2).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset where decoding stopped.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersionError : public ParseError {
 public:
  UnsupportedVersionError(unsigned version, std::size_t offset)
      : ParseError("unsupported format version " + std::to_string(version), offset) {}
};

}  // namespace softcon
