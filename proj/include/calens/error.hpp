// Copyright 2026 The calens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
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

namespace calens {

/// Base class for every error raised by the library. `category()` lets the
/// command-line front end map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { kUsage, kData, kTraining };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Category::kData, what) {}
};

/// A class label lies outside [0, C).
class LabelError : public Error {
 public:
  LabelError(const std::string& what, std::size_t index)
      : Error(Category::kData, what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Invalid hyper-parameter or option value.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::kUsage, what) {}
};

/// A scalar argument lies outside its mathematical domain.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(Category::kData, what) {}
};

/// Aggregates disagree with the data they summarize.
class ConsistencyError : public Error {
 public:
  explicit ConsistencyError(const std::string& what) : Error(Category::kData, what) {}
};

class EmptyInputError : public Error {
 public:
  explicit EmptyInputError(const std::string& what) : Error(Category::kData, what) {}
};

/// Dataset content problems (empty sets, unstratifiable classes, ...).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::kData, what) {}
};

/// Malformed or truncated file. `offset()` is the byte position at which
/// reading failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(Category::kData, what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Missing or unreadable artifact on disk.
class FileError : public Error {
 public:
  explicit FileError(const std::string& what) : Error(Category::kData, what) {}
};

/// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch)
      : Error(Category::kTraining, what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace calens
