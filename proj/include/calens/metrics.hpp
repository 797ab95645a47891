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

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "calens/numerics.hpp"

namespace calens {

/// Predicted class, confidence and ground truth for N samples, optionally
/// with the full probability rows the predictions were read from.
struct PredictionSet {
  std::vector<int> predicted_class;
  std::vector<double> confidence;
  Labels labels;
  std::optional<Matrix> probs;

  std::size_t size() const noexcept { return labels.size(); }

  /// Throws on any broken invariant (length mismatch, confidence outside
  /// [0, 1], negative class, probabilities disagreeing with max/argmax).
  void validate() const;
};

/// Row-wise argmax (lowest index wins ties) and maximum.
PredictionSet predictions_from_probs(const Matrix& probs, const Labels& labels);

/// Bin of `confidence` among `bins` equal-width bins [i/M, (i+1)/M), the
/// last bin closed at 1. The index is exact for the binary value of
/// `confidence`; no rounding of confidence * M can move a sample across an
/// edge.
std::size_t assign_bin(double confidence, std::size_t bins);

struct BinStats {
  std::size_t bin_index = 0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;  // absent for empty bins
  std::optional<double> mean_accuracy;
  double lower_edge = 0.0;
  double upper_edge = 0.0;

  std::optional<double> gap() const {
    if (count == 0) return std::nullopt;
    return std::abs(*mean_accuracy - *mean_confidence);
  }
};

std::vector<BinStats> reliability_bins(const PredictionSet& pred, std::size_t bins);

/// (sum_m |B_m|/N * |acc - conf|^d)^(1/d) over non-empty bins.
double ece(std::span<const BinStats> bins, std::size_t sample_count, double norm_degree = 1.0);

/// Largest |acc - conf| over non-empty bins.
double mce(std::span<const BinStats> bins);

double accuracy(const PredictionSet& pred);

struct CalibrationReport {
  double accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  std::size_t num_bins = 0;
  double norm_degree = 1.0;
  std::vector<BinStats> bins;
  std::size_t sample_count = 0;
};

inline constexpr std::size_t kDefaultBins = 15;

CalibrationReport calibration_report(const PredictionSet& pred, std::size_t bins = kDefaultBins,
                                     double norm_degree = 1.0);

/// Reliability-diagram CSV, one row per bin. Empty bins leave the two
/// statistics columns blank.
void write_reliability_csv(std::ostream& out, std::span<const BinStats> bins);

}  // namespace calens
