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

#include "calens/metrics.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace calens {

void PredictionSet::validate() const {
  const std::size_t n = labels.size();
  if (n == 0) throw EmptyInputError("prediction set is empty");
  if (predicted_class.size() != n || confidence.size() != n) {
    throw DimensionError(fmt::format("prediction set lengths differ: {} predictions, {} confidences, {} labels",
                                     predicted_class.size(), confidence.size(), n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(confidence[i] >= 0.0 && confidence[i] <= 1.0)) {
      throw DomainError(fmt::format("confidence {} at index {} outside [0, 1]", confidence[i], i));
    }
    if (predicted_class[i] < 0) throw LabelError(fmt::format("negative prediction at index {}", i), i);
    if (labels[i] < 0) throw LabelError(fmt::format("negative label at index {}", i), i);
  }
  if (probs) {
    if (static_cast<std::size_t>(probs->rows()) != n) {
      throw DimensionError(fmt::format("{} probability rows for {} samples", probs->rows(), n));
    }
    check_labels(labels, probs->cols());
    check_labels(predicted_class, probs->cols());
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      const double top = probs->row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      if (top != confidence[i] || arg != predicted_class[i]) {
        throw ConsistencyError(fmt::format("sample {} disagrees with its probability row", i));
      }
    }
  }
}

PredictionSet predictions_from_probs(const Matrix& probs, const Labels& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError(fmt::format("{} probability rows but {} labels", probs.rows(), labels.size()));
  }
  PredictionSet pred;
  pred.labels = labels;
  pred.predicted_class.resize(labels.size());
  pred.confidence.resize(labels.size());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index arg = 0;
    // maxCoeff reports the first maximal entry.
    pred.confidence[static_cast<std::size_t>(r)] = probs.row(r).maxCoeff(&arg);
    pred.predicted_class[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  pred.probs = probs;
  pred.validate();
  return pred;
}

std::size_t assign_bin(double confidence, std::size_t bins) {
  if (bins < 1) throw ConfigError("number of bins must be >= 1");
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw DomainError(fmt::format("confidence {} outside [0, 1]", confidence));
  }
  const auto m = static_cast<double>(bins);
  double index = std::floor(confidence * m);
  // fma evaluates confidence * M - k with a single rounding, so its sign is exact.
  if (std::fma(confidence, m, -index) < 0.0) index -= 1.0;
  if (std::fma(confidence, m, -(index + 1.0)) >= 0.0) index += 1.0;
  return std::min(static_cast<std::size_t>(index), bins - 1);
}

std::vector<BinStats> reliability_bins(const PredictionSet& pred, std::size_t bins) {
  pred.validate();
  if (bins < 1) throw ConfigError("number of bins must be >= 1");
  std::vector<double> confidence_sum(bins, 0.0);
  std::vector<std::size_t> correct(bins, 0);
  std::vector<BinStats> out(bins);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t b = assign_bin(pred.confidence[i], bins);
    ++out[b].count;
    confidence_sum[b] += pred.confidence[i];
    if (pred.predicted_class[i] == pred.labels[i]) ++correct[b];
  }
  const auto m = static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    auto& stats = out[b];
    stats.bin_index = b;
    stats.lower_edge = static_cast<double>(b) / m;
    stats.upper_edge = static_cast<double>(b + 1) / m;
    if (stats.count > 0) {
      const auto count = static_cast<double>(stats.count);
      stats.mean_confidence = confidence_sum[b] / count;
      stats.mean_accuracy = static_cast<double>(correct[b]) / count;
    }
  }
  return out;
}

double ece(std::span<const BinStats> bins, std::size_t sample_count, double norm_degree) {
  if (!(norm_degree >= 1.0) || !std::isfinite(norm_degree)) {
    throw ConfigError(fmt::format("norm degree must be a finite value >= 1, got {}", norm_degree));
  }
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total != sample_count) {
    throw ConsistencyError(fmt::format("bins hold {} samples but N = {}", total, sample_count));
  }
  if (sample_count == 0) throw EmptyInputError("ece over zero samples");
  const auto n = static_cast<double>(sample_count);
  double sum = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    const double weight = static_cast<double>(b.count) / n;
    sum += norm_degree == 1.0 ? weight * *b.gap() : weight * std::pow(*b.gap(), norm_degree);
  }
  return norm_degree == 1.0 ? sum : std::pow(sum, 1.0 / norm_degree);
}

double mce(std::span<const BinStats> bins) {
  std::optional<double> worst;
  for (const auto& b : bins) {
    if (auto g = b.gap()) worst = worst ? std::max(*worst, *g) : *g;
  }
  if (!worst) throw EmptyInputError("mce requires at least one non-empty bin");
  return *worst;
}

double accuracy(const PredictionSet& pred) {
  pred.validate();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred.predicted_class[i] == pred.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

CalibrationReport calibration_report(const PredictionSet& pred, std::size_t bins, double norm_degree) {
  CalibrationReport report;
  report.bins = reliability_bins(pred, bins);
  report.sample_count = pred.size();
  report.num_bins = bins;
  report.norm_degree = norm_degree;
  report.accuracy = accuracy(pred);
  report.ece = ece(report.bins, report.sample_count, norm_degree);
  report.mce = mce(report.bins);
  return report;
}

void write_reliability_csv(std::ostream& out, std::span<const BinStats> bins) {
  out << "bin_index,lower,upper,count,mean_confidence,mean_accuracy\n";
  for (const auto& b : bins) {
    fmt::print(out, "{},{},{},{},", b.bin_index, b.lower_edge, b.upper_edge, b.count);
    if (b.count > 0) {
      fmt::print(out, "{},{}\n", *b.mean_confidence, *b.mean_accuracy);
    } else {
      out << ",\n";
    }
  }
}

}  // namespace calens
