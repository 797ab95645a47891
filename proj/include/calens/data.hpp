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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "calens/metrics.hpp"
#include "calens/numerics.hpp"

namespace calens {

/// Frozen backbone features (N x D) with their class labels. Immutable once
/// constructed; the constructor enforces N >= 1 and labels in [0, C).
class FeatureDataset {
 public:
  FeatureDataset(Matrix features, Labels labels, std::size_t classes, std::string name = {});

  const Matrix& features() const noexcept { return features_; }
  const Labels& labels() const noexcept { return labels_; }
  std::size_t classes() const noexcept { return classes_; }
  const std::string& name() const noexcept { return name_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }

  /// Rows at `indices`, in that order.
  FeatureDataset subset(const std::vector<std::size_t>& indices, std::string name) const;

  bool operator==(const FeatureDataset& other) const {
    return classes_ == other.classes_ && labels_ == other.labels_ &&
           features_.rows() == other.features_.rows() && features_.cols() == other.features_.cols() &&
           features_ == other.features_;
  }

 private:
  Matrix features_;
  Labels labels_;
  std::size_t classes_;
  std::string name_;
};

// FDS1: "FDS1", u32 N, u32 D, u32 C, then N x (D f32 features, u32 label).
void save_dataset(const FeatureDataset& dataset, const std::filesystem::path& path);
FeatureDataset load_dataset(const std::filesystem::path& path);

/// Plain-text import: header `f0,...,f{D-1},label`, one sample per row.
/// Class count defaults to max(label) + 1.
FeatureDataset import_csv(const std::filesystem::path& path,
                          std::optional<std::size_t> classes = std::nullopt);

// PRB1: "PRB1", u32 N, u32 C, then N*C f32 row-major.
void save_probabilities(const Matrix& probs, const std::filesystem::path& path);
Matrix load_probabilities(const std::filesystem::path& path);

/// Stratified split: within each class the rows are shuffled with `seed` and
/// round(n_c * val_fraction) of them (at least one, leaving at least one)
/// go to validation. Both halves keep the original row order.
std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& dataset, double val_fraction,
                                                std::uint64_t seed);

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t samples = 4000;
  double cluster_separation = 6.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gaussian clusters: C centers uniformly on the sphere of radius
/// `cluster_separation`, unit-variance samples, labels assigned round-robin,
/// then each label flipped with probability `label_noise` to a uniformly
/// chosen different class. Features are rounded to f32 precision so that a
/// saved dataset reloads bit-identically.
FeatureDataset synth_clusters(const SynthSpec& spec);

struct MiscalSpec {
  std::size_t samples = 10000;
  std::size_t classes = 10;
  double confidence_level = 0.8;
  double true_accuracy = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Every sample predicted at `confidence_level`; the label matches the
/// (uniform) predicted class with probability `true_accuracy`.
PredictionSet synth_miscalibrated_predictions(const MiscalSpec& spec);

/// Probability rows realizing a prediction set: the predicted class holds
/// the confidence, the rest is spread evenly. Requires confidence > 1/C.
Matrix probabilities_for(const PredictionSet& pred, std::size_t classes);

}  // namespace calens
