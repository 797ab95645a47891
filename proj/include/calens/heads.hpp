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
#include <vector>

#include "calens/data.hpp"
#include "calens/numerics.hpp"
#include "calens/training.hpp"

namespace calens {

/// A single fully connected classifier on top of frozen features.
struct LinearHead {
  DenseLayer layer;  // weight C x D, bias C
  std::uint64_t seed = 0;
  TrainingHistory history;

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(layer.weight.cols()); }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(layer.weight.rows()); }
  std::size_t parameter_count() const noexcept { return layer.parameter_count(); }
};

struct HeadTrainConfig {
  double initial_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  std::size_t early_stop_patience = 15;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

constexpr std::size_t head_parameter_count(std::size_t dim, std::size_t classes) {
  return classes * dim + classes;
}

/// Weights uniform in [-1/sqrt(D), 1/sqrt(D)] from RngStream(seed), zero bias.
LinearHead init_head(std::size_t dim, std::size_t classes, std::uint64_t seed);

/// Trains a freshly initialized head (seed = cfg.seed) with mini-batch SGD,
/// plateau scheduling and early stopping on the validation loss. Returns the
/// snapshot with the lowest validation loss; `history` lists every epoch run.
LinearHead train_head(const FeatureDataset& train, const FeatureDataset& val, const HeadTrainConfig& cfg);

/// Logits for `features` (N x D).
Matrix head_predict(const LinearHead& head, const Eigen::Ref<const Matrix>& features);

/// Trains `m` heads, head i with seed `base_seed + i`, on `jobs` worker
/// threads. Results are ordered by head index and do not depend on `jobs`.
std::vector<LinearHead> train_head_family(const FeatureDataset& train, const FeatureDataset& val,
                                          std::size_t m, std::uint64_t base_seed, HeadTrainConfig cfg,
                                          std::size_t jobs = 1);

// HDW1: "HDW1", u32 D, u32 C, u64 seed, C*D f32 weights (row-major), C f32 biases.
void save_head(const LinearHead& head, const std::filesystem::path& path);
LinearHead load_head(const std::filesystem::path& path);

}  // namespace calens
