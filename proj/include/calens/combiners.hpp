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
#include <string_view>
#include <vector>

#include "calens/metrics.hpp"
#include "calens/numerics.hpp"
#include "calens/training.hpp"

namespace calens {

enum class MetamodelKind : std::uint8_t {
  kSL = 0,    // one dense layer over the m*C concatenated head outputs
  kDL = 1,    // dense -> ReLU -> dropout -> dense, hidden width ceil(m*C/2)
  kDLL = 2,   // as kDL with hidden width m*C
  kSLpC = 3,  // per class c, one m-input unit over the heads' class-c outputs
};

inline constexpr MetamodelKind kAllMetamodelKinds[] = {MetamodelKind::kSL, MetamodelKind::kDL,
                                                        MetamodelKind::kDLL, MetamodelKind::kSLpC};

std::string_view to_string(MetamodelKind kind);
/// Accepts "SL", "DL", "DLL", "SLpC" (case-insensitive); ConfigError otherwise.
MetamodelKind parse_metamodel_kind(std::string_view name);

enum class OutputRepresentation { kProbabilities, kLogits };

/// Per-head N x C outputs on one sample set.
class HeadOutputs {
 public:
  /// Every row must be a probability vector (tolerance 1e-6 on the sum,
  /// wide enough for rows read back from f32 files).
  static HeadOutputs from_probabilities(std::vector<Matrix> per_head);
  static HeadOutputs from_logits(std::vector<Matrix> per_head);

  std::size_t heads() const noexcept { return per_head_.size(); }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(per_head_.front().cols()); }
  std::size_t samples() const noexcept { return static_cast<std::size_t>(per_head_.front().rows()); }
  OutputRepresentation representation() const noexcept { return representation_; }
  const std::vector<Matrix>& per_head() const noexcept { return per_head_; }

  /// N x (m*C), head-major: head 0's C columns, then head 1's, ...
  Matrix concatenated() const;

 private:
  HeadOutputs(std::vector<Matrix> per_head, OutputRepresentation representation);

  std::vector<Matrix> per_head_;
  OutputRepresentation representation_;
};

/// Element-wise mean of the head probabilities.
Matrix average_probabilities(const HeadOutputs& outputs);
PredictionSet combine_average(const HeadOutputs& outputs, const Labels& labels);

/// Majority vote over head argmaxes. Ties go to the class whose voters have
/// the higher mean confidence, then to the lowest class index. The reported
/// confidence is the mean probability all heads assign to the winner.
PredictionSet combine_vote(const HeadOutputs& outputs, const Labels& labels);

std::size_t hidden_width(MetamodelKind kind, std::size_t m, std::size_t classes);
std::size_t param_count(MetamodelKind kind, std::size_t m, std::size_t classes);

struct Metamodel {
  MetamodelKind kind = MetamodelKind::kSL;
  std::size_t heads = 0;
  std::size_t classes = 0;
  std::size_t hidden = 0;  // 0 unless DL/DLL
  double dropout_p = 0.0;  // DL/DLL only
  std::uint64_t seed = 0;
  /// SL: {C x mC}; DL/DLL: {h x mC, C x h}; SLpC: {C x m} where row c holds
  /// the class-c weights and bias[c] its scalar bias.
  Parameters params;
  TrainingHistory history;

  std::size_t parameter_count() const { return calens::parameter_count(params); }
};

/// Uniform initialization in +-1/sqrt(fan_in), biases included.
Metamodel build_metamodel(MetamodelKind kind, std::size_t m, std::size_t classes, std::uint64_t seed,
                          double dropout_p = 0.5);

/// Logits (N x C) on a concatenated N x (m*C) input. Dropout is drawn from
/// `rng` only when `training` is set.
Matrix metamodel_logits(const Metamodel& meta, const Parameters& params, const Matrix& stacked, bool training,
                        RngStream& rng);
Matrix metamodel_forward(const Metamodel& meta, const HeadOutputs& outputs, bool training, RngStream& rng);

/// Mean cross-entropy and its gradient with respect to `params`.
LossGradient metamodel_loss_gradient(const Metamodel& meta, const Parameters& params, const Matrix& stacked,
                                     const Labels& labels, bool training, RngStream& rng);

struct MetaTrainConfig {
  std::size_t epochs = 20;
  double initial_lr = 2e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 128;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 3;
  double min_lr = 1e-6;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Exactly `cfg.epochs` epochs of mini-batch SGD (no early stopping);
/// returns the snapshot with the lowest validation loss. Shuffling and
/// dropout use RngStream(cfg.seed ^ 0x9E3779B97F4A7C15).
Metamodel train_metamodel(Metamodel meta, const HeadOutputs& train_outputs, const Labels& train_labels,
                          const HeadOutputs& val_outputs, const Labels& val_labels, const MetaTrainConfig& cfg);

PredictionSet metamodel_predictions(const Metamodel& meta, const HeadOutputs& outputs, const Labels& labels);

// MMD1: "MMD1", u8 kind, u32 m, u32 C, u32 h, f32 dropout_p, u64 seed, then
// the parameter blocks (weights row-major, then bias; SLpC per class: m
// weights then its bias), all f32.
void save_metamodel(const Metamodel& meta, const std::filesystem::path& path);
Metamodel load_metamodel(const std::filesystem::path& path);

}  // namespace calens
