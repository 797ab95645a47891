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
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "calens/error.hpp"

namespace calens {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major dense matrix; rows are samples throughout the library.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
/// Class indices in [0, C).
using Labels = std::vector<int>;

/// Improvement required before a monitored metric counts as better.
inline constexpr double kImprovementThreshold = 1e-6;
/// Probability floor inside the cross-entropy logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

/// Deterministic random stream backed by std::mt19937_64 (whose output
/// sequence is fixed by the C++ standard). Real-valued draws are derived
/// here rather than through <random> distributions, which are
/// implementation-defined:
///   uniform()  = (next_u64() >> 11) * 2^-53        in [0, 1)
///   below(n)   = Lemire multiply-shift with rejection, unbiased
///   normal()   = Box-Muller, both variates used
/// Sub-streams are independent generators seeded with `seed + index`.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  RngStream substream(std::uint64_t index) const { return RngStream(seed_ + index); }

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher-Yates, back to front.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// One fully connected layer: `weight` is out x in, `bias` has `out` entries.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(weight.size() + bias.size());
  }
  static DenseLayer zeros(Eigen::Index out, Eigen::Index in) {
    return {Matrix::Zero(out, in), Vector::Zero(out)};
  }
  bool operator==(const DenseLayer& other) const {
    return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
           bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
  }
};

using Parameters = std::vector<DenseLayer>;

Parameters zeros_like(const Parameters& params);
std::size_t parameter_count(const Parameters& params);
bool all_finite(const Parameters& params);

/// Uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for the
/// weights; biases are zero unless `init_bias` is set, in which case they
/// share the weight bound.
DenseLayer uniform_layer(Eigen::Index out, Eigen::Index in, RngStream& rng, bool init_bias);

// ---------------------------------------------------------------------------
// Forward primitives.

/// input (N x D) * weights^T (C x D) + bias, computed coefficient-wise so a
/// row of the result does not depend on the other rows in the batch.
Matrix linear_forward(const Eigen::Ref<const Matrix>& input, const Matrix& weights,
                      const Vector& bias);
inline Matrix linear_forward(const Eigen::Ref<const Matrix>& input, const DenseLayer& layer) {
  return linear_forward(input, layer.weight, layer.bias);
}

/// Row-wise softmax with per-row max subtraction.
template <typename Derived>
Matrix softmax(const Eigen::MatrixBase<Derived>& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Derived>
Matrix relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(0.0);
}

/// Inverted-dropout mask: each entry is 0 with probability p, 1/(1-p)
/// otherwise. Raises ConfigError unless 0 <= p < 1.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, RngStream& rng);

/// Mean of -log(max(probs[n][label_n], 1e-12)).
double cross_entropy(const Matrix& probs, const Labels& labels);

void check_labels(const Labels& labels, Eigen::Index classes);

// ---------------------------------------------------------------------------
// Backward primitives (mean softmax cross-entropy).

/// d(loss)/d(logits) = (probs - onehot(labels)) / N.
Matrix softmax_cross_entropy_grad(const Matrix& probs, const Labels& labels);

/// Gradients of a linear layer given d(loss)/d(output).
DenseLayer backward_linear(const Eigen::Ref<const Matrix>& input, const Matrix& output_grad);

/// Values kept from a two-layer forward pass: affine -> ReLU -> mask -> affine.
struct MlpForward {
  Matrix pre_activation;  // N x h
  Matrix hidden;          // relu(pre_activation) scaled by the mask, N x h
  Matrix mask;            // empty in evaluation mode
  Matrix logits;          // N x C
};

MlpForward mlp_forward(const Eigen::Ref<const Matrix>& input, const DenseLayer& first,
                       const DenseLayer& second, Matrix mask = Matrix());

/// Gradients {first, second} of a two-layer network given d(loss)/d(logits).
Parameters backward_mlp(const Eigen::Ref<const Matrix>& input, const MlpForward& forward,
                        const DenseLayer& second, const Matrix& logit_grad);

struct LossGradient {
  double loss = 0.0;
  Parameters gradient;
};

LossGradient linear_loss_gradient(const Eigen::Ref<const Matrix>& input, const DenseLayer& layer,
                                  const Labels& labels);
LossGradient mlp_loss_gradient(const Eigen::Ref<const Matrix>& input, const DenseLayer& first,
                               const DenseLayer& second, const Labels& labels,
                               Matrix mask = Matrix());

// ---------------------------------------------------------------------------
// Optimization.

struct SgdState {
  double learning_rate;
  double momentum;
  double weight_decay;
  Parameters velocity;  // shaped on first step

  SgdState(double learning_rate, double momentum, double weight_decay);
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
void sgd_step(Parameters& params, const Parameters& grads, SgdState& state);

/// Multiplies the learning rate by `factor` once the monitored metric has
/// failed to improve for more than `patience` consecutive epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double learning_rate, double factor, std::size_t patience,
                   double min_lr = 1e-6);

  /// Feeds one epoch's metric and returns the learning rate for the next one.
  double step(double metric);

  double learning_rate() const noexcept { return learning_rate_; }
  double best_metric() const noexcept { return best_metric_; }
  std::size_t epochs_since_improvement() const noexcept { return epochs_since_improvement_; }

 private:
  double learning_rate_;
  double factor_;
  std::size_t patience_;
  double min_lr_;
  double best_metric_;
  std::size_t epochs_since_improvement_ = 0;
};

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  /// Returns true when training should stop.
  bool step(double metric);

  double best_metric() const noexcept { return best_metric_; }
  std::size_t epochs_since_improvement() const noexcept { return epochs_since_improvement_; }

 private:
  std::size_t patience_;
  double best_metric_;
  std::size_t epochs_since_improvement_ = 0;
};

}  // namespace calens
