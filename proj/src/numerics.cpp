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

#include "calens/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <fmt/format.h>

namespace calens {

namespace {

std::string shape(Eigen::Index rows, Eigen::Index cols) {
  return fmt::format("{}x{}", rows, cols);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t RngStream::below(std::size_t n) {
  if (n == 0) throw DomainError("RngStream::below requires n >= 1");
  const auto bound = static_cast<std::uint64_t>(n);
  // Lemire: multiply into 128 bits, reject the biased low fringe.
  unsigned __int128 product = static_cast<unsigned __int128>(next_u64()) * bound;
  auto low = static_cast<std::uint64_t>(product);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      product = static_cast<unsigned __int128>(next_u64()) * bound;
      low = static_cast<std::uint64_t>(product);
    }
  }
  return static_cast<std::size_t>(product >> 64);
}

double RngStream::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_normal_ = true;
  return radius * std::cos(angle);
}

Parameters zeros_like(const Parameters& params) {
  Parameters out;
  out.reserve(params.size());
  for (const auto& layer : params) {
    out.push_back(DenseLayer::zeros(layer.weight.rows(), layer.weight.cols()));
  }
  return out;
}

std::size_t parameter_count(const Parameters& params) {
  std::size_t total = 0;
  for (const auto& layer : params) total += layer.parameter_count();
  return total;
}

bool all_finite(const Parameters& params) {
  for (const auto& layer : params) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

DenseLayer uniform_layer(Eigen::Index out, Eigen::Index in, RngStream& rng, bool init_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  DenseLayer layer = DenseLayer::zeros(out, in);
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = rng.uniform(-bound, bound);
  }
  if (init_bias) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-bound, bound);
  }
  return layer;
}

Matrix linear_forward(const Eigen::Ref<const Matrix>& input, const Matrix& weights,
                      const Vector& bias) {
  if (input.cols() != weights.cols() || weights.rows() != bias.size()) {
    throw DimensionError(fmt::format("linear_forward: input {} incompatible with weights {} / bias {}",
                                     shape(input.rows(), input.cols()),
                                     shape(weights.rows(), weights.cols()), bias.size()));
  }
  Matrix out = input.lazyProduct(weights.transpose());
  out.rowwise() += bias.transpose();
  return out;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, RngStream& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError(fmt::format("dropout probability must lie in [0, 1), got {}", p));
  }
  Matrix mask = Matrix::Ones(rows, cols);
  if (p == 0.0) return mask;
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? 0.0 : keep;
  }
  return mask;
}

void check_labels(const Labels& labels, Eigen::Index classes) {
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= classes) {
      throw LabelError(fmt::format("label {} at index {} outside [0, {})", labels[n], n, classes), n);
    }
  }
}

double cross_entropy(const Matrix& probs, const Labels& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError(fmt::format("cross_entropy: {} probability rows but {} labels",
                                     probs.rows(), labels.size()));
  }
  check_labels(labels, probs.cols());
  if (labels.empty()) throw EmptyInputError("cross_entropy on an empty batch");
  double total = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    total -= std::log(std::max(probs(static_cast<Eigen::Index>(n), labels[n]), kProbabilityFloor));
  }
  return total / static_cast<double>(labels.size());
}

Matrix softmax_cross_entropy_grad(const Matrix& probs, const Labels& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError(fmt::format("softmax_cross_entropy_grad: {} rows but {} labels",
                                     probs.rows(), labels.size()));
  }
  check_labels(labels, probs.cols());
  Matrix grad = probs;
  for (std::size_t n = 0; n < labels.size(); ++n) grad(static_cast<Eigen::Index>(n), labels[n]) -= 1.0;
  grad /= static_cast<double>(labels.size());
  return grad;
}

DenseLayer backward_linear(const Eigen::Ref<const Matrix>& input, const Matrix& output_grad) {
  if (input.rows() != output_grad.rows()) {
    throw DimensionError(fmt::format("backward_linear: input {} vs output gradient {}",
                                     shape(input.rows(), input.cols()),
                                     shape(output_grad.rows(), output_grad.cols())));
  }
  return {output_grad.transpose() * input, output_grad.colwise().sum().transpose()};
}

MlpForward mlp_forward(const Eigen::Ref<const Matrix>& input, const DenseLayer& first,
                       const DenseLayer& second, Matrix mask) {
  MlpForward fwd;
  fwd.pre_activation = linear_forward(input, first);
  fwd.hidden = relu(fwd.pre_activation);
  if (mask.size() != 0) {
    if (mask.rows() != fwd.hidden.rows() || mask.cols() != fwd.hidden.cols()) {
      throw DimensionError(fmt::format("dropout mask {} does not match hidden layer {}",
                                       shape(mask.rows(), mask.cols()),
                                       shape(fwd.hidden.rows(), fwd.hidden.cols())));
    }
    fwd.hidden.array() *= mask.array();
  }
  fwd.mask = std::move(mask);
  fwd.logits = linear_forward(fwd.hidden, second);
  return fwd;
}

Parameters backward_mlp(const Eigen::Ref<const Matrix>& input, const MlpForward& forward,
                        const DenseLayer& second, const Matrix& logit_grad) {
  DenseLayer second_grad = backward_linear(forward.hidden, logit_grad);
  Matrix hidden_grad = logit_grad * second.weight;
  if (forward.mask.size() != 0) hidden_grad.array() *= forward.mask.array();
  hidden_grad.array() *= (forward.pre_activation.array() > 0.0).cast<double>();
  DenseLayer first_grad = backward_linear(input, hidden_grad);
  return {std::move(first_grad), std::move(second_grad)};
}

LossGradient linear_loss_gradient(const Eigen::Ref<const Matrix>& input, const DenseLayer& layer,
                                  const Labels& labels) {
  const Matrix probs = softmax(linear_forward(input, layer));
  LossGradient out;
  out.loss = cross_entropy(probs, labels);
  out.gradient.push_back(backward_linear(input, softmax_cross_entropy_grad(probs, labels)));
  return out;
}

LossGradient mlp_loss_gradient(const Eigen::Ref<const Matrix>& input, const DenseLayer& first,
                               const DenseLayer& second, const Labels& labels, Matrix mask) {
  const MlpForward fwd = mlp_forward(input, first, second, std::move(mask));
  const Matrix probs = softmax(fwd.logits);
  LossGradient out;
  out.loss = cross_entropy(probs, labels);
  out.gradient = backward_mlp(input, fwd, second, softmax_cross_entropy_grad(probs, labels));
  return out;
}

SgdState::SgdState(double learning_rate, double momentum, double weight_decay)
    : learning_rate(learning_rate), momentum(momentum), weight_decay(weight_decay) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

void sgd_step(Parameters& params, const Parameters& grads, SgdState& state) {
  if (grads.size() != params.size()) {
    throw DimensionError(fmt::format("sgd_step: {} parameter blocks but {} gradients",
                                     params.size(), grads.size()));
  }
  if (state.velocity.empty()) state.velocity = zeros_like(params);
  if (state.velocity.size() != params.size()) {
    throw DimensionError("sgd_step: velocity buffer does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    auto& v = state.velocity[i];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        g.bias.size() != p.bias.size() || v.weight.rows() != p.weight.rows() ||
        v.weight.cols() != p.weight.cols() || v.bias.size() != p.bias.size()) {
      throw DimensionError(fmt::format("sgd_step: block {} has parameter {} but gradient {}", i,
                                       shape(p.weight.rows(), p.weight.cols()),
                                       shape(g.weight.rows(), g.weight.cols())));
    }
    v.weight = state.momentum * v.weight + (g.weight + state.weight_decay * p.weight);
    v.bias = state.momentum * v.bias + (g.bias + state.weight_decay * p.bias);
    p.weight -= state.learning_rate * v.weight;
    p.bias -= state.learning_rate * v.bias;
  }
}

PlateauScheduler::PlateauScheduler(double learning_rate, double factor, std::size_t patience,
                                   double min_lr)
    : learning_rate_(learning_rate),
      factor_(factor),
      patience_(patience),
      min_lr_(min_lr),
      best_metric_(std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (!(min_lr >= 0.0)) throw ConfigError("min_lr must be non-negative");
}

double PlateauScheduler::step(double metric) {
  if (metric < best_metric_ - kImprovementThreshold) {
    best_metric_ = metric;
    epochs_since_improvement_ = 0;
  } else {
    ++epochs_since_improvement_;
  }
  if (epochs_since_improvement_ > patience_) {
    learning_rate_ = std::min(learning_rate_, std::max(learning_rate_ * factor_, min_lr_));
    epochs_since_improvement_ = 0;
  }
  return learning_rate_;
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_metric_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("early-stopping patience must be >= 1");
}

bool EarlyStopper::step(double metric) {
  if (metric < best_metric_ - kImprovementThreshold) {
    best_metric_ = metric;
    epochs_since_improvement_ = 0;
  } else {
    ++epochs_since_improvement_;
  }
  return epochs_since_improvement_ > patience_;
}

}  // namespace calens
