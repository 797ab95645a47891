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
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <fmt/format.h>

#include "calens/numerics.hpp"

namespace calens {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
};

using TrainingHistory = std::vector<EpochRecord>;

struct FitOptions {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  double min_lr = 1e-6;
  std::optional<std::size_t> early_stop_patience;
};

struct FitResult {
  Parameters best;
  TrainingHistory history;
};

/// Mini-batch SGD shared by heads and metamodels. Each epoch reshuffles the
/// training rows from `rng`; the validation loss drives the plateau
/// scheduler and (optionally) early stopping; the parameters of the epoch
/// with the lowest validation loss are returned.
///
/// `loss_gradient(params, batch_x, batch_y, rng)` returns a LossGradient in
/// training mode; `eval_logits(params, x)` is the evaluation-mode forward.
template <typename LossGradientFn, typename EvalLogitsFn>
FitResult fit(Parameters params, const Matrix& train_x, const Labels& train_y,
              const Matrix& val_x, const Labels& val_y, const FitOptions& options,
              RngStream& rng, LossGradientFn&& loss_gradient, EvalLogitsFn&& eval_logits) {
  if (train_x.rows() == 0 || val_x.rows() == 0) throw DataError("fit: empty training or validation set");
  if (static_cast<std::size_t>(train_x.rows()) != train_y.size() ||
      static_cast<std::size_t>(val_x.rows()) != val_y.size()) {
    throw DimensionError("fit: feature rows and label counts differ");
  }
  if (options.batch_size < 1) throw ConfigError("batch size must be >= 1");

  FitResult result{params, {}};
  if (options.max_epochs == 0) return result;

  SgdState sgd(options.learning_rate, options.momentum, options.weight_decay);
  PlateauScheduler plateau(options.learning_rate, options.plateau_factor,
                           options.plateau_patience, options.min_lr);
  std::optional<EarlyStopper> stopper;
  if (options.early_stop_patience) stopper.emplace(*options.early_stop_patience);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  double best_val = std::numeric_limits<double>::infinity();
  const auto total = static_cast<double>(train_x.rows());

  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    rng.shuffle(order);
    const double epoch_lr = sgd.learning_rate;
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Matrix batch_x = train_x(rows, Eigen::all);
      Labels batch_y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) batch_y[i] = train_y[static_cast<std::size_t>(rows[i])];

      LossGradient step = loss_gradient(params, batch_x, batch_y, rng);
      if (!std::isfinite(step.loss)) {
        throw TrainingError(fmt::format("non-finite training loss in epoch {}", epoch), epoch);
      }
      train_loss += step.loss * static_cast<double>(rows.size()) / total;
      sgd_step(params, step.gradient, sgd);
    }

    const double val_loss = cross_entropy(softmax(eval_logits(params, val_x)), val_y);
    if (!std::isfinite(val_loss) || !all_finite(params)) {
      throw TrainingError(fmt::format("non-finite validation loss in epoch {}", epoch), epoch);
    }
    result.history.push_back({epoch, train_loss, val_loss, epoch_lr});
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best = params;
    }
    sgd.learning_rate = plateau.step(val_loss);
    if (stopper && stopper->step(val_loss)) break;
  }
  return result;
}

}  // namespace calens
