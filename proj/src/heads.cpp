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

#include "calens/heads.hpp"

#include <atomic>
#include <exception>
#include <optional>
#include <thread>

#include <fmt/format.h>

#include "binary_io.hpp"

namespace calens {

void HeadTrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw ConfigError("head learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("head momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("head weight decay must be non-negative");
  if (batch_size < 1) throw ConfigError("head batch size must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (plateau_patience < 1 || early_stop_patience < 1) throw ConfigError("patience values must be >= 1");
  if (!(min_lr >= 0.0)) throw ConfigError("min_lr must be non-negative");
}

LinearHead init_head(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  if (dim < 1 || classes < 1) throw ConfigError("head needs D >= 1 and C >= 1");
  RngStream rng(seed);
  LinearHead head;
  head.layer = uniform_layer(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim), rng, false);
  head.seed = seed;
  return head;
}

LinearHead train_head(const FeatureDataset& train, const FeatureDataset& val, const HeadTrainConfig& cfg) {
  cfg.validate();
  if (train.dim() != val.dim() || train.classes() != val.classes()) {
    throw DimensionError(fmt::format("train set is {}-dim/{} classes but validation set is {}-dim/{} classes",
                                     train.dim(), train.classes(), val.dim(), val.classes()));
  }
  RngStream rng(cfg.seed);
  LinearHead head;
  head.seed = cfg.seed;
  head.layer = uniform_layer(static_cast<Eigen::Index>(train.classes()), static_cast<Eigen::Index>(train.dim()),
                             rng, false);

  FitOptions options;
  options.learning_rate = cfg.initial_lr;
  options.momentum = cfg.momentum;
  options.weight_decay = cfg.weight_decay;
  options.batch_size = cfg.batch_size;
  options.max_epochs = cfg.max_epochs;
  options.plateau_factor = cfg.plateau_factor;
  options.plateau_patience = cfg.plateau_patience;
  options.min_lr = cfg.min_lr;
  options.early_stop_patience = cfg.early_stop_patience;

  FitResult fitted = fit(
      {head.layer}, train.features(), train.labels(), val.features(), val.labels(), options, rng,
      [](const Parameters& p, const Matrix& x, const Labels& y, RngStream&) {
        return linear_loss_gradient(x, p[0], y);
      },
      [](const Parameters& p, const Matrix& x) { return linear_forward(x, p[0]); });
  head.layer = std::move(fitted.best[0]);
  head.history = std::move(fitted.history);
  return head;
}

Matrix head_predict(const LinearHead& head, const Eigen::Ref<const Matrix>& features) {
  return linear_forward(features, head.layer);
}

std::vector<LinearHead> train_head_family(const FeatureDataset& train, const FeatureDataset& val,
                                          std::size_t m, std::uint64_t base_seed, HeadTrainConfig cfg,
                                          std::size_t jobs) {
  if (m < 1) throw ConfigError("head family needs m >= 1");
  cfg.validate();
  std::vector<std::optional<LinearHead>> slots(m);
  std::vector<std::exception_ptr> failures(m);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < m; i = next.fetch_add(1)) {
      try {
        HeadTrainConfig own = cfg;
        own.seed = base_seed + i;
        slots[i] = train_head(train, val, own);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, m);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < m; ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const TrainingError& e) {
      throw TrainingError(fmt::format("head {}: {}", i, e.what()), e.epoch());
    } catch (const Error& e) {
      throw Error(e.category(), fmt::format("head {}: {}", i, e.what()));
    }
  }
  std::vector<LinearHead> heads;
  heads.reserve(m);
  for (auto& slot : slots) heads.push_back(std::move(*slot));
  return heads;
}

void save_head(const LinearHead& head, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.magic("HDW1");
  out.u32(static_cast<std::uint32_t>(head.input_dim()));
  out.u32(static_cast<std::uint32_t>(head.classes()));
  out.u64(head.seed);
  const Matrix& w = head.layer.weight;
  for (Eigen::Index i = 0; i < w.size(); ++i) out.f32(static_cast<float>(w.data()[i]));
  for (Eigen::Index c = 0; c < head.layer.bias.size(); ++c) out.f32(static_cast<float>(head.layer.bias[c]));
  out.write_file(path);
}

LinearHead load_head(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  in.expect_magic("HDW1");
  const std::uint32_t d = in.u32();
  const std::uint32_t c = in.u32();
  if (d == 0 || c == 0) throw FormatError("head dimensions must be positive", in.offset());
  LinearHead head;
  head.seed = in.u64();
  in.need((static_cast<std::size_t>(c) * d + c) * 4, "head parameters");
  head.layer = DenseLayer::zeros(c, d);
  for (Eigen::Index i = 0; i < head.layer.weight.size(); ++i) {
    head.layer.weight.data()[i] = static_cast<double>(in.f32());
  }
  for (Eigen::Index i = 0; i < head.layer.bias.size(); ++i) head.layer.bias[i] = static_cast<double>(in.f32());
  in.expect_end();
  if (!head.layer.weight.allFinite() || !head.layer.bias.allFinite()) {
    throw FormatError("head parameters contain non-finite values", 20);
  }
  return head;
}

}  // namespace calens
