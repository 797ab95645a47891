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

#include "calens/combiners.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "binary_io.hpp"

namespace calens {

namespace {

constexpr std::uint64_t kTrainStreamMix = 0x9E3779B97F4A7C15ULL;

void check_input(const Metamodel& meta, const Matrix& stacked) {
  if (static_cast<std::size_t>(stacked.cols()) != meta.heads * meta.classes) {
    throw DimensionError(fmt::format("{} metamodel expects {} input columns (m={}, C={}), got {}",
                                     to_string(meta.kind), meta.heads * meta.classes, meta.heads,
                                     meta.classes, stacked.cols()));
  }
}

// logits(n, c) = sum_i W(c, i) * X(n, i*C + c) + b(c)
Matrix per_class_forward(const DenseLayer& layer, const Matrix& stacked, Eigen::Index classes) {
  const Eigen::Index m = layer.weight.cols();
  Matrix logits = Matrix::Zero(stacked.rows(), classes);
  for (Eigen::Index i = 0; i < m; ++i) {
    logits += stacked.middleCols(i * classes, classes) * layer.weight.col(i).asDiagonal();
  }
  logits.rowwise() += layer.bias.transpose();
  return logits;
}

DenseLayer per_class_backward(const Matrix& stacked, const Matrix& logit_grad, Eigen::Index heads) {
  const Eigen::Index classes = logit_grad.cols();
  DenseLayer grad = DenseLayer::zeros(classes, heads);
  for (Eigen::Index i = 0; i < heads; ++i) {
    grad.weight.col(i) = stacked.middleCols(i * classes, classes).cwiseProduct(logit_grad).colwise().sum().transpose();
  }
  grad.bias = logit_grad.colwise().sum().transpose();
  return grad;
}

// Sums in ascending order so the result does not depend on head order.
double canonical_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total;
}

}  // namespace

std::string_view to_string(MetamodelKind kind) {
  switch (kind) {
    case MetamodelKind::kSL: return "SL";
    case MetamodelKind::kDL: return "DL";
    case MetamodelKind::kDLL: return "DLL";
    case MetamodelKind::kSLpC: return "SLpC";
  }
  throw ConfigError("unknown metamodel kind");
}

MetamodelKind parse_metamodel_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "sl") return MetamodelKind::kSL;
  if (lower == "dl") return MetamodelKind::kDL;
  if (lower == "dll") return MetamodelKind::kDLL;
  if (lower == "slpc") return MetamodelKind::kSLpC;
  throw ConfigError(fmt::format("unknown metamodel kind '{}' (expected SL, DL, DLL or SLpC)", name));
}

HeadOutputs::HeadOutputs(std::vector<Matrix> per_head, OutputRepresentation representation)
    : per_head_(std::move(per_head)), representation_(representation) {
  if (per_head_.empty()) throw EmptyInputError("head outputs need at least one head");
  const auto& first = per_head_.front();
  if (first.rows() < 1 || first.cols() < 1) throw EmptyInputError("head outputs are empty");
  for (std::size_t i = 0; i < per_head_.size(); ++i) {
    const auto& out = per_head_[i];
    if (out.rows() != first.rows() || out.cols() != first.cols()) {
      throw DimensionError(fmt::format("head {} outputs are {}x{}, head 0 outputs are {}x{}", i, out.rows(),
                                       out.cols(), first.rows(), first.cols()));
    }
    if (!out.allFinite()) throw DomainError(fmt::format("head {} outputs contain non-finite values", i));
  }
}

HeadOutputs HeadOutputs::from_probabilities(std::vector<Matrix> per_head) {
  HeadOutputs outputs(std::move(per_head), OutputRepresentation::kProbabilities);
  for (std::size_t i = 0; i < outputs.per_head_.size(); ++i) {
    const Matrix& p = outputs.per_head_[i];
    if (p.minCoeff() < 0.0 || p.maxCoeff() > 1.0) {
      throw DomainError(fmt::format("head {} outputs are not probabilities", i));
    }
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (std::abs(p.row(r).sum() - 1.0) > 1e-6) {
        throw DomainError(fmt::format("head {} row {} sums to {}", i, r, p.row(r).sum()));
      }
    }
  }
  return outputs;
}

HeadOutputs HeadOutputs::from_logits(std::vector<Matrix> per_head) {
  return HeadOutputs(std::move(per_head), OutputRepresentation::kLogits);
}

Matrix HeadOutputs::concatenated() const {
  const auto c = static_cast<Eigen::Index>(classes());
  Matrix stacked(static_cast<Eigen::Index>(samples()), static_cast<Eigen::Index>(heads()) * c);
  for (std::size_t i = 0; i < per_head_.size(); ++i) {
    stacked.middleCols(static_cast<Eigen::Index>(i) * c, c) = per_head_[i];
  }
  return stacked;
}

Matrix average_probabilities(const HeadOutputs& outputs) {
  if (outputs.representation() != OutputRepresentation::kProbabilities) {
    throw ConfigError("averaging needs probability outputs");
  }
  const auto m = static_cast<double>(outputs.heads());
  Matrix mean(static_cast<Eigen::Index>(outputs.samples()), static_cast<Eigen::Index>(outputs.classes()));
  std::vector<double> column(outputs.heads());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    for (std::size_t h = 0; h < outputs.heads(); ++h) column[h] = outputs.per_head()[h].data()[i];
    mean.data()[i] = canonical_sum(column) / m;
  }
  return mean;
}

PredictionSet combine_average(const HeadOutputs& outputs, const Labels& labels) {
  return predictions_from_probs(average_probabilities(outputs), labels);
}

PredictionSet combine_vote(const HeadOutputs& outputs, const Labels& labels) {
  if (outputs.representation() != OutputRepresentation::kProbabilities) {
    throw ConfigError("voting needs probability outputs");
  }
  if (labels.size() != outputs.samples()) {
    throw DimensionError(fmt::format("{} labels for {} samples", labels.size(), outputs.samples()));
  }
  const std::size_t c = outputs.classes();
  const std::size_t m = outputs.heads();
  PredictionSet pred;
  pred.labels = labels;
  pred.predicted_class.resize(labels.size());
  pred.confidence.resize(labels.size());
  std::vector<std::size_t> votes(c);
  std::vector<std::vector<double>> voter_scores(c);
  std::vector<double> voter_confidence(c);
  std::vector<double> winner_probs(m);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    std::fill(votes.begin(), votes.end(), 0);
    for (auto& scores : voter_scores) scores.clear();
    for (const Matrix& p : outputs.per_head()) {
      Eigen::Index arg = 0;
      const double top = p.row(row).maxCoeff(&arg);
      ++votes[static_cast<std::size_t>(arg)];
      voter_scores[static_cast<std::size_t>(arg)].push_back(top);
    }
    for (std::size_t k = 0; k < c; ++k) voter_confidence[k] = canonical_sum(voter_scores[k]);
    std::size_t winner = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (votes[k] == 0 || votes[k] < votes[winner]) continue;
      if (votes[k] > votes[winner] ||
          voter_confidence[k] / static_cast<double>(votes[k]) >
              voter_confidence[winner] / static_cast<double>(votes[winner])) {
        winner = k;
      }
    }
    for (std::size_t h = 0; h < m; ++h) winner_probs[h] = outputs.per_head()[h](row, static_cast<Eigen::Index>(winner));
    pred.predicted_class[n] = static_cast<int>(winner);
    pred.confidence[n] = std::min(1.0, canonical_sum(winner_probs) / static_cast<double>(m));
  }
  pred.validate();
  return pred;
}

std::size_t hidden_width(MetamodelKind kind, std::size_t m, std::size_t classes) {
  switch (kind) {
    case MetamodelKind::kDL: return (m * classes + 1) / 2;
    case MetamodelKind::kDLL: return m * classes;
    case MetamodelKind::kSL:
    case MetamodelKind::kSLpC: return 0;
  }
  throw ConfigError("unknown metamodel kind");
}

std::size_t param_count(MetamodelKind kind, std::size_t m, std::size_t classes) {
  const std::size_t inputs = m * classes;
  switch (kind) {
    case MetamodelKind::kSL: return inputs * classes + classes;
    case MetamodelKind::kDL:
    case MetamodelKind::kDLL: {
      const std::size_t h = hidden_width(kind, m, classes);
      return inputs * h + h + h * classes + classes;
    }
    case MetamodelKind::kSLpC: return classes * (m + 1);
  }
  throw ConfigError("unknown metamodel kind");
}

Metamodel build_metamodel(MetamodelKind kind, std::size_t m, std::size_t classes, std::uint64_t seed,
                          double dropout_p) {
  if (m < 1 || classes < 1) throw ConfigError("metamodel needs m >= 1 and C >= 1");
  Metamodel meta;
  meta.kind = kind;
  meta.heads = m;
  meta.classes = classes;
  meta.hidden = hidden_width(kind, m, classes);
  meta.seed = seed;
  RngStream rng(seed);
  const auto c = static_cast<Eigen::Index>(classes);
  const auto inputs = static_cast<Eigen::Index>(m * classes);
  switch (kind) {
    case MetamodelKind::kSL:
      meta.params.push_back(uniform_layer(c, inputs, rng, true));
      break;
    case MetamodelKind::kDL:
    case MetamodelKind::kDLL: {
      if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
      meta.dropout_p = dropout_p;
      const auto h = static_cast<Eigen::Index>(meta.hidden);
      meta.params.push_back(uniform_layer(h, inputs, rng, true));
      meta.params.push_back(uniform_layer(c, h, rng, true));
      break;
    }
    case MetamodelKind::kSLpC:
      meta.params.push_back(uniform_layer(c, static_cast<Eigen::Index>(m), rng, true));
      break;
  }
  return meta;
}

Matrix metamodel_logits(const Metamodel& meta, const Parameters& params, const Matrix& stacked, bool training,
                        RngStream& rng) {
  check_input(meta, stacked);
  switch (meta.kind) {
    case MetamodelKind::kSL:
      return linear_forward(stacked, params.at(0));
    case MetamodelKind::kDL:
    case MetamodelKind::kDLL: {
      Matrix mask;
      if (training) mask = dropout_mask(stacked.rows(), static_cast<Eigen::Index>(meta.hidden), meta.dropout_p, rng);
      return mlp_forward(stacked, params.at(0), params.at(1), std::move(mask)).logits;
    }
    case MetamodelKind::kSLpC:
      return per_class_forward(params.at(0), stacked, static_cast<Eigen::Index>(meta.classes));
  }
  throw ConfigError("unknown metamodel kind");
}

Matrix metamodel_forward(const Metamodel& meta, const HeadOutputs& outputs, bool training, RngStream& rng) {
  if (outputs.heads() != meta.heads || outputs.classes() != meta.classes) {
    throw DimensionError(fmt::format("metamodel built for m={}, C={} but given m={}, C={}", meta.heads,
                                     meta.classes, outputs.heads(), outputs.classes()));
  }
  return metamodel_logits(meta, meta.params, outputs.concatenated(), training, rng);
}

LossGradient metamodel_loss_gradient(const Metamodel& meta, const Parameters& params, const Matrix& stacked,
                                     const Labels& labels, bool training, RngStream& rng) {
  check_input(meta, stacked);
  switch (meta.kind) {
    case MetamodelKind::kSL:
      return linear_loss_gradient(stacked, params.at(0), labels);
    case MetamodelKind::kDL:
    case MetamodelKind::kDLL: {
      Matrix mask;
      if (training) mask = dropout_mask(stacked.rows(), static_cast<Eigen::Index>(meta.hidden), meta.dropout_p, rng);
      return mlp_loss_gradient(stacked, params.at(0), params.at(1), labels, std::move(mask));
    }
    case MetamodelKind::kSLpC: {
      const Matrix probs = softmax(per_class_forward(params.at(0), stacked, static_cast<Eigen::Index>(meta.classes)));
      LossGradient out;
      out.loss = cross_entropy(probs, labels);
      out.gradient.push_back(per_class_backward(stacked, softmax_cross_entropy_grad(probs, labels),
                                                static_cast<Eigen::Index>(meta.heads)));
      return out;
    }
  }
  throw ConfigError("unknown metamodel kind");
}

void MetaTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("metamodel epochs must be >= 1");
  if (!(initial_lr > 0.0)) throw ConfigError("metamodel learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("metamodel momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("metamodel weight decay must be non-negative");
  if (batch_size < 1) throw ConfigError("metamodel batch size must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (plateau_patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
}

Metamodel train_metamodel(Metamodel meta, const HeadOutputs& train_outputs, const Labels& train_labels,
                          const HeadOutputs& val_outputs, const Labels& val_labels, const MetaTrainConfig& cfg) {
  cfg.validate();
  for (const HeadOutputs* outputs : {&train_outputs, &val_outputs}) {
    if (outputs->heads() != meta.heads || outputs->classes() != meta.classes) {
      throw DimensionError(fmt::format("metamodel built for m={}, C={} but given m={}, C={}", meta.heads,
                                       meta.classes, outputs->heads(), outputs->classes()));
    }
  }
  FitOptions options;
  options.learning_rate = cfg.initial_lr;
  options.momentum = cfg.momentum;
  options.weight_decay = cfg.weight_decay;
  options.batch_size = cfg.batch_size;
  options.max_epochs = cfg.epochs;
  options.plateau_factor = cfg.plateau_factor;
  options.plateau_patience = cfg.plateau_patience;
  options.min_lr = cfg.min_lr;

  RngStream rng(cfg.seed ^ kTrainStreamMix);
  FitResult fitted = fit(
      meta.params, train_outputs.concatenated(), train_labels, val_outputs.concatenated(), val_labels, options,
      rng,
      [&meta](const Parameters& p, const Matrix& x, const Labels& y, RngStream& r) {
        return metamodel_loss_gradient(meta, p, x, y, true, r);
      },
      [&meta, &rng](const Parameters& p, const Matrix& x) { return metamodel_logits(meta, p, x, false, rng); });
  meta.params = std::move(fitted.best);
  meta.history = std::move(fitted.history);
  return meta;
}

PredictionSet metamodel_predictions(const Metamodel& meta, const HeadOutputs& outputs, const Labels& labels) {
  RngStream unused(0);
  return predictions_from_probs(softmax(metamodel_forward(meta, outputs, false, unused)), labels);
}

void save_metamodel(const Metamodel& meta, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.magic("MMD1");
  out.u8(static_cast<std::uint8_t>(meta.kind));
  out.u32(static_cast<std::uint32_t>(meta.heads));
  out.u32(static_cast<std::uint32_t>(meta.classes));
  out.u32(static_cast<std::uint32_t>(meta.hidden));
  out.f32(static_cast<float>(meta.dropout_p));
  out.u64(meta.seed);
  auto put_matrix = [&out](const auto& values) {
    for (Eigen::Index i = 0; i < values.size(); ++i) out.f32(static_cast<float>(values.data()[i]));
  };
  if (meta.kind == MetamodelKind::kSLpC) {
    const DenseLayer& layer = meta.params.at(0);
    for (Eigen::Index c = 0; c < layer.weight.rows(); ++c) {
      for (Eigen::Index i = 0; i < layer.weight.cols(); ++i) out.f32(static_cast<float>(layer.weight(c, i)));
      out.f32(static_cast<float>(layer.bias[c]));
    }
  } else {
    for (const DenseLayer& layer : meta.params) {
      put_matrix(layer.weight);
      put_matrix(layer.bias);
    }
  }
  out.write_file(path);
}

Metamodel load_metamodel(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  in.expect_magic("MMD1");
  const std::size_t kind_at = in.offset();
  const std::uint8_t tag = in.u8();
  if (tag > 3) throw FormatError(fmt::format("unknown metamodel kind tag {}", tag), kind_at);
  const auto kind = static_cast<MetamodelKind>(tag);
  const std::uint32_t m = in.u32();
  const std::uint32_t c = in.u32();
  const std::size_t hidden_at = in.offset();
  const std::uint32_t h = in.u32();
  const float dropout = in.f32();
  const std::uint64_t seed = in.u64();
  if (m == 0 || c == 0) throw FormatError("m and C must be positive", hidden_at);
  if (h != hidden_width(kind, m, c)) {
    throw FormatError(fmt::format("hidden width {} inconsistent with kind {} (m={}, C={})", h, to_string(kind), m, c),
                      hidden_at);
  }
  in.need(param_count(kind, m, c) * 4, "metamodel parameters");

  Metamodel meta;
  meta.kind = kind;
  meta.heads = m;
  meta.classes = c;
  meta.hidden = h;
  meta.dropout_p = static_cast<double>(dropout);
  meta.seed = seed;
  auto read_layer = [&in](Eigen::Index out_dim, Eigen::Index in_dim) {
    DenseLayer layer = DenseLayer::zeros(out_dim, in_dim);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = in.f32();
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = in.f32();
    return layer;
  };
  const auto inputs = static_cast<Eigen::Index>(m) * c;
  switch (kind) {
    case MetamodelKind::kSL:
      meta.params.push_back(read_layer(c, inputs));
      break;
    case MetamodelKind::kDL:
    case MetamodelKind::kDLL:
      meta.params.push_back(read_layer(h, inputs));
      meta.params.push_back(read_layer(c, h));
      break;
    case MetamodelKind::kSLpC: {
      DenseLayer layer = DenseLayer::zeros(c, m);
      for (Eigen::Index k = 0; k < layer.weight.rows(); ++k) {
        for (Eigen::Index i = 0; i < layer.weight.cols(); ++i) layer.weight(k, i) = in.f32();
        layer.bias[k] = in.f32();
      }
      meta.params.push_back(std::move(layer));
      break;
    }
  }
  in.expect_end();
  if (!all_finite(meta.params)) throw FormatError("metamodel parameters contain non-finite values", 30);
  return meta;
}

}  // namespace calens
