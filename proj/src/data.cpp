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

#include "calens/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "binary_io.hpp"

namespace calens {

namespace {

double round_to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw DataError(fmt::format("{} = {} does not fit the file format", what, v));
  return static_cast<std::uint32_t>(v);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream stream(line);
  std::string cell;
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

template <typename T>
T parse_cell(std::string cell, std::size_t line_no) {
  cell.erase(0, cell.find_first_not_of(" \t\r"));
  cell.erase(cell.find_last_not_of(" \t\r") + 1);
  T value{};
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw FormatError(fmt::format("cannot parse '{}' on line {}", cell, line_no), line_no);
  }
  return value;
}

}  // namespace

FeatureDataset::FeatureDataset(Matrix features, Labels labels, std::size_t classes, std::string name)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      classes_(classes),
      name_(std::move(name)) {
  if (labels_.empty()) throw DataError("dataset must hold at least one sample");
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw DimensionError(fmt::format("{} feature rows but {} labels", features_.rows(), labels_.size()));
  }
  if (classes_ < 1) throw DataError("dataset must have at least one class");
  if (features_.cols() < 1) throw DataError("dataset features must have at least one dimension");
  check_labels(labels_, static_cast<Eigen::Index>(classes_));
  if (!features_.allFinite()) throw DataError("dataset features contain non-finite values");
}

FeatureDataset FeatureDataset::subset(const std::vector<std::size_t>& indices, std::string name) const {
  std::vector<Eigen::Index> rows(indices.begin(), indices.end());
  Labels labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) labels[i] = labels_.at(indices[i]);
  return FeatureDataset(features_(rows, Eigen::all), std::move(labels), classes_, std::move(name));
}

void save_dataset(const FeatureDataset& dataset, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.magic("FDS1");
  out.u32(checked_u32(dataset.size(), "N"));
  out.u32(checked_u32(dataset.dim(), "D"));
  out.u32(checked_u32(dataset.classes(), "C"));
  const Matrix& x = dataset.features();
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (Eigen::Index d = 0; d < x.cols(); ++d) out.f32(static_cast<float>(x(n, d)));
    out.u32(static_cast<std::uint32_t>(dataset.labels()[static_cast<std::size_t>(n)]));
  }
  out.write_file(path);
}

FeatureDataset load_dataset(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  in.expect_magic("FDS1");
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  const std::uint32_t c = in.u32();
  if (n == 0 || d == 0 || c == 0) throw FormatError("N, D and C must be positive", in.offset());
  const std::uint64_t record = (static_cast<std::uint64_t>(d) + 1) * 4;
  in.need(static_cast<std::size_t>(record * n), "records");
  Matrix features(n, d);
  Labels labels(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) features(i, j) = static_cast<double>(in.f32());
    const std::size_t at = in.offset();
    const std::uint32_t label = in.u32();
    if (label >= c) throw FormatError(fmt::format("label {} not below C = {}", label, c), at);
    labels[i] = static_cast<int>(label);
  }
  in.expect_end();
  return FeatureDataset(std::move(features), std::move(labels), c, path.stem().string());
}

FeatureDataset import_csv(const std::filesystem::path& path, std::optional<std::size_t> classes) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("missing CSV header", 0);
  const auto header = split_csv_line(line);
  if (header.size() < 2) throw FormatError("CSV header needs at least one feature and a label", 1);
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j] != fmt::format("f{}", j)) throw FormatError(fmt::format("expected column f{}", j), 1);
  }
  if (header.back() != "label" && header.back() != "label\r") throw FormatError("expected label column", 1);

  std::vector<double> values;
  Labels labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != dim + 1) {
      throw FormatError(fmt::format("line {} has {} columns, expected {}", line_no, cells.size(), dim + 1),
                        line_no);
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(round_to_f32(parse_cell<double>(cells[j], line_no)));
    labels.push_back(parse_cell<int>(cells[dim], line_no));
  }
  if (labels.empty()) throw DataError("CSV holds no samples");
  const int top = *std::max_element(labels.begin(), labels.end());
  const std::size_t c = classes.value_or(static_cast<std::size_t>(std::max(top, 0)) + 1);
  Matrix features = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                             static_cast<Eigen::Index>(dim));
  return FeatureDataset(std::move(features), std::move(labels), c, path.stem().string());
}

void save_probabilities(const Matrix& probs, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.magic("PRB1");
  out.u32(checked_u32(static_cast<std::size_t>(probs.rows()), "N"));
  out.u32(checked_u32(static_cast<std::size_t>(probs.cols()), "C"));
  for (Eigen::Index i = 0; i < probs.size(); ++i) out.f32(static_cast<float>(probs.data()[i]));
  out.write_file(path);
}

Matrix load_probabilities(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  in.expect_magic("PRB1");
  const std::uint32_t n = in.u32();
  const std::uint32_t c = in.u32();
  if (n == 0 || c == 0) throw FormatError("N and C must be positive", in.offset());
  in.need(static_cast<std::size_t>(n) * c * 4, "probabilities");
  Matrix probs(n, c);
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const std::size_t at = in.offset();
    const float v = in.f32();
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw FormatError(fmt::format("probability {} outside [0, 1]", v), at);
    }
    probs.data()[i] = static_cast<double>(v);
  }
  in.expect_end();
  return probs;
}

std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& dataset, double val_fraction,
                                                std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError(fmt::format("validation fraction must lie in (0, 1), got {}", val_fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.classes());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.labels()[i])].push_back(i);
  }
  RngStream rng(seed);
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < 2) {
      throw DataError(fmt::format("class {} has {} sample(s); stratified split needs at least 2", c, rows.size()));
    }
    rng.shuffle(rows);
    const auto wanted = static_cast<std::size_t>(std::llround(static_cast<double>(rows.size()) * val_fraction));
    const std::size_t n_val = std::clamp<std::size_t>(wanted, 1, rows.size() - 1);
    val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  return {dataset.subset(train_rows, dataset.name() + "/train"), dataset.subset(val_rows, dataset.name() + "/val")};
}

void SynthSpec::validate() const {
  if (classes < 1 || dim < 1 || samples < 1) throw ConfigError("classes, dim and samples must be >= 1");
  if (!(cluster_separation >= 0.0) || !std::isfinite(cluster_separation)) {
    throw ConfigError("cluster separation must be a finite non-negative number");
  }
  if (!(label_noise >= 0.0 && label_noise < 1.0)) throw ConfigError("label noise must lie in [0, 1)");
  if (label_noise > 0.0 && classes < 2) throw ConfigError("label noise needs at least two classes");
}

FeatureDataset synth_clusters(const SynthSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed);
  const auto c = static_cast<Eigen::Index>(spec.classes);
  const auto d = static_cast<Eigen::Index>(spec.dim);
  Matrix centers(c, d);
  for (Eigen::Index k = 0; k < c; ++k) {
    Vector direction(d);
    do {
      for (Eigen::Index j = 0; j < d; ++j) direction[j] = rng.normal();
    } while (direction.norm() == 0.0);
    centers.row(k) = spec.cluster_separation * direction.normalized().transpose();
  }
  Matrix features(static_cast<Eigen::Index>(spec.samples), d);
  Labels labels(spec.samples);
  for (std::size_t n = 0; n < spec.samples; ++n) {
    const auto k = static_cast<Eigen::Index>(n % spec.classes);
    const auto row = static_cast<Eigen::Index>(n);
    for (Eigen::Index j = 0; j < d; ++j) features(row, j) = round_to_f32(centers(k, j) + rng.normal());
    int label = static_cast<int>(k);
    if (spec.label_noise > 0.0 && rng.bernoulli(spec.label_noise)) {
      label = static_cast<int>((static_cast<std::size_t>(k) + 1 + rng.below(spec.classes - 1)) % spec.classes);
    }
    labels[n] = label;
  }
  return FeatureDataset(std::move(features), std::move(labels), spec.classes, "clusters");
}

void MiscalSpec::validate() const {
  if (samples < 1 || classes < 1) throw ConfigError("samples and classes must be >= 1");
  if (!(confidence_level > 0.0 && confidence_level <= 1.0)) {
    throw ConfigError("confidence level must lie in (0, 1]");
  }
  if (!(true_accuracy >= 0.0 && true_accuracy <= 1.0)) throw ConfigError("true accuracy must lie in [0, 1]");
  if (true_accuracy < 1.0 && classes < 2) throw ConfigError("wrong labels need at least two classes");
}

PredictionSet synth_miscalibrated_predictions(const MiscalSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed);
  PredictionSet pred;
  pred.predicted_class.resize(spec.samples);
  pred.confidence.assign(spec.samples, spec.confidence_level);
  pred.labels.resize(spec.samples);
  for (std::size_t n = 0; n < spec.samples; ++n) {
    const std::size_t predicted = rng.below(spec.classes);
    pred.predicted_class[n] = static_cast<int>(predicted);
    const bool correct = spec.true_accuracy >= 1.0 || rng.bernoulli(spec.true_accuracy);
    pred.labels[n] = correct ? static_cast<int>(predicted)
                             : static_cast<int>((predicted + 1 + rng.below(spec.classes - 1)) % spec.classes);
  }
  return pred;
}

Matrix probabilities_for(const PredictionSet& pred, std::size_t classes) {
  pred.validate();
  if (classes < 2) throw ConfigError("probability rows need at least two classes");
  check_labels(pred.predicted_class, static_cast<Eigen::Index>(classes));
  const double others = static_cast<double>(classes - 1);
  Matrix probs(static_cast<Eigen::Index>(pred.size()), static_cast<Eigen::Index>(classes));
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const double top = pred.confidence[n];
    const double rest = (1.0 - top) / others;
    if (!(top > rest)) {
      throw DomainError(fmt::format("confidence {} does not exceed 1/C for sample {}", top, n));
    }
    probs.row(static_cast<Eigen::Index>(n)).setConstant(rest);
    probs(static_cast<Eigen::Index>(n), pred.predicted_class[n]) = top;
  }
  return probs;
}

}  // namespace calens
