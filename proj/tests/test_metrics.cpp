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

#include <doctest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <sstream>

#include "calens/metrics.hpp"
#include "oracles.hpp"

using namespace calens;
using calens::testing::brute_force_calibration;
using calens::testing::exact_bin;
using calens::testing::random_prediction_set;

namespace {

PredictionSet make_set(std::vector<double> conf, std::vector<int> predicted, std::vector<int> labels) {
  PredictionSet p;
  p.confidence = std::move(conf);
  p.predicted_class = std::move(predicted);
  p.labels = std::move(labels);
  return p;
}

double naive_mean(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

TEST_CASE("assign_bin") {
  CHECK(assign_bin(0.0, 15) == 0);
  CHECK(assign_bin(1.0, 15) == 14);
  CHECK(assign_bin(0.5, 10) == 5);
  CHECK(assign_bin(0.5, 1) == 0);
  CHECK(assign_bin(11.0 / 15.0, 15) == exact_bin(11.0 / 15.0, 15));
  CHECK(assign_bin(0.7333333333333333, 15) == 10);
  CHECK_THROWS_AS(assign_bin(1.5, 15), DomainError);
  CHECK_THROWS_AS(assign_bin(-0.01, 15), DomainError);
  CHECK_THROWS_AS(assign_bin(std::nan(""), 15), DomainError);
  CHECK_THROWS(assign_bin(0.5, 0));

  SUBCASE("agrees with the exact rational rule, including every edge") {
    RngStream rng(4);
    for (std::size_t bins : {1u, 2u, 3u, 5u, 7u, 10u, 15u, 20u, 100u}) {
      for (std::size_t k = 0; k <= bins; ++k) {
        const double edge = static_cast<double>(k) / static_cast<double>(bins);
        for (double c : {std::nextafter(edge, 0.0), edge, std::nextafter(edge, 2.0)}) {
          if (c < 0.0 || c > 1.0) continue;
          REQUIRE(assign_bin(c, bins) == exact_bin(c, bins));
        }
      }
      for (int i = 0; i < 2000; ++i) {
        const double c = rng.uniform();
        REQUIRE(assign_bin(c, bins) == exact_bin(c, bins));
      }
    }
  }
}

TEST_CASE("ece and mce on hand-built sets") {
  SUBCASE("perfect one-hot predictions") {
    const auto pred = make_set({1, 1, 1}, {0, 1, 2}, {0, 1, 2});
    const auto r = calibration_report(pred);
    CHECK(r.ece == 0.0);
    CHECK(r.mce == 0.0);
    CHECK(r.accuracy == 1.0);
  }
  SUBCASE("one bin, acc 0.65, conf 0.80") {
    std::vector<double> conf(20, 0.8);
    std::vector<int> predicted(20, 0), labels(20, 0);
    for (int i = 0; i < 7; ++i) labels[static_cast<std::size_t>(i)] = 1;
    const auto r = calibration_report(make_set(conf, predicted, labels));
    CHECK(r.ece == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(r.mce == r.ece);
  }
  SUBCASE("two equal bins with gaps 0.1 and 0.3") {
    // Bin [0.2, 0.3): conf 0.25, acc 0.35 (gap 0.1). Bin [0.9, 1.0]: conf 0.95, acc 0.65 (gap 0.3).
    std::vector<double> conf;
    std::vector<int> predicted, labels;
    for (int i = 0; i < 20; ++i) {
      conf.push_back(0.25);
      predicted.push_back(0);
      labels.push_back(i < 7 ? 0 : 1);
    }
    for (int i = 0; i < 20; ++i) {
      conf.push_back(0.95);
      predicted.push_back(0);
      labels.push_back(i < 13 ? 0 : 1);
    }
    const auto r = calibration_report(make_set(conf, predicted, labels), 10);
    CHECK(r.ece == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.mce == doctest::Approx(0.3).epsilon(1e-12));
    std::size_t non_empty = 0;
    for (const auto& b : r.bins) non_empty += b.count > 0;
    CHECK(non_empty == 2);
  }
  SUBCASE("accuracy counts matches") {
    CHECK(accuracy(make_set({0.9, 0.9, 0.9, 0.9}, {0, 1, 2, 3}, {0, 1, 2, 0})) == 0.75);
  }
  SUBCASE("norm degree 2 uses the weighted power mean") {
    std::vector<double> conf{0.25, 0.25, 0.95, 0.95};
    const auto r = calibration_report(make_set(conf, {0, 0, 0, 0}, {0, 1, 0, 1}), 10, 2.0);
    const double expected = std::sqrt(0.5 * 0.25 * 0.25 + 0.5 * 0.45 * 0.45);
    CHECK(r.ece == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(calibration_report(make_set({}, {}, {})), EmptyInputError);
    CHECK_THROWS(calibration_report(make_set({0.5, 0.5}, {0}, {0, 1})));
    CHECK_THROWS_AS(calibration_report(make_set({1.2}, {0}, {0})), DomainError);
  }
}

TEST_CASE("reliability bins match the brute-force oracle") {
  RngStream rng(2718);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t bins = std::array<std::size_t, 4>{1, 5, 10, 15}[static_cast<std::size_t>(trial % 4)];
    const std::size_t n = 1 + rng.below(500);
    const std::size_t classes = 2 + rng.below(19);
    const PredictionSet pred = random_prediction_set(rng, n, classes, bins);
    const auto oracle = brute_force_calibration(pred.confidence, pred.predicted_class, pred.labels, bins);
    const auto report = calibration_report(pred, bins);
    REQUIRE(report.bins.size() == bins);
    CHECK(std::abs(report.ece - oracle.ece) <= 1e-12);
    CHECK(std::abs(report.mce - oracle.mce) <= 1e-12);
    CHECK(report.accuracy == oracle.accuracy);
    for (std::size_t b = 0; b < bins; ++b) {
      REQUIRE(report.bins[b].count == oracle.counts[b]);
      CHECK(report.bins[b].bin_index == b);
      if (oracle.counts[b] == 0) {
        CHECK_FALSE(report.bins[b].mean_confidence.has_value());
        continue;
      }
      CHECK(std::abs(*report.bins[b].mean_confidence - oracle.mean_confidence[b]) <= 1e-12);
      CHECK(*report.bins[b].mean_accuracy == oracle.mean_accuracy[b]);
    }
    CHECK(0.0 <= report.ece);
    CHECK(report.ece <= report.mce + 1e-15);
    CHECK(report.mce <= 1.0);
  }
}

TEST_CASE("single-bin ECE is the overall accuracy-confidence gap") {
  RngStream rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const PredictionSet pred = random_prediction_set(rng, 1 + rng.below(300), 5, 1);
    const auto r = calibration_report(pred, 1);
    CHECK(r.ece == std::abs(accuracy(pred) - naive_mean(pred.confidence)));
    CHECK(r.mce == r.ece);
  }
}

TEST_CASE("ECE is invariant under sample permutation") {
  RngStream rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    PredictionSet pred = random_prediction_set(rng, 200, 10, 15);
    const auto before = calibration_report(pred);
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    PredictionSet shuffled;
    for (std::size_t i : order) {
      shuffled.confidence.push_back(pred.confidence[i]);
      shuffled.predicted_class.push_back(pred.predicted_class[i]);
      shuffled.labels.push_back(pred.labels[i]);
    }
    const auto after = calibration_report(shuffled);
    CHECK(after.ece == doctest::Approx(before.ece).epsilon(1e-12));
    CHECK(after.mce == doctest::Approx(before.mce).epsilon(1e-12));
  }
}

TEST_CASE("predictions_from_probs takes max and argmax") {
  Matrix probs(3, 3);
  probs << 0.2, 0.5, 0.3, 0.6, 0.2, 0.2, 0.1, 0.1, 0.8;
  const auto p = predictions_from_probs(probs, {1, 1, 2});
  CHECK(p.predicted_class == std::vector<int>{1, 0, 2});
  CHECK(p.confidence == std::vector<double>{0.5, 0.6, 0.8});
  CHECK(accuracy(p) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("reliability CSV") {
  const auto r = calibration_report(make_set({0.25, 0.95}, {0, 0}, {0, 1}), 4);
  std::ostringstream out;
  write_reliability_csv(out, r.bins);
  CHECK(out.str() ==
        "bin_index,lower,upper,count,mean_confidence,mean_accuracy\n"
        "0,0,0.25,0,,\n"
        "1,0.25,0.5,1,0.25,1\n"
        "2,0.5,0.75,0,,\n"
        "3,0.75,1,1,0.95,0\n");
}
