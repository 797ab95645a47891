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

// Acceptance suite: one PASS/FAIL line per criterion. Run with no arguments
// for all criteria or with a criterion number to run one.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <json.hpp>

#include "calens/cli.hpp"
#include "calens/combiners.hpp"
#include "calens/data.hpp"
#include "calens/heads.hpp"
#include "calens/metrics.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using namespace calens;
using calens::testing::TempDir;

namespace {

// Tolerances and budgets.
constexpr double kOracleTolerance = 1e-12;
constexpr double kOracleBudgetSeconds = 5.0;
constexpr double kFixtureTolerance = 0.02;
constexpr double kGradientStep = 1e-5;
constexpr double kGradientTolerance = 1e-4;
constexpr int kGradientInstances = 20;
constexpr double kGradientBudgetSeconds = 30.0;
constexpr double kHeadAccuracyFloor = 0.99;
constexpr double kHeadBudgetSeconds = 10.0;
constexpr double kTrendRelativeGain = 0.20;
constexpr double kTrendAccuracyBand = 1.5;  // percentage points
constexpr double kTrendBudgetSeconds = 120.0;
constexpr double kBaseModelParameters = 11.22e6;
constexpr double kOverheadCeiling = 0.05;

// Fixed seeds.
constexpr std::uint64_t kOracleSeed = 1001;
constexpr std::uint64_t kFixtureSeed = 42;
constexpr std::uint64_t kGradientSeed = 2024;
constexpr std::uint64_t kHeadSeed = 4;
constexpr std::uint64_t kTrendSeed = 7;
constexpr std::uint64_t kDeterminismSeed = 11;
constexpr std::uint64_t kPropertySeed = 8;

// Metamodel learning rate for the desk-scale trend run. The default 2e-4
// barely moves the metamodels within 20 epochs on 3600 samples.
constexpr const char* kTrendMetaLearningRate = "0.05";

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

class ScopedCwd {
 public:
  explicit ScopedCwd(const fs::path& dir) : saved_(fs::current_path()) { fs::current_path(dir); }
  ~ScopedCwd() { fs::current_path(saved_); }

 private:
  fs::path saved_;
};

void cli(std::vector<std::string> args) {
  args.insert(args.begin(), "calens");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw std::runtime_error(fmt::format("calens {} exited {}: {}", args.at(1), code, err.str()));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome oracle_equivalence() {
  Stopwatch clock;
  RngStream rng(kOracleSeed);
  const std::size_t bin_choices[] = {1, 5, 10, 15};
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t bins = bin_choices[trial % 4];
    const std::size_t n = 1 + rng.below(500);
    const std::size_t classes = 2 + rng.below(19);
    const PredictionSet pred = calens::testing::random_prediction_set(rng, n, classes, bins);
    const auto oracle =
        calens::testing::brute_force_calibration(pred.confidence, pred.predicted_class, pred.labels, bins);
    const auto report = calibration_report(pred, bins);
    worst = std::max({worst, std::abs(report.ece - oracle.ece), std::abs(report.mce - oracle.mce),
                      std::abs(report.accuracy - oracle.accuracy)});
  }
  const double elapsed = clock.seconds();
  return {worst <= kOracleTolerance && elapsed < kOracleBudgetSeconds,
          fmt::format("max |diff| {:.3g} (limit {:g}), {:.2f} s (limit {:g} s)", worst, kOracleTolerance, elapsed,
                      kOracleBudgetSeconds)};
}

Outcome miscalibration_fixture() {
  MiscalSpec spec;
  spec.samples = 10000;
  spec.confidence_level = 0.8;
  spec.true_accuracy = 0.6;
  spec.seed = kFixtureSeed;
  const auto off = calibration_report(synth_miscalibrated_predictions(spec));
  spec.confidence_level = 1.0;
  spec.true_accuracy = 1.0;
  const auto perfect = calibration_report(synth_miscalibrated_predictions(spec));
  const bool pass = std::abs(off.ece - 0.20) <= kFixtureTolerance && off.mce == off.ece && perfect.ece == 0.0 &&
                    perfect.mce == 0.0;
  return {pass, fmt::format("ECE {:.4f} MCE {:.4f} (target 0.20 +/- {:g}); perfect ECE {:g} MCE {:g}", off.ece,
                            off.mce, kFixtureTolerance, perfect.ece, perfect.mce)};
}

Outcome gradient_correctness() {
  Stopwatch clock;
  RngStream rng(kGradientSeed);
  std::map<std::string, double> worst;
  for (int trial = 0; trial < kGradientInstances; ++trial) {
    const Matrix x = calens::testing::random_matrix(rng, 11, 7);
    const Labels y = calens::testing::random_labels(rng, 11, 5);
    const LinearHead head = init_head(7, 5, rng.next_u64());
    DenseLayer layer = head.layer;
    layer.bias = calens::testing::random_matrix(rng, 5, 1, 0.5).col(0);
    const LossGradient g = linear_loss_gradient(x, layer, y);
    const auto check = calens::testing::finite_difference_check(
        {layer}, g.gradient, [&](const Parameters& p) { return calens::testing::reference_linear_loss(x, p[0], y); },
        kGradientStep);
    worst["head"] = std::max(worst["head"], check.max_relative_error);
  }
  for (auto kind : kAllMetamodelKinds) {
    const std::string name(to_string(kind));
    worst[name] = 0.0;
    for (int trial = 0; trial < kGradientInstances; ++trial) {
      const Metamodel meta = build_metamodel(kind, 3, 4, rng.next_u64());
      std::vector<Matrix> heads;
      for (int i = 0; i < 3; ++i) heads.push_back(calens::testing::random_probabilities(rng, 9, 4));
      const Matrix x = HeadOutputs::from_probabilities(heads).concatenated();
      const Labels y = calens::testing::random_labels(rng, 9, 4);
      // Central differences are undefined across a ReLU kink; redraw such instances.
      if (meta.params.size() == 2 && calens::testing::relu_margin(x, meta.params[0]) < calens::testing::kKinkMargin) {
        --trial;
        continue;
      }
      RngStream unused(0);
      const LossGradient g = metamodel_loss_gradient(meta, meta.params, x, y, false, unused);
      const auto check = calens::testing::finite_difference_check(
          meta.params, g.gradient,
          [&](const Parameters& p) { return cross_entropy(softmax(metamodel_logits(meta, p, x, false, unused)), y); },
          kGradientStep);
      worst[name] = std::max(worst[name], check.max_relative_error);
    }
  }
  const double elapsed = clock.seconds();
  bool pass = elapsed < kGradientBudgetSeconds;
  std::string detail;
  for (const auto& [name, err] : worst) {
    pass = pass && err <= kGradientTolerance;
    detail += fmt::format("{} {:.2e}, ", name, err);
  }
  detail += fmt::format("limit {:g}, {:.2f} s (limit {:g} s)", kGradientTolerance, elapsed, kGradientBudgetSeconds);
  return {pass, detail};
}

Outcome head_convergence() {
  Stopwatch clock;
  SynthSpec spec;
  spec.classes = 4;
  spec.dim = 8;
  spec.samples = 4000;
  spec.cluster_separation = 20.0;
  spec.label_noise = 0.0;
  spec.seed = kHeadSeed;
  const FeatureDataset all = synth_clusters(spec);
  const auto [rest, held_out] = split(all, 0.25, kHeadSeed + 1000);
  const auto [train, val] = split(rest, 0.1, kHeadSeed + 1001);
  HeadTrainConfig cfg;
  cfg.seed = kHeadSeed + 1;
  const LinearHead head = train_head(train, val, cfg);
  const double acc = accuracy(predictions_from_probs(softmax(head_predict(head, held_out.features())), held_out.labels()));
  const double elapsed = clock.seconds();
  return {acc >= kHeadAccuracyFloor && elapsed < kHeadBudgetSeconds,
          fmt::format("held-out accuracy {:.4f} on {} samples (floor {:g}), {} epochs, {:.2f} s (limit {:g} s)", acc,
                      held_out.size(), kHeadAccuracyFloor, head.history.size(), elapsed, kHeadBudgetSeconds)};
}

Outcome combiner_trend() {
  Stopwatch clock;
  TempDir dir("trend");
  ScopedCwd cwd(dir.path());
  const std::string seed = std::to_string(kTrendSeed);
  cli({"gen", "--kind", "clusters", "--classes", "10", "--dim", "16", "--n", "4000", "--sep", "6", "--noise", "0.2",
       "--seed", seed, "--out", "data"});
  cli({"train-heads", "--train", "data/train.fds", "--out", "run", "--m", "5", "--seed", seed});
  cli({"train-meta", "--train", "data/train.fds", "--heads", "run", "--seed", seed, "--lr", kTrendMetaLearningRate});
  cli({"evaluate", "--test", "data/test.fds", "--heads", "run", "--out", "eval"});
  const auto summary = nlohmann::json::parse(slurp("eval/summary.json"));

  std::vector<double> head_acc, head_ece;
  std::map<std::string, std::pair<double, double>> combiner;  // name -> (acc, ece)
  for (const auto& row : summary.at("rows")) {
    const double acc = row.at("accuracy").get<double>();
    const double ece = row.at("ece").get<double>();
    if (row.at("group") == "head") {
      head_acc.push_back(acc);
      head_ece.push_back(ece);
    } else {
      combiner[row.at("name").get<std::string>()] = {acc, ece};
    }
  }
  const double mean_acc = std::accumulate(head_acc.begin(), head_acc.end(), 0.0) / static_cast<double>(head_acc.size());
  const double mean_ece = std::accumulate(head_ece.begin(), head_ece.end(), 0.0) / static_cast<double>(head_ece.size());

  std::string detail = fmt::format("heads: mean Acc {:.2f} ECE {:.2f}", mean_acc, mean_ece);
  bool a = true, b = true, c = true;
  for (const char* name : {"SL", "DL"}) {
    const double gain = 1.0 - combiner.at(name).second / mean_ece;
    a = a && gain >= kTrendRelativeGain;
    detail += fmt::format("; {} ECE {:.2f} ({:+.1f}% rel.)", name, combiner.at(name).second, -100.0 * gain);
  }
  for (const auto& [name, values] : combiner) {
    b = b && std::abs(values.first - mean_acc) <= kTrendAccuracyBand;
  }
  for (const char* name : {"Avg.", "Vot."}) {
    c = c && combiner.at(name).second <= mean_ece;
    detail += fmt::format("; {} ECE {:.2f}", name, combiner.at(name).second);
  }
  std::string accs;
  for (const auto& [name, values] : combiner) accs += fmt::format(" {} {:.2f}", name, values.first);
  const double elapsed = clock.seconds();
  detail += fmt::format("; Acc:{}; (a) {} (b) {} (c) {}; {:.1f} s (limit {:g} s)", accs, a ? "ok" : "FAIL",
                        b ? "ok" : "FAIL", c ? "ok" : "FAIL", elapsed, kTrendBudgetSeconds);
  return {a && b && c && elapsed < kTrendBudgetSeconds, detail};
}

Outcome parameter_overhead() {
  const bool formulas = param_count(MetamodelKind::kSLpC, 5, 100) == 600 &&
                        param_count(MetamodelKind::kSL, 5, 100) == 50100 &&
                        param_count(MetamodelKind::kDLL, 5, 100) == 300600 &&
                        build_metamodel(MetamodelKind::kSL, 5, 100, 0).parameter_count() == 50100 &&
                        build_metamodel(MetamodelKind::kSLpC, 5, 100, 0).parameter_count() == 600 &&
                        build_metamodel(MetamodelKind::kDLL, 5, 100, 0).parameter_count() == 300600;
  const std::size_t family = 5 * head_parameter_count(512, 100);
  const std::size_t overhead = family + param_count(MetamodelKind::kSL, 5, 100);
  const double share = static_cast<double>(overhead) / kBaseModelParameters;
  return {formulas && share < kOverheadCeiling,
          fmt::format("SLpC/SL/DLL counts {}; heads {} + SL {} = {} parameters, {:.2f}% of {:g} (ceiling {:g}%)",
                      formulas ? "exact" : "WRONG", family, param_count(MetamodelKind::kSL, 5, 100), overhead,
                      100.0 * share, kBaseModelParameters, 100.0 * kOverheadCeiling)};
}

std::map<std::string, std::string> run_pipeline(const fs::path& root) {
  ScopedCwd cwd(root);
  const std::string seed = std::to_string(kDeterminismSeed);
  cli({"gen", "--kind", "clusters", "--classes", "6", "--dim", "10", "--n", "1500", "--sep", "5", "--noise", "0.1",
       "--seed", seed, "--out", "data"});
  cli({"train-heads", "--train", "data/train.fds", "--out", "heads", "--m", "4", "--seed", seed, "--jobs", "4"});
  cli({"train-meta", "--train", "data/train.fds", "--heads", "heads", "--seed", seed});
  cli({"evaluate", "--test", "data/test.fds", "--heads", "heads", "--out", "eval"});
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(".")) {
    if (entry.is_regular_file()) files[entry.path().lexically_normal().string()] = slurp(entry.path());
  }
  return files;
}

Outcome determinism() {
  TempDir first("determinism"), second("determinism");
  const auto a = run_pipeline(first.path());
  const auto b = run_pipeline(second.path());
  std::size_t differing = 0;
  std::string names;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      ++differing;
      names += " " + name;
    }
  }
  const bool pass = a.size() == b.size() && differing == 0 && a.contains("eval/summary.json");
  return {pass, fmt::format("{} artifact files compared, {} differ{}", a.size(), differing, names)};
}

Outcome property_suite() {
  RngStream rng(kPropertySeed);
  std::size_t permutation_failures = 0, slpc_failures = 0, single_bin_failures = 0, ordering_failures = 0;

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.below(5);
    const auto classes = static_cast<Eigen::Index>(2 + rng.below(10));
    std::vector<Matrix> heads;
    for (std::size_t i = 0; i < m; ++i) heads.push_back(calens::testing::random_probabilities(rng, 15, classes));
    const Labels labels = calens::testing::random_labels(rng, 15, static_cast<std::size_t>(classes));
    const HeadOutputs outputs = HeadOutputs::from_probabilities(heads);
    std::vector<Matrix> permuted = heads;
    rng.shuffle(permuted);
    const HeadOutputs shuffled = HeadOutputs::from_probabilities(permuted);
    for (auto combine : {&combine_average, &combine_vote}) {
      const PredictionSet x = combine(outputs, labels), y = combine(shuffled, labels);
      if (x.predicted_class != y.predicted_class || x.confidence != y.confidence) ++permutation_failures;
    }

    Metamodel slpc = build_metamodel(MetamodelKind::kSLpC, m, static_cast<std::size_t>(classes), rng.next_u64());
    slpc.params[0].weight.setConstant(1.0 / static_cast<double>(m));
    slpc.params[0].bias.setZero();
    if (metamodel_predictions(slpc, outputs, labels).predicted_class != combine_average(outputs, labels).predicted_class) {
      ++slpc_failures;
    }
  }

  std::vector<PredictionSet> fixtures;
  for (int trial = 0; trial < 100; ++trial) {
    fixtures.push_back(calens::testing::random_prediction_set(rng, 1 + rng.below(400), 2 + rng.below(19), 15));
  }
  for (double conf : {0.5, 0.8, 1.0}) {
    for (double acc : {0.0, 0.6, 0.8, 1.0}) {
      MiscalSpec spec;
      spec.samples = 2000;
      spec.confidence_level = conf;
      spec.true_accuracy = acc;
      spec.seed = rng.next_u64();
      fixtures.push_back(synth_miscalibrated_predictions(spec));
    }
  }
  for (const auto& pred : fixtures) {
    const auto single = calibration_report(pred, 1);
    double conf_sum = 0.0;
    for (double c : pred.confidence) conf_sum += c;
    const double mean_conf = conf_sum / static_cast<double>(pred.size());
    if (single.ece != std::abs(accuracy(pred) - mean_conf)) ++single_bin_failures;
    for (std::size_t bins : {1u, 5u, 10u, 15u}) {
      const auto r = calibration_report(pred, bins);
      if (!(0.0 <= r.ece && r.ece <= r.mce)) ++ordering_failures;
    }
  }
  const bool pass = permutation_failures == 0 && slpc_failures == 0 && single_bin_failures == 0 && ordering_failures == 0;
  return {pass, fmt::format("permutation {} / 200, SLpC-vs-Avg. argmax {} / 100, single-bin ECE {} / {}, "
                            "0 <= ECE <= MCE {} / {} failures",
                            permutation_failures, slpc_failures, single_bin_failures, fixtures.size(),
                            ordering_failures, 4 * fixtures.size())};
}

struct Criterion {
  int number;
  const char* title;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "ECE/MCE oracle equivalence", oracle_equivalence},
    {2, "analytic miscalibration fixture", miscalibration_fixture},
    {3, "gradient correctness", gradient_correctness},
    {4, "head convergence", head_convergence},
    {5, "calibration trend of the combiners", combiner_trend},
    {6, "parameter overhead", parameter_overhead},
    {7, "pipeline determinism", determinism},
    {8, "property suite", property_suite},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);
  int failures = 0;
  for (const auto& criterion : kCriteria) {
    if (only != 0 && criterion.number != only) continue;
    Outcome outcome;
    try {
      outcome = criterion.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failures += outcome.pass ? 0 : 1;
    std::cout << fmt::format("[{}] criterion {}: {}: {}", outcome.pass ? "PASS" : "FAIL", criterion.number,
                             criterion.title, outcome.detail)
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
