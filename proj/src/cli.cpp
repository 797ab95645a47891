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

#include "calens/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "calens/combiners.hpp"
#include "calens/data.hpp"
#include "calens/heads.hpp"
#include "calens/metrics.hpp"

namespace calens::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Seed offsets: every stream in a run derives from the one --seed.
constexpr std::uint64_t kHeadSeedOffset = 1;
constexpr std::uint64_t kSplitSeedOffset = 1000;
constexpr std::uint64_t kMetaSeedOffset = 2000;

/// Reads a JSON object as CLI11 configuration. Top-level keys are routed to
/// the subcommand being run; arrays become multi-value options.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* app) : app_(app) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    ordered_json doc;
    try {
      input >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("invalid JSON config: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConversionError("JSON config must be an object");
    std::vector<CLI::ConfigItem> items;
    std::vector<std::string> root;
    if (const auto subs = app_->get_subcommands(); !subs.empty()) root.push_back(subs.front()->get_name());
    collect(doc, root, items);
    return items;
  }

 private:
  const CLI::App* app_;

  static std::string scalar(const ordered_json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const ordered_json& node, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

std::size_t default_jobs() {
  if (const char* env = std::getenv("CALIB_ENSEMBLE_JOBS")) {
    try {
      const long value = std::stol(env);
      if (value >= 1) return static_cast<std::size_t>(value);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

FeatureDataset read_dataset(const std::string& path) {
  if (!fs::exists(path)) throw FileError("dataset not found: " + path);
  if (fs::path(path).extension() == ".csv") return import_csv(path);
  return load_dataset(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FileError("failed writing " + path.string());
}

ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed JSON in {}: {}", path.string(), e.what()), 0);
  }
}

ordered_json history_json(const TrainingHistory& history) {
  ordered_json rows = ordered_json::array();
  for (const auto& r : history) {
    rows.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
                    {"learning_rate", r.learning_rate}});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::string kind = "clusters";
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t samples = 4000;
  std::optional<std::size_t> test_samples;
  double separation = 6.0;
  double noise = 0.0;
  double confidence = 0.8;
  double accuracy = 0.8;
  std::uint64_t seed = 0;
  std::string out = ".";
};

void cmd_gen(const GenOptions& opt, std::ostream& out) {
  const fs::path dir(opt.out);
  if (opt.kind == "clusters") {
    SynthSpec spec;
    spec.classes = opt.classes;
    spec.dim = opt.dim;
    spec.samples = opt.samples;
    spec.cluster_separation = opt.separation;
    spec.label_noise = opt.noise;
    spec.seed = opt.seed;
    spec.validate();
    const std::size_t n_test = opt.test_samples.value_or(opt.samples);
    if (n_test < 1) throw ConfigError("--n-test must be >= 1");
    // Train and test come from one draw so they share cluster centers.
    spec.samples = opt.samples + n_test;
    const FeatureDataset all = synth_clusters(spec);
    std::vector<std::size_t> train_rows(opt.samples);
    std::vector<std::size_t> test_rows(n_test);
    for (std::size_t i = 0; i < opt.samples; ++i) train_rows[i] = i;
    for (std::size_t i = 0; i < n_test; ++i) test_rows[i] = opt.samples + i;
    const FeatureDataset train = all.subset(train_rows, "train");
    const FeatureDataset test = all.subset(test_rows, "test");
    fs::create_directories(dir);
    save_dataset(train, dir / "train.fds");
    save_dataset(test, dir / "test.fds");
    fmt::print(out, "wrote {} ({} samples) and {} ({} samples)\n", (dir / "train.fds").string(), train.size(),
               (dir / "test.fds").string(), test.size());
  } else if (opt.kind == "miscal") {
    MiscalSpec spec;
    spec.samples = opt.samples;
    spec.classes = opt.classes;
    spec.confidence_level = opt.confidence;
    spec.true_accuracy = opt.accuracy;
    spec.seed = opt.seed;
    spec.validate();
    const PredictionSet pred = synth_miscalibrated_predictions(spec);
    const Matrix probs = probabilities_for(pred, spec.classes);
    const FeatureDataset labels(Matrix::Zero(static_cast<Eigen::Index>(pred.size()), 1), pred.labels, spec.classes,
                                "fixture");
    fs::create_directories(dir);
    save_dataset(labels, dir / "test.fds");
    save_probabilities(probs, dir / "head_probs.prb");
    fmt::print(out, "wrote {} and {} ({} samples)\n", (dir / "test.fds").string(),
               (dir / "head_probs.prb").string(), pred.size());
  } else {
    throw ConfigError("--kind must be 'clusters' or 'miscal'");
  }
}

// ---------------------------------------------------------------------------
// train-heads

struct HeadsOptions {
  std::string train;
  std::string out = ".";
  std::size_t m = 5;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::size_t jobs = default_jobs();
  HeadTrainConfig head;
};

ordered_json head_config_json(const HeadTrainConfig& c) {
  return {{"lr", c.initial_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"min_lr", c.min_lr}};
}

std::pair<FeatureDataset, FeatureDataset> training_split(const std::string& path, double val_fraction,
                                                         std::uint64_t seed) {
  const FeatureDataset data = read_dataset(path);
  return split(data, val_fraction, seed + kSplitSeedOffset);
}

void cmd_train_heads(const HeadsOptions& opt, std::ostream& out) {
  if (opt.m < 1) throw ConfigError("--m must be >= 1");
  opt.head.validate();
  const auto [train, val] = training_split(opt.train, opt.val_fraction, opt.seed);
  const auto heads = train_head_family(train, val, opt.m, opt.seed + kHeadSeedOffset, opt.head, opt.jobs);

  ordered_json doc;
  doc["tool"] = "calens";
  doc["version"] = kToolVersion;
  doc["seed"] = opt.seed;
  doc["m"] = opt.m;
  doc["train"] = opt.train;
  doc["val_fraction"] = opt.val_fraction;
  doc["dim"] = train.dim();
  doc["classes"] = train.classes();
  doc["head_config"] = head_config_json(opt.head);
  doc["heads"] = ordered_json::array();
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& h = heads[i];
    double best = h.history.empty() ? 0.0 : h.history.front().val_loss;
    for (const auto& r : h.history) best = std::min(best, r.val_loss);
    doc["heads"].push_back({{"index", i},
                            {"file", fmt::format("head_{}.hdw", i)},
                            {"seed", h.seed},
                            {"params", h.parameter_count()},
                            {"epochs", h.history.size()},
                            {"best_val_loss", best},
                            {"history", history_json(h.history)}});
  }

  const fs::path dir(opt.out);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < heads.size(); ++i) save_head(heads[i], dir / fmt::format("head_{}.hdw", i));
  write_text(dir / "heads.json", doc.dump(2) + "\n");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    fmt::print(out, "head {}: seed {}, {} epochs\n", i, heads[i].seed, heads[i].history.size());
  }
}

// ---------------------------------------------------------------------------
// train-meta / evaluate shared helpers

struct LoadedHeads {
  std::vector<LinearHead> heads;
  ordered_json manifest;
};

LoadedHeads load_head_family(const fs::path& dir) {
  const fs::path manifest_path = dir / "heads.json";
  if (!fs::exists(manifest_path)) throw FileError("missing heads manifest " + manifest_path.string());
  LoadedHeads loaded;
  loaded.manifest = read_json(manifest_path);
  const auto m = loaded.manifest.at("m").get<std::size_t>();
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < m; ++i) {
    const fs::path p = dir / fmt::format("head_{}.hdw", i);
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) throw FileError("missing head files: " + fmt::format("{}", fmt::join(missing, ", ")));
  for (std::size_t i = 0; i < m; ++i) loaded.heads.push_back(load_head(dir / fmt::format("head_{}.hdw", i)));
  return loaded;
}

OutputRepresentation parse_representation(const std::string& name) {
  if (name == "probs") return OutputRepresentation::kProbabilities;
  if (name == "logits") return OutputRepresentation::kLogits;
  throw ConfigError("--meta-input must be 'probs' or 'logits'");
}

HeadOutputs outputs_on(const std::vector<LinearHead>& heads, const Matrix& features, OutputRepresentation rep) {
  std::vector<Matrix> per_head;
  per_head.reserve(heads.size());
  for (const auto& h : heads) {
    if (h.input_dim() != static_cast<std::size_t>(features.cols())) {
      throw DimensionError(fmt::format("head expects {} features, dataset has {}", h.input_dim(), features.cols()));
    }
    Matrix logits = head_predict(h, features);
    per_head.push_back(rep == OutputRepresentation::kLogits ? std::move(logits) : softmax(logits));
  }
  return rep == OutputRepresentation::kLogits ? HeadOutputs::from_logits(std::move(per_head))
                                              : HeadOutputs::from_probabilities(std::move(per_head));
}

std::vector<MetamodelKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<MetamodelKind> kinds;
  for (const auto& name : names) {
    if (name == "all") {
      kinds.assign(std::begin(kAllMetamodelKinds), std::end(kAllMetamodelKinds));
      return kinds;
    }
    const MetamodelKind k = parse_metamodel_kind(name);
    if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
  }
  std::sort(kinds.begin(), kinds.end());
  return kinds;
}

// ---------------------------------------------------------------------------
// train-meta

struct MetaOptions {
  std::string train;
  std::string heads = ".";
  std::optional<std::string> out;
  std::vector<std::string> kinds{"all"};
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::string input = "probs";
  MetaTrainConfig meta;
};

ordered_json meta_config_json(const MetaTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.initial_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"min_lr", c.min_lr},
          {"dropout", c.dropout_p}};
}

void cmd_train_meta(const MetaOptions& opt, std::ostream& out) {
  opt.meta.validate();
  const auto kinds = parse_kinds(opt.kinds);
  if (kinds.empty()) throw ConfigError("no metamodel kind requested");
  const OutputRepresentation rep = parse_representation(opt.input);
  const LoadedHeads family = load_head_family(opt.heads);
  const auto [train, val] = training_split(opt.train, opt.val_fraction, opt.seed);
  const HeadOutputs train_out = outputs_on(family.heads, train.features(), rep);
  const HeadOutputs val_out = outputs_on(family.heads, val.features(), rep);
  const std::size_t m = family.heads.size();
  const std::size_t c = train.classes();

  std::vector<std::pair<Metamodel, ordered_json>> trained;
  for (const MetamodelKind kind : kinds) {
    const std::uint64_t meta_seed = opt.seed + kMetaSeedOffset + static_cast<std::uint64_t>(kind);
    MetaTrainConfig cfg = opt.meta;
    cfg.seed = meta_seed;
    Metamodel meta = build_metamodel(kind, m, c, meta_seed, cfg.dropout_p);
    meta = train_metamodel(std::move(meta), train_out, train.labels(), val_out, val.labels(), cfg);
    ordered_json doc;
    doc["tool"] = "calens";
    doc["version"] = kToolVersion;
    doc["kind"] = std::string(to_string(kind));
    doc["seed"] = opt.seed;
    doc["meta_seed"] = meta_seed;
    doc["m"] = m;
    doc["classes"] = c;
    doc["hidden"] = meta.hidden;
    doc["params"] = meta.parameter_count();
    doc["input"] = opt.input;
    doc["train"] = opt.train;
    doc["val_fraction"] = opt.val_fraction;
    doc["config"] = meta_config_json(cfg);
    doc["history"] = history_json(meta.history);
    trained.emplace_back(std::move(meta), std::move(doc));
  }

  const fs::path dir(opt.out.value_or(opt.heads));
  fs::create_directories(dir);
  for (const auto& [meta, doc] : trained) {
    const std::string name(to_string(meta.kind));
    save_metamodel(meta, dir / fmt::format("meta_{}.mmd", name));
    write_text(dir / fmt::format("meta_{}.json", name), doc.dump(2) + "\n");
    fmt::print(out, "metamodel {}: {} parameters, {} epochs\n", name, meta.parameter_count(), meta.history.size());
  }
}

// ---------------------------------------------------------------------------
// evaluate / report

struct EvalOptions {
  std::string test;
  std::optional<std::string> heads;
  std::vector<std::string> probs;
  std::optional<std::string> meta_dir;
  std::vector<std::string> kinds;
  std::size_t bins = kDefaultBins;
  double norm = 1.0;
  std::string out = ".";
};

struct Row {
  std::string name;
  std::string file_tag;
  std::string group;
  CalibrationReport report;
  std::optional<std::size_t> params;
};

ordered_json row_json(const Row& row) {
  ordered_json j;
  j["name"] = row.name;
  j["group"] = row.group;
  j["accuracy"] = 100.0 * row.report.accuracy;
  j["ece"] = 100.0 * row.report.ece;
  j["mce"] = 100.0 * row.report.mce;
  j["params"] = row.params ? ordered_json(*row.params) : ordered_json(nullptr);
  j["reliability_csv"] = fmt::format("reliability_{}.csv", row.file_tag);
  return j;
}

int row_rank(const ordered_json& row) {
  static const std::map<std::string, int> order{{"Avg.", 1}, {"Vot.", 2}, {"SL", 3},
                                                {"DL", 4},   {"DLL", 5},  {"SLpC", 6}};
  if (row.at("group") == "head") return 0;
  const auto it = order.find(row.at("name").get<std::string>());
  return it == order.end() ? 7 : it->second;
}

std::string format_table(const ordered_json& rows) {
  std::vector<const ordered_json*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ordered_json* a, const ordered_json* b) { return row_rank(*a) < row_rank(*b); });
  std::string table = fmt::format("{:<10}{:>9}{:>9}{:>9}{:>12}\n", "Name", "Acc", "ECE", "MCE", "Params");
  for (const ordered_json* r : sorted) {
    const auto& params = r->at("params");
    const std::string count = params.is_null() ? "-" : std::to_string(params.get<std::size_t>());
    table += fmt::format("{:<10}{:>9.2f}{:>9.2f}{:>9.2f}{:>12}\n", r->at("name").get<std::string>(),
                         r->at("accuracy").get<double>(), r->at("ece").get<double>(), r->at("mce").get<double>(),
                         count);
  }
  return table;
}

void cmd_evaluate(const EvalOptions& opt, std::ostream& out) {
  if (opt.bins < 1) throw ConfigError("--bins must be >= 1");
  if (!(opt.norm >= 1.0)) throw ConfigError("--norm must be >= 1");
  if (opt.heads.has_value() == !opt.probs.empty()) {
    throw ConfigError("pass exactly one of --heads or --probs");
  }
  const FeatureDataset test = read_dataset(opt.test);
  const Labels& labels = test.labels();

  ordered_json config;
  config["test"] = opt.test;
  config["bins"] = opt.bins;
  config["norm"] = opt.norm;

  std::vector<Row> rows;
  auto add_row = [&](std::string name, std::string tag, std::string group, const PredictionSet& pred,
                     std::optional<std::size_t> params) {
    rows.push_back({std::move(name), std::move(tag), std::move(group), calibration_report(pred, opt.bins, opt.norm),
                    params});
  };

  std::optional<HeadOutputs> head_probs;
  std::optional<LoadedHeads> family;
  std::optional<std::size_t> family_params;
  if (opt.heads) {
    family = load_head_family(*opt.heads);
    config["heads_dir"] = *opt.heads;
    config["heads"] = family->manifest;
    config["heads"].erase("heads");
    head_probs = outputs_on(family->heads, test.features(), OutputRepresentation::kProbabilities);
    family_params = 0;
    for (const auto& h : family->heads) *family_params += h.parameter_count();
  } else {
    std::vector<Matrix> per_head;
    std::vector<std::string> missing;
    for (const auto& p : opt.probs) {
      if (!fs::exists(p)) missing.push_back(p);
    }
    if (!missing.empty()) throw FileError(fmt::format("missing probability files: {}", fmt::join(missing, ", ")));
    for (const auto& p : opt.probs) per_head.push_back(load_probabilities(p));
    config["probs"] = opt.probs;
    head_probs = HeadOutputs::from_probabilities(std::move(per_head));
  }
  if (head_probs->samples() != test.size() || head_probs->classes() != test.classes()) {
    throw DimensionError(fmt::format("head outputs are {}x{} but the test set has {} samples and {} classes",
                                     head_probs->samples(), head_probs->classes(), test.size(), test.classes()));
  }

  for (std::size_t i = 0; i < head_probs->heads(); ++i) {
    const std::optional<std::size_t> params =
        family ? std::optional<std::size_t>(family->heads[i].parameter_count()) : std::nullopt;
    add_row(fmt::format("Head {}", i + 1), fmt::format("head_{}", i + 1), "head",
            predictions_from_probs(head_probs->per_head()[i], labels), params);
  }
  add_row("Avg.", "avg", "combiner", combine_average(*head_probs, labels), family_params);
  add_row("Vot.", "vote", "combiner", combine_vote(*head_probs, labels), family_params);

  // Metamodels: requested kinds must exist; without --kind, whatever is present.
  std::vector<MetamodelKind> kinds;
  const fs::path meta_dir(opt.meta_dir.value_or(opt.heads.value_or(".")));
  if (!opt.kinds.empty()) {
    if (!family) throw ConfigError("metamodels need --heads");
    kinds = parse_kinds(opt.kinds);
    std::vector<std::string> missing;
    for (const auto k : kinds) {
      const fs::path p = meta_dir / fmt::format("meta_{}.mmd", to_string(k));
      if (!fs::exists(p)) missing.push_back(p.string());
    }
    if (!missing.empty()) throw FileError(fmt::format("missing metamodel files: {}", fmt::join(missing, ", ")));
  } else if (family) {
    for (const auto k : kAllMetamodelKinds) {
      if (fs::exists(meta_dir / fmt::format("meta_{}.mmd", to_string(k)))) kinds.push_back(k);
    }
  }
  config["metamodels"] = ordered_json::object();
  for (const auto kind : kinds) {
    const std::string name(to_string(kind));
    const Metamodel meta = load_metamodel(meta_dir / fmt::format("meta_{}.mmd", name));
    std::string input = "probs";
    const fs::path sidecar = meta_dir / fmt::format("meta_{}.json", name);
    if (fs::exists(sidecar)) {
      ordered_json side = read_json(sidecar);
      input = side.value("input", input);
      side.erase("history");
      config["metamodels"][name] = side;
    }
    const HeadOutputs inputs = parse_representation(input) == OutputRepresentation::kProbabilities
                                   ? *head_probs
                                   : outputs_on(family->heads, test.features(), OutputRepresentation::kLogits);
    add_row(name, name, "combiner", metamodel_predictions(meta, inputs, labels),
            *family_params + meta.parameter_count());
  }

  ordered_json summary;
  summary["tool"] = "calens";
  summary["version"] = kToolVersion;
  summary["seed"] = family ? family->manifest.value("seed", ordered_json(nullptr)) : ordered_json(nullptr);
  summary["config"] = config;
  summary["sample_count"] = test.size();
  summary["rows"] = ordered_json::array();
  for (const auto& row : rows) summary["rows"].push_back(row_json(row));

  const fs::path dir(opt.out);
  fs::create_directories(dir);
  for (const auto& row : rows) {
    std::ostringstream csv;
    write_reliability_csv(csv, row.report.bins);
    write_text(dir / fmt::format("reliability_{}.csv", row.file_tag), csv.str());
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << format_table(summary["rows"]);
}

void cmd_report(const std::string& path, std::ostream& out) {
  if (!fs::exists(path)) throw FileError("summary not found: " + path);
  const ordered_json summary = read_json(path);
  try {
    out << format_table(summary.at("rows"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed summary {}: {}", path, e.what()), 0);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Classifier-ensemble calibration: seeded heads, combiners, ECE/MCE"};
  app.name(args.empty() ? "calens" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file with option values for the subcommand; flags override it");

  auto with_config = [](CLI::App* sub) { sub->fallthrough(); };

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic datasets or calibration fixtures");
  with_config(gen_cmd);
  gen_cmd->add_option("--kind", gen.kind, "clusters | miscal")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes)->capture_default_str();
  gen_cmd->add_option("--dim", gen.dim)->capture_default_str();
  gen_cmd->add_option("--n", gen.samples, "training samples (fixture size for miscal)")->capture_default_str();
  gen_cmd->add_option("--n-test", gen.test_samples, "test samples (default: --n)");
  gen_cmd->add_option("--sep", gen.separation, "cluster-center radius")->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "label-noise fraction in [0, 1)")->capture_default_str();
  gen_cmd->add_option("--confidence", gen.confidence, "miscal: confidence level")->capture_default_str();
  gen_cmd->add_option("--accuracy", gen.accuracy, "miscal: true accuracy")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->capture_default_str();

  HeadsOptions heads;
  auto* heads_cmd = app.add_subcommand("train-heads", "Train a family of seeded linear heads");
  with_config(heads_cmd);
  heads_cmd->add_option("--train", heads.train, "training features (FDS1 or CSV)")->required();
  heads_cmd->add_option("--out", heads.out, "output directory")->capture_default_str();
  heads_cmd->add_option("--m", heads.m, "number of heads")->capture_default_str();
  heads_cmd->add_option("--seed", heads.seed)->capture_default_str();
  heads_cmd->add_option("--val-fraction", heads.val_fraction)->capture_default_str();
  heads_cmd->add_option("--jobs", heads.jobs, "worker threads (env CALIB_ENSEMBLE_JOBS)")->capture_default_str();
  heads_cmd->add_option("--lr", heads.head.initial_lr)->capture_default_str();
  heads_cmd->add_option("--momentum", heads.head.momentum)->capture_default_str();
  heads_cmd->add_option("--weight-decay", heads.head.weight_decay)->capture_default_str();
  heads_cmd->add_option("--batch-size", heads.head.batch_size)->capture_default_str();
  heads_cmd->add_option("--max-epochs", heads.head.max_epochs)->capture_default_str();
  heads_cmd->add_option("--plateau-factor", heads.head.plateau_factor)->capture_default_str();
  heads_cmd->add_option("--plateau-patience", heads.head.plateau_patience)->capture_default_str();
  heads_cmd->add_option("--early-stop-patience", heads.head.early_stop_patience)->capture_default_str();

  MetaOptions meta;
  auto* meta_cmd = app.add_subcommand("train-meta", "Train metamodels on top of a head family");
  with_config(meta_cmd);
  meta_cmd->add_option("--train", meta.train, "training features (same file as train-heads)")->required();
  meta_cmd->add_option("--heads", meta.heads, "directory holding heads.json and head_*.hdw")->capture_default_str();
  meta_cmd->add_option("--out", meta.out, "output directory (default: --heads)");
  meta_cmd->add_option("--kind", meta.kinds, "SL, DL, DLL, SLpC or all")->capture_default_str();
  meta_cmd->add_option("--seed", meta.seed)->capture_default_str();
  meta_cmd->add_option("--val-fraction", meta.val_fraction)->capture_default_str();
  meta_cmd->add_option("--meta-input", meta.input, "probs | logits")->capture_default_str();
  meta_cmd->add_option("--epochs", meta.meta.epochs)->capture_default_str();
  meta_cmd->add_option("--lr", meta.meta.initial_lr)->capture_default_str();
  meta_cmd->add_option("--momentum", meta.meta.momentum)->capture_default_str();
  meta_cmd->add_option("--weight-decay", meta.meta.weight_decay)->capture_default_str();
  meta_cmd->add_option("--batch-size", meta.meta.batch_size)->capture_default_str();
  meta_cmd->add_option("--plateau-factor", meta.meta.plateau_factor)->capture_default_str();
  meta_cmd->add_option("--plateau-patience", meta.meta.plateau_patience)->capture_default_str();
  meta_cmd->add_option("--dropout", meta.meta.dropout_p)->capture_default_str();

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate heads and combiners on a test set");
  with_config(eval_cmd);
  eval_cmd->add_option("--test", eval.test, "test features (FDS1 or CSV)")->required();
  eval_cmd->add_option("--heads", eval.heads, "directory holding a trained head family");
  eval_cmd->add_option("--probs", eval.probs, "PRB1 files with externally produced head probabilities");
  eval_cmd->add_option("--meta-dir", eval.meta_dir, "directory holding meta_*.mmd (default: --heads)");
  eval_cmd->add_option("--kind", eval.kinds, "metamodels to evaluate (default: all present)");
  eval_cmd->add_option("--bins", eval.bins, "number of equal-width confidence bins")->capture_default_str();
  eval_cmd->add_option("--norm", eval.norm, "norm degree d of the calibration error")->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "output directory")->capture_default_str();

  std::string summary_path;
  auto* report_cmd = app.add_subcommand("report", "Print a summary.json as a table");
  report_cmd->add_option("--summary", summary_path, "summary.json written by evaluate")->required();

  std::vector<std::string> argv_tail(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(argv_tail.begin(), argv_tail.end());
  try {
    app.parse(argv_tail);
  } catch (const CLI::ParseError& e) {
    std::ostringstream usage_out;
    std::ostringstream usage_err;
    const int code = app.exit(e, usage_out, usage_err);
    out << usage_out.str();
    err << usage_err.str();
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (gen_cmd->parsed()) cmd_gen(gen, out);
    if (heads_cmd->parsed()) cmd_train_heads(heads, out);
    if (meta_cmd->parsed()) cmd_train_meta(meta, out);
    if (eval_cmd->parsed()) cmd_evaluate(eval, out);
    if (report_cmd->parsed()) cmd_report(summary_path, out);
  } catch (const Error& e) {
    fmt::print(err, "error: {}\n", e.what());
    switch (e.category()) {
      case Error::Category::kUsage: return kUsageError;
      case Error::Category::kData: return kDataError;
      case Error::Category::kTraining: return kTrainingError;
    }
  } catch (const std::exception& e) {
    fmt::print(err, "internal error: {}\n", e.what());
    return kInternalError;
  }
  return kSuccess;
}

}  // namespace calens::cli
