// Copyright 2026 The kktrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "kktrecon/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "kktrecon/analysis.hpp"
#include "kktrecon/error.hpp"
#include "kktrecon/figures.hpp"

#ifndef KKTRECON_SOURCE_DIR
#define KKTRECON_SOURCE_DIR "."
#endif

namespace kktrecon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// strict JSON reading

class Section {
 public:
  Section(const json& value, std::string path) : value_(value), path_(std::move(path)) {
    if (!value_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return value_.contains(key); }
  Section child(const std::string& key) const { return Section(value_.at(key), field(key)); }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (!value_.contains(key)) return;
    try {
      out = value_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("wrong type for '" + key + "'", field(key));
    }
  }

  template <class T>
  void read_optional(const std::string& key, std::optional<T>& out) const {
    if (!value_.contains(key)) return;
    if (value_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    read(key, v);
    out = v;
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, unused] : value_.items()) {
      (void)unused;
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
        throw ConfigError("unknown key '" + key + "'", field(key));
      }
    }
  }

 private:
  const json& value_;
  std::string path_;
};

// Counts must be non-negative integers; json would silently wrap -1 otherwise.
void read_count(const Section& s, const std::string& key, std::size_t& out) {
  if (!s.has(key)) return;
  double v = 0.0;
  s.read(key, v);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) throw ConfigError("expected a non-negative integer", s.field(key));
  out = static_cast<std::size_t>(v);
}

void read_seed(const Section& s, const std::string& key, std::uint64_t& out) {
  std::size_t v = out;
  read_count(s, key, v);
  out = v;
}

std::string rule_name(LabelRule rule) {
  switch (rule) {
    case LabelRule::OddEven:
      return "odd-even";
    case LabelRule::VehiclesAnimals:
      return "vehicles-animals";
    case LabelRule::Custom:
      return "custom";
  }
  return "custom";
}

void parse_dataset(const Section& s, DatasetManifest& d) {
  s.allow({"source", "images", "labels", "test_images", "test_labels", "rule", "positive_classes",
           "negative_classes", "n", "n_test"});
  std::string text;
  if (s.has("source")) {
    s.read("source", text);
    try {
      d.source = parse_source(text);
    } catch (const ConfigError& e) {
      throw ConfigError(e.message(), s.field("source"));
    }
  }
  std::string path;
  if (s.has("images")) s.read("images", path), d.images = path;
  if (s.has("labels")) s.read("labels", path), d.labels = path;
  if (s.has("test_images")) s.read("test_images", path), d.test_images = path;
  if (s.has("test_labels")) s.read("test_labels", path), d.test_labels = path;
  if (s.has("rule")) {
    s.read("rule", text);
    try {
      d.rule = parse_label_rule(text);
    } catch (const ConfigError& e) {
      throw ConfigError(e.message(), s.field("rule"));
    }
  }
  s.read("positive_classes", d.positive_classes);
  s.read("negative_classes", d.negative_classes);
  read_count(s, "n", d.n);
  read_count(s, "n_test", d.n_test);
}

void parse_model(const Section& s, ExperimentConfig& c) {
  s.allow({"widths", "bias", "first_layer_init_std", "hidden_init_gain"});
  if (s.has("widths")) {
    std::vector<double> widths;
    s.read("widths", widths);
    c.model.widths.clear();
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (!(widths[i] >= 1.0) || widths[i] != std::floor(widths[i])) {
        throw ConfigError("width must be a positive integer", s.field("widths[" + std::to_string(i) + "]"));
      }
      c.model.widths.push_back(static_cast<std::size_t>(widths[i]));
    }
    c.model = ModelSpec::homogeneous(c.model.widths);
  }
  if (s.has("bias")) {
    std::vector<bool> bias;
    s.read("bias", bias);
    c.model.bias = bias;
  }
  s.read("first_layer_init_std", c.training.first_layer_init_std);
  s.read("hidden_init_gain", c.training.hidden_init_gain);
}

void parse_training(const Section& s, TrainConfig& t) {
  s.allow({"learning_rate", "epochs", "loss_stop_threshold", "step_rule", "loss_scale_start", "batch_size",
           "log_every"});
  s.read("learning_rate", t.learning_rate);
  read_count(s, "epochs", t.epochs);
  s.read_optional("loss_stop_threshold", t.loss_stop_threshold);
  if (s.has("step_rule")) {
    std::string text;
    s.read("step_rule", text);
    try {
      t.step_rule = parse_step_rule(text);
    } catch (const ConfigError& e) {
      throw ConfigError(e.message(), s.field("step_rule"));
    }
  }
  s.read("loss_scale_start", t.loss_scale_start);
  read_count(s, "batch_size", t.batch_size);
  read_count(s, "log_every", t.log_every);
}

void parse_hyper(const Section& s, ReconHyper& h) {
  s.allow({"learning_rate", "sigma_x", "alpha", "lambda_min", "w_stationary", "w_lambda", "w_prior", "iterations",
           "momentum"});
  s.read("learning_rate", h.learning_rate);
  s.read("sigma_x", h.sigma_x);
  s.read("alpha", h.alpha);
  s.read("lambda_min", h.lambda_min);
  s.read("w_stationary", h.w_stationary);
  s.read("w_lambda", h.w_lambda);
  s.read("w_prior", h.w_prior);
  read_count(s, "iterations", h.iterations);
  s.read("momentum", h.momentum);
}

void parse_ranges(const Section& s, SweepRanges& r) {
  s.allow({"learning_rate", "sigma_x", "alpha", "lambda_min"});
  auto pair = [&](const char* key, double& lo, double& hi) {
    if (!s.has(key)) return;
    std::vector<double> v;
    s.read(key, v);
    if (v.size() != 2) throw ConfigError("expected [min, max]", s.field(key));
    lo = v[0];
    hi = v[1];
  };
  pair("learning_rate", r.lr_min, r.lr_max);
  pair("sigma_x", r.sigma_min, r.sigma_max);
  pair("alpha", r.alpha_min, r.alpha_max);
  pair("lambda_min", r.lambda_min_min, r.lambda_min_max);
}

void parse_reconstruction(const Section& s, ReconSettings& r) {
  s.allow({"mode", "m", "runs", "hyper", "ranges"});
  if (s.has("mode")) {
    std::string mode;
    s.read("mode", mode);
    if (mode == "sweep") {
      r.mode = ReconSettings::Mode::Sweep;
    } else if (mode == "fixed") {
      r.mode = ReconSettings::Mode::Fixed;
    } else {
      throw ConfigError("mode must be 'sweep' or 'fixed'", s.field("mode"));
    }
  }
  read_count(s, "m", r.m);
  read_count(s, "runs", r.runs);
  if (s.has("hyper")) parse_hyper(s.child("hyper"), r.hyper);
  if (s.has("ranges")) parse_ranges(s.child("ranges"), r.ranges);
}

void parse_analysis(const Section& s, AnalysisSettings& a) {
  s.allow({"vote_ratio", "lambda_threshold", "dedup_radius", "match_radius", "good_ssim", "top_k", "kkt",
           "inversion"});
  s.read("vote_ratio", a.vote_ratio);
  s.read("lambda_threshold", a.lambda_threshold);
  s.read("dedup_radius", a.dedup_radius);
  s.read("match_radius", a.match_radius);
  s.read("good_ssim", a.good_ssim);
  read_count(s, "top_k", a.top_k);
  s.read("kkt", a.kkt);
  if (s.has("inversion")) {
    const Section inv = s.child("inversion");
    inv.allow({"starts", "sigma", "learning_rate", "iterations"});
    read_count(inv, "starts", a.inversion.starts);
    inv.read("sigma", a.inversion.sigma);
    inv.read("learning_rate", a.inversion.learning_rate);
    read_count(inv, "iterations", a.inversion.iterations);
  }
}

// ---------------------------------------------------------------------------
// run directory helpers

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path absolute_or_empty(const fs::path& p, const fs::path& base) {
  if (p.empty()) return p;
  return p.is_absolute() ? p : fs::weakly_canonical(base / p);
}

DatasetManifest resolved_manifest(const ExperimentConfig& c) {
  DatasetManifest d = c.dataset;
  d.seed = c.seed;
  d.images = absolute_or_empty(d.images, c.base_dir);
  d.labels = absolute_or_empty(d.labels, c.base_dir);
  d.test_images = absolute_or_empty(d.test_images, c.base_dir);
  d.test_labels = absolute_or_empty(d.test_labels, c.base_dir);
  return d;
}

void record_step(const RunPaths& paths, const ExperimentConfig& config, const std::string& step, const json& summary) {
  json run = json::object();
  if (fs::exists(paths.run())) {
    try {
      run = read_json_file(paths.run());
    } catch (const Error&) {
      run = json::object();
    }
  }
  run["format_version"] = kFormatVersion;
  ExperimentConfig stored = config;
  const DatasetManifest resolved = resolved_manifest(config);
  stored.dataset.images = resolved.images;
  stored.dataset.labels = resolved.labels;
  stored.dataset.test_images = resolved.test_images;
  stored.dataset.test_labels = resolved.test_labels;
  run["config"] = stored.to_json();
  run["steps"][step] = summary;
  write_json_file(paths.run(), run);
}

void say(const StepLog& log, const std::string& msg) {
  if (log) log(msg);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

bool is_planar(const LabeledDataset& ds) { return ds.dim() == 2; }

std::string rebase(const std::string& field, const std::string& from, const std::string& to) {
  return field.rfind(from, 0) == 0 ? to + field.substr(from.size()) : to + field;
}

std::size_t candidates_per_run(const ExperimentConfig& c, std::size_t n) {
  return c.reconstruction.m != 0 ? c.reconstruction.m : 2 * n;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

ExperimentConfig ExperimentConfig::from_json(const json& value) {
  ExperimentConfig c;
  const Section root(value, "");
  root.allow({"name", "seed", "workers", "dataset", "model", "training", "reconstruction", "analysis"});
  root.read("name", c.name);
  read_seed(root, "seed", c.seed);
  read_count(root, "workers", c.workers);
  if (root.has("dataset")) parse_dataset(root.child("dataset"), c.dataset);
  if (!root.has("model")) throw ConfigError("the model section is required", "model");
  parse_model(root.child("model"), c);
  if (c.model.widths.empty()) throw ConfigError("widths are required", "model.widths");
  if (root.has("training")) parse_training(root.child("training"), c.training);
  if (root.has("reconstruction")) parse_reconstruction(root.child("reconstruction"), c.reconstruction);
  if (root.has("analysis")) parse_analysis(root.child("analysis"), c.analysis);
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  const ReconHyper& h = reconstruction.hyper;
  const SweepRanges& r = reconstruction.ranges;
  json j = {
      {"name", name},
      {"seed", seed},
      {"workers", workers},
      {"dataset",
       {{"source", source_tag(dataset.source)},
        {"images", dataset.images.string()},
        {"labels", dataset.labels.string()},
        {"test_images", dataset.test_images.string()},
        {"test_labels", dataset.test_labels.string()},
        {"rule", rule_name(dataset.rule)},
        {"positive_classes", dataset.positive_classes},
        {"negative_classes", dataset.negative_classes},
        {"n", dataset.n},
        {"n_test", dataset.n_test}}},
      {"model",
       {{"widths", model.widths},
        {"bias", model.bias},
        {"first_layer_init_std", training.first_layer_init_std},
        {"hidden_init_gain", training.hidden_init_gain}}},
      {"training",
       {{"learning_rate", training.learning_rate},
        {"epochs", training.epochs},
        {"loss_stop_threshold",
         training.loss_stop_threshold ? json(*training.loss_stop_threshold) : json(nullptr)},
        {"step_rule", step_rule_tag(training.step_rule)},
        {"loss_scale_start", training.loss_scale_start},
        {"batch_size", training.batch_size},
        {"log_every", training.log_every}}},
      {"reconstruction",
       {{"mode", reconstruction.mode == ReconSettings::Mode::Sweep ? "sweep" : "fixed"},
        {"m", reconstruction.m},
        {"runs", reconstruction.runs},
        {"hyper",
         {{"learning_rate", h.learning_rate},
          {"sigma_x", h.sigma_x},
          {"alpha", h.alpha},
          {"lambda_min", h.lambda_min},
          {"w_stationary", h.w_stationary},
          {"w_lambda", h.w_lambda},
          {"w_prior", h.w_prior},
          {"iterations", h.iterations},
          {"momentum", h.momentum}}},
        {"ranges",
         {{"learning_rate", {r.lr_min, r.lr_max}},
          {"sigma_x", {r.sigma_min, r.sigma_max}},
          {"alpha", {r.alpha_min, r.alpha_max}},
          {"lambda_min", {r.lambda_min_min, r.lambda_min_max}}}}}},
      {"analysis",
       {{"vote_ratio", analysis.vote_ratio},
        {"lambda_threshold", analysis.lambda_threshold},
        {"dedup_radius", analysis.dedup_radius},
        {"match_radius", analysis.match_radius},
        {"good_ssim", analysis.good_ssim},
        {"top_k", analysis.top_k},
        {"kkt", analysis.kkt},
        {"inversion",
         {{"starts", analysis.inversion.starts},
          {"sigma", analysis.inversion.sigma},
          {"learning_rate", analysis.inversion.learning_rate},
          {"iterations", analysis.inversion.iterations}}}}}};
  return j;
}

void ExperimentConfig::validate() const {
  if (workers == 0) throw ConfigError("workers must be at least 1", "workers");
  try {
    model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), "model." + e.field());
  }
  if (dataset.source == DatasetManifest::Source::Circle2d && model.input_dim() != 2) {
    throw ConfigError("the circle dataset is 2-dimensional", "model.widths[0]");
  }
  if (dataset.n == 0 || dataset.n % 2 != 0) throw ConfigError("n must be even and positive", "dataset.n");
  if (dataset.n_test % 2 != 0) throw ConfigError("n_test must be even", "dataset.n_test");
  if (dataset.source != DatasetManifest::Source::Circle2d && dataset.images.empty()) {
    throw ConfigError("image source needs a path", "dataset.images");
  }
  if (dataset.rule == LabelRule::Custom && (dataset.positive_classes.empty() || dataset.negative_classes.empty())) {
    throw ConfigError("custom rule needs both class lists", "dataset.positive_classes");
  }
  try {
    training.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), e.field().rfind("training.", 0) == 0 ? e.field() : "training." + e.field());
  }
  try {
    reconstruction.hyper.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), rebase(e.field(), "reconstruction.", "reconstruction.hyper."));
  }
  try {
    reconstruction.ranges.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), rebase(e.field(), "reconstruction.sweep.", "reconstruction.ranges."));
  }
  if (reconstruction.runs == 0) throw ConfigError("runs must be at least 1", "reconstruction.runs");
  const std::size_t m = reconstruction.m != 0 ? reconstruction.m : 2 * dataset.n;
  if (m % 2 != 0) throw ConfigError("m must be even", "reconstruction.m");
  if (m < 2 * dataset.n) throw ConfigError("m must be at least 2n", "reconstruction.m");
  if (!(analysis.vote_ratio > 0.0 && analysis.vote_ratio <= 1.0)) {
    throw ConfigError("vote_ratio must lie in (0, 1]", "analysis.vote_ratio");
  }
  if (!(analysis.dedup_radius >= 0.0)) throw ConfigError("must be non-negative", "analysis.dedup_radius");
  if (!(analysis.match_radius > 0.0)) throw ConfigError("must be positive", "analysis.match_radius");
  if (analysis.inversion.starts == 0) throw ConfigError("need at least one start", "analysis.inversion.starts");
  if (!(analysis.inversion.sigma >= 0.0)) throw ConfigError("must be non-negative", "analysis.inversion.sigma");
  if (!(analysis.inversion.learning_rate >= 0.0)) {
    throw ConfigError("must be non-negative", "analysis.inversion.learning_rate");
  }
}

fs::path default_data_root() {
  if (const char* env = std::getenv("KKTRECON_DATA_DIR"); env != nullptr && *env != '\0') return fs::path(env);
  return fs::path(KKTRECON_SOURCE_DIR) / "data";
}

std::vector<std::string> preset_names() { return {"circle2d", "mnist-odd-even", "cifar-vehicles-animals"}; }

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.base_dir = default_data_root();
  c.training.learning_rate = 0.01;
  c.training.first_layer_init_std = 1e-4;
  c.training.hidden_init_gain = 1.0;
  c.training.loss_stop_threshold = 1e-6;
  if (name == "circle2d") {
    c.dataset.source = DatasetManifest::Source::Circle2d;
    c.dataset.n = 20;
    c.model = ModelSpec::homogeneous({2, 1000, 1000, 1});
    c.training.epochs = 1'000'000;
    c.training.step_rule = TrainConfig::StepRule::LossScaled;
    c.reconstruction.mode = ReconSettings::Mode::Fixed;
    c.reconstruction.m = 100;
    c.reconstruction.runs = 1;
    c.reconstruction.hyper.learning_rate = 1e-6;
    c.reconstruction.hyper.sigma_x = 0.1;
    c.reconstruction.hyper.alpha = 100.0;
    c.reconstruction.hyper.lambda_min = 0.01;
    c.reconstruction.hyper.w_prior = 0.0;
    c.reconstruction.hyper.iterations = 10'000;
    c.analysis.inversion = {40, 0.1, 1e-3, 1000};
  } else if (name == "mnist-odd-even") {
    c.dataset.source = DatasetManifest::Source::Idx;
    c.dataset.images = "mnist5k/train-images-idx3-ubyte";
    c.dataset.labels = "mnist5k/train-labels-idx1-ubyte";
    c.dataset.test_images = "mnist5k/test-images-idx3-ubyte";
    c.dataset.test_labels = "mnist5k/test-labels-idx1-ubyte";
    c.dataset.rule = LabelRule::OddEven;
    c.dataset.n = 100;
    c.dataset.n_test = 800;
    c.model = ModelSpec::homogeneous({784, 100, 100, 1});
    c.training.epochs = 100'000;
    c.training.step_rule = TrainConfig::StepRule::Constant;
    c.reconstruction.mode = ReconSettings::Mode::Sweep;
    c.reconstruction.runs = 16;
    c.reconstruction.hyper.iterations = 4'000;
    // stable band for momentum SGD on this net; lr >= 1e-4 blows up in ~10 steps
    c.reconstruction.ranges.lr_min = 5e-6;
    c.reconstruction.ranges.lr_max = 2.5e-5;
    c.reconstruction.ranges.sigma_min = 1e-4;
    c.reconstruction.ranges.sigma_max = 1e-2;
    c.reconstruction.ranges.alpha_min = 20.0;
    c.reconstruction.ranges.alpha_max = 60.0;
    c.reconstruction.ranges.lambda_min_min = 1e-3;
    c.reconstruction.ranges.lambda_min_max = 0.1;
    c.analysis.inversion = {20, 1e-3, 1e-2, 1000};
  } else if (name == "cifar-vehicles-animals") {
    c.dataset.source = DatasetManifest::Source::FlatF32;
    c.dataset.images = "cifar10/train.json";
    c.dataset.test_images = "cifar10/test.json";
    c.dataset.rule = LabelRule::VehiclesAnimals;
    c.dataset.n = 100;
    c.dataset.n_test = 800;
    c.model = ModelSpec::homogeneous({3072, 100, 100, 1});
    c.training.epochs = 100'000;
    c.training.step_rule = TrainConfig::StepRule::Constant;
    c.reconstruction.mode = ReconSettings::Mode::Sweep;
    c.reconstruction.runs = 16;
    c.reconstruction.hyper.iterations = 4'000;
    c.reconstruction.ranges.lr_min = 1e-6;
    c.reconstruction.ranges.lr_max = 2.5e-5;
    c.reconstruction.ranges.sigma_min = 1e-4;
    c.reconstruction.ranges.sigma_max = 1e-2;
    c.reconstruction.ranges.alpha_min = 20.0;
    c.reconstruction.ranges.alpha_max = 60.0;
    c.reconstruction.ranges.lambda_min_min = 1e-3;
    c.reconstruction.ranges.lambda_min_max = 0.1;
    c.analysis.inversion = {20, 1e-3, 1e-2, 1000};
  } else {
    std::string known;
    for (const auto& p : preset_names()) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")", "preset");
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const json value = read_json_file(path);
  ExperimentConfig c = ExperimentConfig::from_json(value);
  c.base_dir = fs::absolute(path).parent_path();
  return c;
}

// ---------------------------------------------------------------------------
// steps

TrainedRun load_trained_run(const ExperimentConfig& config, const RunPaths& paths) {
  TrainedRun run;
  run.config = config;
  const DatasetManifest manifest = fs::exists(paths.dataset()) ? load_dataset_manifest(paths.dataset())
                                                               : resolved_manifest(config);
  run.data = materialize_dataset(manifest, config.base_dir);
  if (!fs::exists(paths.checkpoint())) {
    throw ConfigError("no checkpoint in " + paths.root.string() + "; run 'train' first", "out");
  }
  run.checkpoint = load_checkpoint(paths.checkpoint());
  const std::uint64_t fp = run.data.train.fingerprint();
  if (run.checkpoint.dataset_fingerprint != fp) {
    throw ConfigError("checkpoint was trained on dataset " + hex64(run.checkpoint.dataset_fingerprint) +
                          " but the manifest yields " + hex64(fp),
                      "dataset");
  }
  if (!(run.checkpoint.spec == config.model)) {
    throw ConfigError("checkpoint architecture differs from the configuration", "model.widths");
  }
  return run;
}

json step_train(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log) {
  config.validate();
  fs::create_directories(paths.root);
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetManifest manifest = resolved_manifest(config);
  const NormalizedPair data = materialize_dataset(manifest, config.base_dir);
  if (data.train.dim() != config.model.input_dim()) {
    throw ConfigError("input width " + std::to_string(config.model.input_dim()) + " but samples have dimension " +
                          std::to_string(data.train.dim()),
                      "model.widths[0]");
  }
  say(log, "dataset " + data.train.name + ": n=" + std::to_string(data.train.size()) +
               " d=" + std::to_string(data.train.dim()) + " test=" + std::to_string(data.test.size()));

  TrainConfig tc = config.training;
  tc.seed = config.seed;
  const ParamVector theta0 = init_params(config.model, tc, tc.seed);
  const TrainResult result = train_full_batch(config.model, theta0, data.train, tc, [&](const TrainRecord& r) {
    std::ostringstream s;
    s << "epoch " << r.epoch << " loss " << r.loss << " error " << r.error << " min-margin " << r.min_margin
      << " |theta| " << r.param_norm;
    say(log, s.str());
  });

  Checkpoint ck;
  ck.spec = config.model;
  ck.theta = result.theta;
  ck.seed = tc.seed;
  ck.optimizer = {{"learning_rate", tc.learning_rate},
                  {"step_rule", step_rule_tag(tc.step_rule)},
                  {"loss_scale_start", tc.loss_scale_start},
                  {"batch_size", tc.batch_size},
                  {"first_layer_init_std", tc.first_layer_init_std},
                  {"hidden_init_gain", tc.hidden_init_gain}};
  ck.epochs = result.epochs_run;
  ck.final_loss = result.final_loss;
  ck.dataset_fingerprint = data.train.fingerprint();
  ck.dataset_name = data.train.name;
  save_checkpoint(paths.checkpoint(), ck);
  result.log.write_csv(paths.train_log());
  DatasetManifest saved = manifest;
  saved.fingerprint = ck.dataset_fingerprint;
  saved.name = data.train.name;
  save_dataset_manifest(paths.dataset(), saved, data.mean);

  const Evaluation train_eval = evaluate(config.model, result.theta, data.train);
  json summary = {{"epochs_run", result.epochs_run},
                  {"final_loss", result.final_loss},
                  {"reached_threshold", result.reached_threshold},
                  {"train_accuracy", train_eval.accuracy},
                  {"min_margin", train_eval.min_margin},
                  {"max_margin", train_eval.max_margin},
                  {"param_norm", result.log.records.empty() ? 0.0 : result.log.records.back().param_norm},
                  {"dataset_fingerprint", hex64(ck.dataset_fingerprint)},
                  {"seconds", seconds_since(t0)}};
  if (!data.test.empty()) summary["test_accuracy"] = evaluate(config.model, result.theta, data.test).accuracy;
  record_step(paths, config, "train", summary);
  return summary;
}

json step_reconstruct(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainedRun run = load_trained_run(config, paths);
  const std::size_t m = candidates_per_run(config, run.data.train.size());
  const ReconSettings& rs = config.reconstruction;
  auto on_done = [&](const PoolRun& r) {
    std::ostringstream s;
    s << "run " << r.run_id << (r.failed ? " FAILED (" + r.failure + ")" : "") << " lr " << r.hyper.learning_rate
      << " sigma_x " << r.hyper.sigma_x << " alpha " << r.hyper.alpha << " lambda_min " << r.hyper.lambda_min
      << " loss " << r.final_loss.total << " (stationary " << r.final_loss.stationary << ")";
    say(log, s.str());
  };
  CandidatePool pool;
  if (rs.mode == ReconSettings::Mode::Sweep) {
    SweepRanges ranges = rs.ranges;
    ranges.runs = rs.runs;
    pool = run_sweep(run.checkpoint.spec, run.checkpoint.theta, ranges, rs.hyper, m, config.seed, config.workers,
                     on_done);
  } else {
    pool = run_fixed(run.checkpoint.spec, run.checkpoint.theta, rs.hyper, rs.runs, m, config.seed, config.workers,
                     on_done);
  }
  save_pool(paths.pool(), pool);
  std::size_t failed = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : pool.runs) {
    if (r.failed) {
      ++failed;
    } else {
      best = std::min(best, r.final_loss.total);
    }
  }
  json summary = {{"runs", pool.runs.size()},
                  {"failed_runs", failed},
                  {"m", m},
                  {"candidates", pool.candidate_count()},
                  {"best_total_loss", std::isfinite(best) ? json(best) : json(nullptr)},
                  {"seconds", seconds_since(t0)}};
  record_step(paths, config, "reconstruct", summary);
  return summary;
}

namespace {

json kkt_summary(const KktDiagnostic& d) {
  double max_lambda = 0.0, min_margin = std::numeric_limits<double>::infinity();
  for (double l : d.lambda) max_lambda = std::max(max_lambda, l);
  for (double q : d.margins) min_margin = std::min(min_margin, q);
  bool nonneg = true;
  for (double l : d.lambda) nonneg = nonneg && l >= 0.0;
  // samples far from the margin should carry (almost) no weight
  std::size_t far = 0, far_violations = 0;
  for (std::size_t i = 0; i < d.lambda.size(); ++i) {
    if (d.margins[i] > 1.5 * min_margin) {
      ++far;
      if (d.lambda[i] >= 1e-2 * max_lambda) ++far_violations;
    }
  }
  return {{"relative_residual", d.relative_residual},
          {"converged", d.converged},
          {"iterations", d.iterations},
          {"projected_gradient", d.projected_gradient},
          {"lambda_nonnegative", nonneg},
          {"max_lambda", max_lambda},
          {"min_margin", min_margin},
          {"far_from_margin", far},
          {"far_from_margin_with_weight", far_violations},
          {"lambda", d.lambda},
          {"margins", d.margins}};
}

SvgSeries points_series(const std::string& label, const std::string& color, const Matrix& pts,
                        std::span<const std::size_t> rows, SvgSeries::Marker marker = SvgSeries::Marker::Dot) {
  SvgSeries s;
  s.label = label;
  s.color = color;
  s.marker = marker;
  for (std::size_t k : rows) {
    s.xs.push_back(pts(k, 0));
    s.ys.push_back(pts(k, 1));
  }
  return s;
}

std::vector<std::size_t> rows_where(std::size_t count, const std::function<bool(std::size_t)>& pred) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (pred(i)) out.push_back(i);
  }
  return out;
}

void set_range(SvgPanel& p, double lo, double hi) {
  p.auto_range = false;
  p.x_min = p.y_min = lo;
  p.x_max = p.y_max = hi;
}

json analyze_planar(const TrainedRun& run, const CandidatePool& pool, const RunPaths& paths) {
  const ExperimentConfig& c = run.config;
  const LabeledDataset& train = run.data.train;
  const AnalysisSettings& a = c.analysis;
  std::vector<const PoolRun*> ok;
  for (const auto& r : pool.runs) {
    if (!r.failed) ok.push_back(&r);
  }
  const Matrix cand = pool.candidates(false);
  const std::vector<double> lam = pool.lambdas(false);
  std::vector<double> labels;
  Matrix init(cand.rows(), 2);
  std::size_t row = 0;
  for (const PoolRun* r : ok) {
    const ReconState s0 = init_recon_state(pool.m, pool.dim, r->hyper.sigma_x, r->seed ^ 0x5eedull);
    for (std::size_t i = 0; i < pool.m; ++i, ++row) {
      init(row, 0) = s0.x(i, 0);
      init(row, 1) = s0.x(i, 1);
      labels.push_back(r->state.y[i]);
    }
  }
  const std::vector<std::size_t> kept = dedup_2d(cand, lam, a.lambda_threshold, a.dedup_radius, c.seed);
  const auto all = rows_where(cand.rows(), [](std::size_t) { return true; });
  const auto filtered = rows_where(cand.rows(), [&](std::size_t k) { return lam[k] >= a.lambda_threshold; });
  const std::size_t recovered = count_recovered(train, cand, kept, a.match_radius);
  const std::size_t recovered_all = count_recovered(train, cand, all, a.match_radius);

  // figure: data, model output, initial, final, lambda-filtered, deduplicated
  const auto pos_train = rows_where(train.size(), [&](std::size_t i) { return train.y[i] > 0; });
  const auto neg_train = rows_where(train.size(), [&](std::size_t i) { return train.y[i] < 0; });
  auto split = [&](std::span<const std::size_t> rows, bool positive) {
    std::vector<std::size_t> out;
    for (std::size_t k : rows) {
      if ((labels[k] > 0) == positive) out.push_back(k);
    }
    return out;
  };
  auto with_train = [&](SvgPanel p) {
    p.series.insert(p.series.begin(), points_series("", "#1f4fd1", train.x, neg_train, SvgSeries::Marker::Cross));
    p.series.insert(p.series.begin(), points_series("", "#d62728", train.x, pos_train, SvgSeries::Marker::Cross));
    return p;
  };
  std::vector<SvgPanel> panels(6);
  panels[0].title = "training data";
  panels[0].series = {points_series("+1", "#d62728", train.x, pos_train, SvgSeries::Marker::Cross),
                      points_series("-1", "#1f4fd1", train.x, neg_train, SvgSeries::Marker::Cross)};
  panels[1].title = "model output";
  {
    const std::size_t g = 60;
    Matrix grid(g * g, 2);
    for (std::size_t r = 0; r < g; ++r) {
      for (std::size_t q = 0; q < g; ++q) {
        grid(r * g + q, 0) = -1.5 + 3.0 * (q + 0.5) / g;
        grid(r * g + q, 1) = 1.5 - 3.0 * (r + 0.5) / g;
      }
    }
    panels[1].heatmap = {g, g, forward_batch(run.checkpoint.spec, run.checkpoint.theta, grid)};
    panels[1] = with_train(panels[1]);
  }
  panels[2].title = "initial candidates";
  panels[2].series = {points_series("y=+1", "#c2185b", init, split(all, true)),
                      points_series("y=-1", "#2e7d32", init, split(all, false))};
  panels[2] = with_train(panels[2]);
  panels[3].title = "after optimization";
  panels[3].series = {points_series("y=+1", "#c2185b", cand, split(all, true)),
                      points_series("y=-1", "#2e7d32", cand, split(all, false))};
  panels[3] = with_train(panels[3]);
  std::ostringstream thr;
  thr << a.lambda_threshold;
  panels[4].title = "lambda >= " + thr.str();
  panels[4].series = {points_series("y=+1", "#c2185b", cand, split(filtered, true)),
                      points_series("y=-1", "#2e7d32", cand, split(filtered, false))};
  panels[4] = with_train(panels[4]);
  panels[5].title = "deduplicated";
  panels[5].series = {points_series("y=+1", "#c2185b", cand, split(kept, true)),
                      points_series("y=-1", "#2e7d32", cand, split(kept, false))};
  panels[5] = with_train(panels[5]);
  panels[2].title += " (sigma_x " + std::to_string(ok.empty() ? 0.0 : ok.front()->hyper.sigma_x).substr(0, 6) + ")";
  for (auto& p : panels) set_range(p, -1.5, 1.5);
  write_svg(paths.analysis() / "figure_2d.svg", panels, 3);

  std::ofstream csv(paths.analysis() / "points_2d.csv");
  csv << "index,x0,x1,label,lambda,init_x0,init_x1,kept\n";
  std::vector<char> is_kept(cand.rows(), 0);
  for (std::size_t k : kept) is_kept[k] = 1;
  csv.precision(10);
  for (std::size_t k = 0; k < cand.rows(); ++k) {
    csv << k << "," << cand(k, 0) << "," << cand(k, 1) << "," << labels[k] << "," << lam[k] << "," << init(k, 0)
        << "," << init(k, 1) << "," << int(is_kept[k]) << "\n";
  }

  return {{"candidates", cand.rows()},
          {"above_lambda_threshold", filtered.size()},
          {"survivors", kept.size()},
          {"recovered", recovered},
          {"recovered_unfiltered", recovered_all},
          {"train_size", train.size()}};
}

json analyze_images(const TrainedRun& run, const CandidatePool& pool, const RunPaths& paths) {
  const ExperimentConfig& c = run.config;
  const LabeledDataset& train = run.data.train;
  const AnalysisSettings& a = c.analysis;
  const Evaluation ev = evaluate(run.checkpoint.spec, run.checkpoint.theta, train);
  const Matrix cand = pool.candidates(false);
  if (cand.rows() == 0) throw NumericalError("every reconstruction run failed", 0);
  const MatchReport report = match_and_vote(train, cand, ev.margins, a.vote_ratio, c.workers);
  {
    std::ofstream csv(paths.analysis() / "matches.csv");
    csv << report.to_csv();
  }
  // top-K pairs: training sample above its voted reconstruction
  const std::size_t k = std::min(a.top_k, report.records.size());
  const std::size_t cols = std::min<std::size_t>(10, std::max<std::size_t>(1, k));
  std::vector<std::vector<double>> tiles;
  for (std::size_t start = 0; start < k; start += cols) {
    const std::size_t end = std::min(k, start + cols);
    for (std::size_t r = start; r < end; ++r) tiles.push_back(scale_to_unit(train.denormalized(report.records[r].train_index)));
    for (std::size_t r = end; r < start + cols; ++r) tiles.emplace_back(train.dim(), 1.0);
    for (std::size_t r = start; r < end; ++r) tiles.push_back(report.records[r].voted);
    for (std::size_t r = end; r < start + cols; ++r) tiles.emplace_back(train.dim(), 1.0);
  }
  const std::string ext = train.shape.channels == 3 ? ".ppm" : ".pgm";
  if (!tiles.empty() && (train.shape.channels == 1 || train.shape.channels == 3)) {
    write_image_grid(paths.analysis() / ("top_matches" + ext), tiles, train.shape, cols, 2);
  }

  const auto scatter = scatter_margin_vs_ssim(run.checkpoint.spec, run.checkpoint.theta, train, report);
  SvgPanel panel;
  panel.title = "SSIM vs model output";
  panel.x_label = "y * Phi(x)";
  panel.y_label = "SSIM (voted)";
  SvgSeries good, rest;
  good.label = "SSIM > " + std::to_string(a.good_ssim).substr(0, 4);
  good.color = "#d62728";
  rest.label = "other";
  rest.color = "#555555";
  for (const auto& r : scatter) {
    SvgSeries& s = r.ssim > a.good_ssim ? good : rest;
    s.xs.push_back(r.output);
    s.ys.push_back(r.ssim);
  }
  panel.series = {rest, good};
  const SvgPanel panels[] = {panel};
  write_svg(paths.analysis() / "ssim_vs_output.svg", panels, 1, 420.0);

  // margin quartile of the good reconstructions
  std::vector<double> sorted = ev.margins;
  std::sort(sorted.begin(), sorted.end());
  const double q1 = sorted[(sorted.size() - 1) / 4];
  std::size_t good_count = 0, good_low = 0;
  for (const auto& r : report.records) {
    if (r.ssim_voted > a.good_ssim) {
      ++good_count;
      if (r.output <= q1) ++good_low;
    }
  }
  return {{"candidates", cand.rows()},
          {"good_reconstructions", good_count},
          {"good_in_lowest_quartile", good_low},
          {"lowest_quartile_output", q1},
          {"best_ssim", report.records.empty() ? 0.0 : report.records.front().ssim_voted},
          {"top_ssim",
           [&] {
             std::vector<double> v;
             for (std::size_t r = 0; r < k; ++r) v.push_back(report.records[r].ssim_voted);
             return v;
           }()}};
}

}  // namespace

json step_analyze(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainedRun run = load_trained_run(config, paths);
  if (!fs::exists(paths.pool())) throw ConfigError("no pool in " + paths.root.string() + "; run 'reconstruct'", "out");
  const CandidatePool pool = load_pool(paths.pool());
  if (pool.dim != run.data.train.dim()) throw ConfigError("pool dimension differs from the dataset", "pool");
  fs::create_directories(paths.analysis());

  json summary;
  if (config.analysis.kkt) {
    say(log, "solving the KKT non-negative least squares problem");
    const KktDiagnostic kkt = kkt_residual(run.checkpoint.spec, run.checkpoint.theta, run.data.train);
    json k = kkt_summary(kkt);
    k["objective_trace"] = kkt.objective_trace;
    write_json_file(paths.analysis() / "kkt.json", k);
    k.erase("lambda");
    k.erase("margins");
    summary["kkt"] = k;
  }
  say(log, "matching " + std::to_string(pool.candidate_count()) + " candidates");
  summary["matching"] = is_planar(run.data.train) ? analyze_planar(run, pool, paths) : analyze_images(run, pool, paths);
  summary["seconds"] = seconds_since(t0);
  write_json_file(paths.analysis() / "summary.json", summary);
  record_step(paths, config, "analyze", summary);
  return summary;
}

InversionSweep run_inversion_sweep(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& train,
                                   const InversionSettings& s, double radius, std::uint64_t seed) {
  InversionSweep out;
  out.points = Matrix(s.starts, spec.input_dim());
  for (std::size_t k = 0; k < s.starts; ++k) {
    const int sign = (k % 2 == 0) ? 1 : -1;
    const InversionResult r =
        model_inversion_baseline(spec, theta, s.sigma, s.learning_rate, s.iterations, sign, run_seed(seed, k));
    std::copy(r.x.begin(), r.x.end(), out.points.row(k).begin());
    out.signs.push_back(sign);
    out.final_outputs.push_back(r.final_output);
  }
  std::vector<std::size_t> rows(s.starts);
  for (std::size_t k = 0; k < s.starts; ++k) rows[k] = k;
  out.recovered = count_recovered(train, out.points, rows, radius);
  return out;
}

json step_invert(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainedRun run = load_trained_run(config, paths);
  fs::create_directories(paths.analysis());
  const InversionSettings& s = config.analysis.inversion;
  say(log, "model inversion from " + std::to_string(s.starts) + " starts");
  const InversionSweep sweep = run_inversion_sweep(run.checkpoint.spec, run.checkpoint.theta, run.data.train, s,
                                                   config.analysis.match_radius, config.seed);
  const LabeledDataset& train = run.data.train;
  json summary = {{"starts", s.starts}, {"final_outputs", sweep.final_outputs}};
  if (is_planar(train)) {
    summary["recovered"] = sweep.recovered;
    SvgPanel p;
    p.title = "model inversion";
    const auto pos = rows_where(train.size(), [&](std::size_t i) { return train.y[i] > 0; });
    const auto neg = rows_where(train.size(), [&](std::size_t i) { return train.y[i] < 0; });
    const auto up = rows_where(s.starts, [&](std::size_t k) { return sweep.signs[k] > 0; });
    const auto down = rows_where(s.starts, [&](std::size_t k) { return sweep.signs[k] < 0; });
    p.series = {points_series("", "#d62728", train.x, pos, SvgSeries::Marker::Cross),
                points_series("", "#1f4fd1", train.x, neg, SvgSeries::Marker::Cross),
                points_series("maximize", "#c2185b", sweep.points, up),
                points_series("minimize", "#2e7d32", sweep.points, down)};
    set_range(p, -1.5, 1.5);
    const SvgPanel panels[] = {p};
    write_svg(paths.analysis() / "inversion_2d.svg", panels, 1);
  } else {
    // order by output, smallest first
    std::vector<std::size_t> order(s.starts);
    for (std::size_t k = 0; k < s.starts; ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return sweep.final_outputs[a] < sweep.final_outputs[b]; });
    std::vector<std::vector<double>> tiles;
    for (std::size_t k : order) {
      std::vector<double> img(sweep.points.row(k).begin(), sweep.points.row(k).end());
      for (std::size_t j = 0; j < img.size(); ++j) img[j] += run.data.mean[j];
      tiles.push_back(scale_to_unit(img));
    }
    const std::string ext = train.shape.channels == 3 ? ".ppm" : ".pgm";
    write_image_grid(paths.analysis() / ("inversion" + ext), tiles, train.shape, 10, 2);
  }
  summary["seconds"] = seconds_since(t0);
  record_step(paths, config, "invert", summary);
  return summary;
}

json step_weights(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log) {
  const TrainedRun run = load_trained_run(config, paths);
  fs::create_directories(paths.analysis());
  const LabeledDataset& train = run.data.train;
  const LayerLayout first = run.checkpoint.spec.layout().front();
  say(log, "exporting " + std::to_string(first.out) + " first-layer weight vectors");
  json summary = {{"count", first.out}};
  if (is_planar(train)) {
    // raw directions; scaling to [0, 1] is meaningless for 2-vectors
    Matrix w(first.out, 2);
    for (std::size_t u = 0; u < first.out; ++u) {
      w(u, 0) = run.checkpoint.theta[first.weight_offset + 2 * u];
      w(u, 1) = run.checkpoint.theta[first.weight_offset + 2 * u + 1];
    }
    double scale = 0.0;
    for (double v : w.values()) scale = std::max(scale, std::abs(v));
    if (scale > 0) {
      for (double& v : w.values()) v /= scale;
    }
    SvgPanel p;
    p.title = "first-layer weights (rescaled)";
    const auto pos = rows_where(train.size(), [&](std::size_t i) { return train.y[i] > 0; });
    const auto neg = rows_where(train.size(), [&](std::size_t i) { return train.y[i] < 0; });
    const auto rows = rows_where(first.out, [](std::size_t) { return true; });
    SvgSeries ws = points_series("weights", "#7b1fa2", w, rows);
    ws.radius = 1.0;
    p.series = {points_series("", "#d62728", train.x, pos, SvgSeries::Marker::Cross),
                points_series("", "#1f4fd1", train.x, neg, SvgSeries::Marker::Cross), ws};
    set_range(p, -1.5, 1.5);
    const SvgPanel panels[] = {p};
    write_svg(paths.analysis() / "weights_2d.svg", panels, 1);
  } else {
    const auto rows = export_first_layer_weights(run.checkpoint.spec, run.checkpoint.theta);
    // rank by best SSIM against any training sample
    std::vector<std::vector<double>> targets;
    for (std::size_t i = 0; i < train.size(); ++i) targets.push_back(scale_to_unit(train.denormalized(i)));
    std::vector<std::pair<double, std::size_t>> score;
    for (std::size_t u = 0; u < rows.size(); ++u) {
      double best = -1.0;
      for (const auto& t : targets) best = std::max(best, ssim(rows[u], t, train.shape));
      score.emplace_back(best, u);
    }
    std::stable_sort(score.begin(), score.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::vector<double>> tiles;
    for (const auto& [s, u] : score) tiles.push_back(rows[u]);
    const std::string ext = train.shape.channels == 3 ? ".ppm" : ".pgm";
    write_image_grid(paths.analysis() / ("weights" + ext), tiles, train.shape, 40, 1);
    std::vector<double> top;
    for (std::size_t u = 0; u < std::min<std::size_t>(10, score.size()); ++u) top.push_back(score[u].first);
    summary["top_ssim"] = top;
    std::size_t good = 0;
    for (const auto& [s, u] : score) good += s > config.analysis.good_ssim ? 1 : 0;
    summary["above_good_ssim"] = good;
  }
  record_step(paths, config, "weights", summary);
  return summary;
}

}  // namespace kktrecon
