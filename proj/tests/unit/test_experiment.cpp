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


#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "kktrecon/error.hpp"
#include "kktrecon/experiment.hpp"

using namespace kktrecon;
using nlohmann::json;

namespace {

std::string field_of(json j) {
  if (!j.contains("model")) j["model"] = {{"widths", {2, 8, 1}}};
  try {
    ExperimentConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST_CASE("presets validate and round-trip through JSON") {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = make_preset(name);
    CHECK(c.name == name);
    const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.model == c.model);
  }
  const ExperimentConfig circle = make_preset("circle2d");
  CHECK(circle.model.widths == std::vector<std::size_t>{2, 1000, 1000, 1});
  CHECK(circle.dataset.n == 20);
  CHECK(circle.reconstruction.m == 100);
  CHECK(circle.training.loss_stop_threshold.value() == 1e-6);
  const ExperimentConfig mnist = make_preset("mnist-odd-even");
  CHECK(mnist.dataset.n == 100);
  CHECK(mnist.training.epochs == 100'000);
  CHECK(mnist.model.widths == std::vector<std::size_t>{784, 100, 100, 1});
  CHECK(mnist.reconstruction.runs == 16);
  CHECK_THROWS_AS(make_preset("imagenet"), ConfigError);
}

TEST_CASE("unknown keys and bad values report their field path") {
  CHECK(field_of({{"trainig", json::object()}}) == "trainig");
  CHECK(field_of({{"training", {{"learningrate", 0.1}}}}) == "training.learningrate");
  CHECK(field_of({{"training", {{"learning_rate", "fast"}}}}) == "training.learning_rate");
  CHECK(field_of({{"training", {{"learning_rate", -1.0}}}}) == "training.learning_rate");
  CHECK(field_of({{"training", {{"epochs", -3}}}}) == "training.epochs");
  CHECK(field_of({{"model", {{"widths", {2, 0, 1}}}}}) == "model.widths[1]");
  CHECK(field_of({{"dataset", {{"source", "tfrecord"}}}}) == "dataset.source");
  CHECK(field_of({{"dataset", {{"n", 7}}}}) == "dataset.n");
  CHECK(field_of({{"reconstruction", {{"m", 10}}}}) == "reconstruction.m");
  CHECK(field_of({{"reconstruction", {{"ranges", {{"alpha", {1.0}}}}}}}) == "reconstruction.ranges.alpha");
  CHECK(field_of({{"reconstruction", {{"hyper", {{"momentum", 1.5}}}}}}).rfind("reconstruction.hyper.", 0) == 0);
  CHECK(field_of({{"analysis", {{"inversion", {{"start", 3}}}}}}) == "analysis.inversion.start");
  CHECK(field_of({{"workers", 0}}) == "workers");
  CHECK(field_of(json::object()) == "<accepted>");
  CHECK(field_of({{"model", {{"widths", {2, 8, 1}}, {"bias", {true}}}}}) == "model.bias");
  CHECK(field_of({{"model", json::object()}}) == "model.widths");
}

TEST_CASE("dataset paths resolve against the config file's folder") {
  const auto dir = std::filesystem::temp_directory_path() / "kktrecon_cfg_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "exp.json";
  {
    std::ofstream out(path);
    out << R"({"dataset": {"source": "idx", "images": "imgs.idx", "labels": "lbl.idx"},
               "model": {"widths": [784, 10, 1]}})";
  }
  const ExperimentConfig c = load_experiment_config(path);
  CHECK(c.base_dir == std::filesystem::absolute(dir));
  CHECK(c.dataset.images == "imgs.idx");
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline steps refuse a run directory without a checkpoint") {
  const auto dir = std::filesystem::temp_directory_path() / "kktrecon_empty_run";
  std::filesystem::remove_all(dir);
  const ExperimentConfig c = make_preset("circle2d");
  CHECK_THROWS_AS(step_reconstruct(c, RunPaths{dir}), ConfigError);
}

TEST_CASE("fingerprint mismatch between checkpoint and dataset is rejected") {
  const auto dir = std::filesystem::temp_directory_path() / "kktrecon_fp_run";
  std::filesystem::remove_all(dir);
  ExperimentConfig c = ExperimentConfig::from_json(
      {{"dataset", {{"source", "circle2d"}, {"n", 4}}},
       {"model", {{"widths", {2, 6, 1}}}},
       {"training", {{"epochs", 5}}},
       {"reconstruction", {{"mode", "fixed"}, {"runs", 1}, {"hyper", {{"iterations", 2}, {"learning_rate", 1e-6}}}}}});
  const RunPaths paths{dir};
  step_train(c, paths);
  CHECK_NOTHROW(step_reconstruct(c, paths));
  CHECK_NOTHROW(step_analyze(c, paths));
  ExperimentConfig other = c;
  other.dataset.n = 6;
  std::filesystem::remove(paths.dataset());
  CHECK_THROWS_AS(step_reconstruct(other, paths), ConfigError);
  std::filesystem::remove_all(dir);
}
