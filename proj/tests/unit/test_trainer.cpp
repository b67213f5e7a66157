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


#include <cmath>
#include <vector>

#include "doctest.h"
#include "kktrecon/error.hpp"
#include "kktrecon/trainer.hpp"

using namespace kktrecon;

namespace {

double sample_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("init_params follows the layer-wise scheme") {
  const ModelSpec spec = ModelSpec::homogeneous({3072, 64, 128, 1});
  TrainConfig config;
  const ParamVector theta = init_params(spec, config, 1);
  const auto layers = spec.layout();
  const auto w0 = theta.values().subspan(layers[0].weight_offset, layers[0].in * layers[0].out);
  CHECK(std::abs(sample_std(w0) / 1e-4 - 1.0) < 0.1);
  for (std::size_t j = 0; j < layers[0].out; ++j) CHECK(theta[layers[0].bias_offset + j] == 0.0);
  for (std::size_t l : {1u, 2u}) {
    const auto w = theta.values().subspan(layers[l].weight_offset, layers[l].in * layers[l].out);
    const double var = sample_std(w) * sample_std(w);
    CHECK(std::abs(var / (2.0 / static_cast<double>(layers[l].in)) - 1.0) < 0.1);
  }
  CHECK(init_params(spec, config, 1) == theta);
  CHECK_FALSE(init_params(spec, config, 2) == theta);
}

TEST_CASE("evaluate: zero parameters predict nothing correctly") {
  const ModelSpec spec = ModelSpec::homogeneous({2, 4, 1});
  const Evaluation ev = evaluate(spec, ParamVector::zeros(spec), make_circle_2d(6));
  CHECK(ev.accuracy == 0.0);
  CHECK(ev.mean_loss == doctest::Approx(std::log(2.0)));
  CHECK(ev.margins.size() == 6);
  CHECK_THROWS_AS(evaluate(spec, ParamVector::zeros(spec), LabeledDataset{}), ConfigError);
}

TEST_CASE("zero epochs returns theta0 unchanged") {
  const ModelSpec spec = ModelSpec::homogeneous({2, 4, 1});
  TrainConfig config;
  config.epochs = 0;
  const ParamVector theta0 = init_params(spec, config, 3);
  const TrainResult result = train_full_batch(spec, theta0, make_circle_2d(4), config);
  CHECK(result.theta == theta0);
  CHECK(result.epochs_run == 0);
  REQUIRE(result.log.records.size() == 1);
  CHECK(result.log.records[0].epoch == 0);
}

TEST_CASE("linear model on a separable pair: loss decreases monotonically") {
  const ModelSpec spec = ModelSpec::homogeneous({1, 1});
  LabeledDataset ds;
  ds.x = Matrix(2, 1, std::vector<double>{1.0, -1.0});
  ds.y = {1.0, -1.0};
  ds.shape = ImageShape::flat(1);
  TrainConfig config;
  config.learning_rate = 0.1;
  config.epochs = 500;
  config.log_every = 1;
  const TrainResult result = train_full_batch(spec, ParamVector::zeros(spec), ds, config);
  const auto& records = result.log.records;
  REQUIRE(records.size() == 501);
  for (std::size_t i = 1; i < records.size(); ++i) {
    CHECK(records[i].epoch > records[i - 1].epoch);
    CHECK(records[i].loss < records[i - 1].loss);
    CHECK(records[i].loss >= 0.0);
  }
}

TEST_CASE("small circle run separates the data and is reproducible") {
  const ModelSpec spec = ModelSpec::homogeneous({2, 40, 40, 1});
  const LabeledDataset ds = make_circle_2d(8);
  TrainConfig config;
  config.learning_rate = 0.05;
  config.epochs = 20000;
  config.hidden_init_gain = 1.0;
  config.first_layer_init_std = 0.5;
  config.loss_stop_threshold = 1e-3;
  config.step_rule = TrainConfig::StepRule::LossScaled;
  const ParamVector theta0 = init_params(spec, config, 4);
  const TrainResult a = train_full_batch(spec, theta0, ds, config);
  CHECK(a.reached_threshold);
  CHECK(a.final_loss < 1e-3);
  const Evaluation ev = evaluate(spec, a.theta, ds);
  CHECK(ev.accuracy == 1.0);
  for (double m : ev.margins) CHECK(m > 0.0);
  CHECK(a.log.records.back().error == 0.0);

  const TrainResult b = train_full_batch(spec, theta0, ds, config);
  CHECK(b.theta == a.theta);
  CHECK(b.log.to_csv() == a.log.to_csv());
}

TEST_CASE("geometric log cadence") {
  const ModelSpec spec = ModelSpec::homogeneous({2, 4, 1});
  TrainConfig config;
  config.epochs = 100;
  const TrainResult result = train_full_batch(spec, init_params(spec, config, 1), make_circle_2d(4), config);
  std::vector<std::size_t> epochs;
  for (const auto& r : result.log.records) epochs.push_back(r.epoch);
  CHECK(epochs == std::vector<std::size_t>{0, 1, 2, 4, 8, 16, 32, 64, 100});
}

TEST_CASE("mini-batch configuration runs and is deterministic") {
  const ModelSpec spec = ModelSpec::homogeneous({2, 8, 1});
  TrainConfig config;
  config.epochs = 50;
  config.batch_size = 3;
  config.first_layer_init_std = 0.3;
  const ParamVector theta0 = init_params(spec, config, 2);
  const auto a = train_full_batch(spec, theta0, make_circle_2d(10), config);
  const auto b = train_full_batch(spec, theta0, make_circle_2d(10), config);
  CHECK(a.theta == b.theta);
  CHECK_FALSE(a.theta == theta0);
}

TEST_CASE("divergence raises NumericalError with the last finite epoch") {
  const ModelSpec spec = ModelSpec::homogeneous({1, 1});
  LabeledDataset ds;
  ds.x = Matrix(2, 1, std::vector<double>{1e10, 1e10});
  ds.y = {1.0, -1.0};
  ds.shape = ImageShape::flat(1);
  TrainConfig config;
  config.learning_rate = 1e308;
  config.epochs = 10;
  const ParamVector theta0(std::vector<double>{1.0, 0.5});
  try {
    train_full_batch(spec, theta0, ds, config);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.last_finite_step() <= 10);
  }
}

TEST_CASE("TrainConfig validation names fields") {
  TrainConfig config;
  config.learning_rate = 0.0;
  try {
    config.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "training.learning_rate");
  }
  CHECK(parse_step_rule("loss-scaled") == TrainConfig::StepRule::LossScaled);
  CHECK_THROWS_AS(parse_step_rule("adam"), ConfigError);
}
