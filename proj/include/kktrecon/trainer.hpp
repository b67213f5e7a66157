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


#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kktrecon/dataset.hpp"
#include "kktrecon/mlp.hpp"

namespace kktrecon {

struct TrainConfig {
  /// Step-size rule. Constant is plain gradient descent. LossScaled keeps
  /// `learning_rate` while the loss is above `loss_scale_start` and then
  /// uses learning_rate * loss_scale_start / loss, damped by a multiplier
  /// that halves whenever a step more than doubles the loss.
  enum class StepRule { Constant, LossScaled };

  double learning_rate = 0.01;
  std::size_t epochs = 1'000'000;
  double first_layer_init_std = 1e-4;
  /// Multiplies the Kaiming standard deviation of the deeper layers.
  double hidden_init_gain = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> loss_stop_threshold;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  StepRule step_rule = StepRule::Constant;
  double loss_scale_start = 0.05;
  /// Extra linear log cadence on top of the geometric one; 0 disables.
  std::size_t log_every = 0;

  void validate() const;
};

std::string step_rule_tag(TrainConfig::StepRule rule);
TrainConfig::StepRule parse_step_rule(const std::string& text);

struct TrainRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double error = 0.0;
  double min_margin = 0.0;
  double param_norm = 0.0;
  /// || theta_t/|theta_t| - theta_s/|theta_s| || against the previous record.
  double direction_drift = 0.0;
  double step_size = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  ParamVector theta;
  TrainLog log;
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
  bool reached_threshold = false;
};

/// First layer N(0, first_layer_init_std^2) with zero bias; deeper layers
/// N(0, gain^2 * 2 / fan_in). Deterministic in `seed`.
ParamVector init_params(const ModelSpec& spec, const TrainConfig& config, std::uint64_t seed);

using TrainProgress = std::function<void(const TrainRecord&)>;

/// Gradient descent on the summed logistic loss. Stops at the epoch budget
/// or once the loss drops below `loss_stop_threshold`. Throws
/// NumericalError when the loss becomes non-finite.
TrainResult train_full_batch(const ModelSpec& spec, const ParamVector& theta0, const LabeledDataset& dataset,
                             const TrainConfig& config, const TrainProgress& progress = {});

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double min_margin = 0.0;
  double median_margin = 0.0;
  double max_margin = 0.0;
  /// y_i * Phi(theta; x_i)
  std::vector<double> margins;
};

/// y * Phi == 0 counts as an error.
Evaluation evaluate(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& dataset);

}  // namespace kktrecon
