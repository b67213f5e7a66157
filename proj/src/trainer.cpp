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


#include "kktrecon/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "kktrecon/error.hpp"
#include "kktrecon/kernels.hpp"

namespace kktrecon {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("must be positive", "training.learning_rate");
  if (epochs < 1) throw ConfigError("must be at least 1", "training.epochs");
  if (!(first_layer_init_std >= 0.0)) throw ConfigError("must be non-negative", "model.first_layer_init_std");
  if (!(hidden_init_gain >= 0.0)) throw ConfigError("must be non-negative", "model.hidden_init_gain");
  if (loss_stop_threshold && !(*loss_stop_threshold > 0.0)) {
    throw ConfigError("must be positive", "training.loss_stop_threshold");
  }
  if (!(loss_scale_start > 0.0)) throw ConfigError("must be positive", "training.loss_scale_start");
}

std::string step_rule_tag(TrainConfig::StepRule rule) {
  return rule == TrainConfig::StepRule::LossScaled ? "loss-scaled" : "constant";
}

TrainConfig::StepRule parse_step_rule(const std::string& text) {
  if (text == "constant") return TrainConfig::StepRule::Constant;
  if (text == "loss-scaled") return TrainConfig::StepRule::LossScaled;
  throw ConfigError("unknown step rule '" + text + "'", "training.step_rule");
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,train_error,min_margin,param_norm,direction_drift,step_size\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.loss << ',' << r.error << ',' << r.min_margin << ',' << r.param_norm << ','
        << r.direction_drift << ',' << r.step_size << '\n';
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << to_csv();
}

ParamVector init_params(const ModelSpec& spec, const TrainConfig& config, std::uint64_t seed) {
  spec.validate();
  ParamVector theta = ParamVector::zeros(spec);
  std::mt19937_64 rng(seed);
  const auto layers = spec.layout();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerLayout& layer = layers[l];
    const double stddev = l == 0 ? config.first_layer_init_std
                                 : config.hidden_init_gain * std::sqrt(2.0 / static_cast<double>(layer.in));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) theta[layer.weight_offset + i] = stddev * dist(rng);
  }
  return theta;
}

Evaluation evaluate(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& dataset) {
  if (dataset.empty()) throw ConfigError("dataset is empty", "dataset");
  const auto outputs = forward_batch(spec, theta, dataset.x);
  Evaluation ev;
  ev.margins.resize(outputs.size());
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    ev.margins[i] = dataset.y[i] * outputs[i];
    correct += ev.margins[i] > 0.0;
    loss += logistic(ev.margins[i]);
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(outputs.size());
  ev.mean_loss = loss / static_cast<double>(outputs.size());
  auto sorted = ev.margins;
  std::sort(sorted.begin(), sorted.end());
  ev.min_margin = sorted.front();
  ev.max_margin = sorted.back();
  const std::size_t mid = sorted.size() / 2;
  ev.median_margin = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return ev;
}

namespace {

bool is_geometric(std::size_t epoch) { return epoch == 0 || (epoch & (epoch - 1)) == 0; }

LabeledDataset take_rows(const LabeledDataset& ds, std::span<const std::size_t> rows) {
  LabeledDataset out;
  out.x = Matrix(rows.size(), ds.dim());
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = ds.x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.x.row(i).begin());
    out.y[i] = ds.y[rows[i]];
  }
  out.shape = ds.shape;
  return out;
}

class StepSize {
 public:
  explicit StepSize(const TrainConfig& config) : config_(config) {}

  double next(double loss) {
    if (config_.step_rule == TrainConfig::StepRule::Constant) return config_.learning_rate;
    if (has_previous_ && loss > 2.0 * previous_) {
      multiplier_ *= 0.5;
    } else {
      multiplier_ = std::min(1.0, multiplier_ * 1.001);
    }
    previous_ = loss;
    has_previous_ = true;
    if (loss >= config_.loss_scale_start) return config_.learning_rate * multiplier_;
    return config_.learning_rate * multiplier_ * config_.loss_scale_start / loss;
  }

 private:
  const TrainConfig& config_;
  double multiplier_ = 1.0;
  double previous_ = 0.0;
  bool has_previous_ = false;
};

}  // namespace

TrainResult train_full_batch(const ModelSpec& spec, const ParamVector& theta0, const LabeledDataset& dataset,
                             const TrainConfig& config, const TrainProgress& progress) {
  if (dataset.empty()) throw ConfigError("training set is empty", "dataset");
  spec.validate();
  if (!(config.learning_rate > 0.0)) throw ConfigError("must be positive", "training.learning_rate");
  if (theta0.size() != spec.param_count()) throw DimensionError("theta0 length differs from the spec");
  if (dataset.dim() != spec.input_dim()) throw DimensionError("dataset dimension differs from the model input");

  TrainResult result;
  result.theta = theta0;
  auto theta = result.theta.values();
  std::vector<double> previous_direction;
  StepSize step_size(config);
  const bool mini_batch = config.batch_size > 0 && config.batch_size < dataset.size();
  std::mt19937_64 batch_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  double last_eta = 0.0;

  auto record = [&](std::size_t epoch, double loss) {
    const Evaluation ev = evaluate(spec, result.theta, dataset);
    TrainRecord r;
    r.epoch = epoch;
    r.loss = loss;
    r.error = 1.0 - ev.accuracy;
    r.min_margin = ev.min_margin;
    r.param_norm = norm2(theta);
    r.step_size = last_eta;
    std::vector<double> direction(theta.begin(), theta.end());
    if (r.param_norm > 0.0) kernels::scale(1.0 / r.param_norm, direction);
    if (!previous_direction.empty()) {
      kernels::axpy(-1.0, previous_direction, direction);
      r.direction_drift = norm2(direction);
      kernels::axpy(1.0, previous_direction, direction);
    }
    previous_direction = std::move(direction);
    result.log.records.push_back(r);
    if (progress) progress(r);
  };

  for (std::size_t epoch = 0;; ++epoch) {
    double loss = 0.0;
    auto grad = grad_training_loss(spec, result.theta, dataset, &loss);
    if (!std::isfinite(loss)) {
      throw NumericalError("training loss became non-finite at epoch " + std::to_string(epoch),
                           epoch == 0 ? 0 : epoch - 1);
    }
    result.final_loss = loss;
    result.epochs_run = epoch;
    const bool stop = config.loss_stop_threshold && loss < *config.loss_stop_threshold;
    const bool done = epoch >= config.epochs;
    if (is_geometric(epoch) || stop || done || (config.log_every > 0 && epoch % config.log_every == 0)) {
      record(epoch, loss);
    }
    if (stop) {
      result.reached_threshold = true;
      break;
    }
    if (done) break;

    if (!mini_batch) {
      last_eta = step_size.next(loss);
      kernels::axpy(-last_eta, grad, theta);
      continue;
    }
    std::shuffle(order.begin(), order.end(), batch_rng);
    last_eta = step_size.next(loss);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const LabeledDataset batch = take_rows(dataset, std::span(order).subspan(start, end - start));
      grad = grad_training_loss(spec, result.theta, batch);
      kernels::axpy(-last_eta, grad, theta);
    }
  }
  return result;
}

}  // namespace kktrecon
