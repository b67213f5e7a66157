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

// Fully-connected ReLU network Phi(theta; x) with a scalar output, together
// with the first- and mixed second-order derivatives the reconstruction
// loss needs.
//
// Layer l maps in_l -> out_l as z_l = W_l a_{l-1} (+ b_l), a_l = relu(z_l),
// and the last layer has no activation. Parameters are stored flat,
// layer-major: W_0 (row-major, out x in), b_0 if present, W_1, ...

#include <cstddef>
#include <span>
#include <vector>

#include "kktrecon/dataset.hpp"
#include "kktrecon/matrix.hpp"

namespace kktrecon {

struct LayerLayout {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  bool has_bias = false;

  std::size_t end() const { return (has_bias ? bias_offset + out : weight_offset + in * out); }
};

struct ModelSpec {
  /// [d, h1, ..., hk, 1]
  std::vector<std::size_t> widths;
  /// One flag per affine layer.
  std::vector<bool> bias;

  /// Bias on the first layer only, so Phi is positively homogeneous of
  /// degree depth() in theta.
  static ModelSpec homogeneous(std::vector<std::size_t> widths);

  std::size_t depth() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t input_dim() const { return widths.empty() ? 0 : widths.front(); }
  std::size_t param_count() const;
  std::vector<LayerLayout> layout() const;
  bool is_homogeneous() const;

  /// Throws ConfigError naming the failing field.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  static ParamVector zeros(const ModelSpec& spec) {
    return ParamVector(std::vector<double>(spec.param_count(), 0.0));
  }

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vector() const { return values_; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

/// How ReLU's derivative step(z) is evaluated in backward passes.
/// The forward value always stays relu(z).
struct SurrogateConfig {
  enum class Mode { ExactStep, Sigmoid };
  Mode mode = Mode::ExactStep;
  double alpha = 0.0;

  static SurrogateConfig exact() { return {}; }
  static SurrogateConfig sigmoid(double alpha) { return {Mode::Sigmoid, alpha}; }

  /// Throws ConfigError when alpha <= 0 in sigmoid mode.
  void validate() const;
  double factor(double z) const;
  /// d factor / dz; zero in exact-step mode.
  double factor_derivative(double z) const;
};

double sigmoid(double z);

/// Forward state of the network over a batch of inputs (one per row).
/// Holds pre-activations and derivative factors so the derivative passes
/// below can share one forward evaluation. The referenced spec and theta
/// must outlive the object.
class BatchEvaluation {
 public:
  BatchEvaluation(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs,
                  SurrogateConfig surrogate);

  std::size_t batch_size() const { return inputs_.rows(); }
  std::span<const double> outputs() const { return outputs_; }

  /// grad += sum_i coeffs[i] * dPhi(x_i)/dtheta
  void accumulate_param_gradient(std::span<const double> coeffs, std::span<double> grad) const;

  /// <dPhi(x_i)/dtheta, direction> for every row.
  std::vector<double> directional_derivatives(std::span<const double> direction) const;

  /// Returns <dPhi(x_i)/dtheta, direction> and writes
  /// row_scale[i] * d/dx_i <dPhi(x_i)/dtheta, direction> into row i of
  /// `input_grad`. Requires sigmoid mode.
  std::vector<double> directional_input_gradient(std::span<const double> direction,
                                                 std::span<const double> row_scale,
                                                 Matrix& input_grad) const;

  /// G[i][j] = <dPhi(x_i)/dtheta, dPhi(x_j)/dtheta>, assembled per layer
  /// without materialising the per-sample gradients.
  Matrix param_gradient_gram() const;

  /// Row i: row_scale[i] * dPhi(x_i)/dx_i.
  Matrix input_gradient(std::span<const double> row_scale) const;

 private:
  std::span<const double> weights(std::size_t layer, std::span<const double> params) const;
  std::span<const double> biases(std::size_t layer, std::span<const double> params) const;
  const Matrix& layer_input(std::size_t layer) const;

  const ModelSpec* spec_;
  const ParamVector* theta_;
  std::vector<LayerLayout> layout_;
  SurrogateConfig surrogate_;
  Matrix inputs_;
  std::vector<Matrix> pre_;         // z_l, B x out_l
  std::vector<Matrix> activation_;  // relu(z_l), hidden layers only
  std::vector<Matrix> factor_;      // D(z_l), hidden layers only
  std::vector<double> outputs_;
};

double forward(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x);
std::vector<double> forward_batch(const ModelSpec& spec, const ParamVector& theta, const Matrix& x);

std::vector<double> grad_theta(const ModelSpec& spec, const ParamVector& theta,
                               std::span<const double> x, SurrogateConfig surrogate);

double jvp_theta(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x,
                 std::span<const double> direction, SurrogateConfig surrogate);

/// d/dx <dPhi(x)/dtheta, direction>. Throws UnsupportedModeError in
/// exact-step mode.
std::vector<double> grad_x_of_jvp(const ModelSpec& spec, const ParamVector& theta,
                                  std::span<const double> x, std::span<const double> direction,
                                  SurrogateConfig surrogate);

/// log(1 + exp(-q)), stable for large |q|.
double logistic(double q);
/// d/dq log(1 + exp(-q)) = -sigmoid(-q)
double logistic_derivative(double q);

/// sum_i logistic(margins[i]), margins[i] = y_i * Phi(x_i).
double logistic_loss(std::span<const double> outputs, std::span<const double> labels);

/// Gradient of sum_i logistic(y_i Phi(theta; x_i)) with exact-step ReLU.
/// When `loss` is non-null it receives the loss value at theta.
std::vector<double> grad_training_loss(const ModelSpec& spec, const ParamVector& theta,
                                       const LabeledDataset& dataset, double* loss = nullptr);

}  // namespace kktrecon
