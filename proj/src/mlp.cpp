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

#include "kktrecon/mlp.hpp"

#include <cmath>
#include <string>

#include "kktrecon/error.hpp"
#include "kktrecon/kernels.hpp"

namespace kktrecon {

using kernels::Trans;

// ---------------------------------------------------------------------------
// ModelSpec

ModelSpec ModelSpec::homogeneous(std::vector<std::size_t> widths) {
  ModelSpec spec;
  spec.widths = std::move(widths);
  spec.bias.assign(spec.depth(), false);
  if (!spec.bias.empty()) spec.bias[0] = true;
  return spec;
}

std::vector<LayerLayout> ModelSpec::layout() const {
  std::vector<LayerLayout> layers;
  layers.reserve(depth());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < depth(); ++l) {
    LayerLayout layer;
    layer.in = widths[l];
    layer.out = widths[l + 1];
    layer.weight_offset = offset;
    offset += layer.in * layer.out;
    layer.has_bias = l < bias.size() && bias[l];
    layer.bias_offset = offset;
    if (layer.has_bias) offset += layer.out;
    layers.push_back(layer);
  }
  return layers;
}

std::size_t ModelSpec::param_count() const {
  const auto layers = layout();
  return layers.empty() ? 0 : layers.back().end();
}

bool ModelSpec::is_homogeneous() const {
  for (std::size_t l = 1; l < bias.size(); ++l) {
    if (bias[l]) return false;
  }
  return true;
}

void ModelSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("need at least an input and an output width", "widths");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0) {
      throw ConfigError("width must be positive", "widths[" + std::to_string(i) + "]");
    }
  }
  if (widths.back() != 1) throw ConfigError("output width must be 1", "widths[" + std::to_string(widths.size() - 1) + "]");
  if (bias.size() != depth()) {
    throw ConfigError("expected " + std::to_string(depth()) + " bias flags, got " + std::to_string(bias.size()), "bias");
  }
}

// ---------------------------------------------------------------------------
// Surrogate

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void SurrogateConfig::validate() const {
  if (mode == Mode::Sigmoid && !(alpha > 0.0)) {
    throw ConfigError("sigmoid surrogate needs alpha > 0", "alpha");
  }
}

double SurrogateConfig::factor(double z) const {
  if (mode == Mode::ExactStep) return z > 0.0 ? 1.0 : 0.0;
  return kktrecon::sigmoid(alpha * z);
}

double SurrogateConfig::factor_derivative(double z) const {
  if (mode == Mode::ExactStep) return 0.0;
  const double s = kktrecon::sigmoid(alpha * z);
  return alpha * s * (1.0 - s);
}

// ---------------------------------------------------------------------------
// BatchEvaluation

namespace {

void check_param_length(const ModelSpec& spec, std::span<const double> params, const char* what) {
  if (params.size() != spec.param_count()) {
    throw DimensionError(std::string(what) + " has " + std::to_string(params.size()) +
                         " entries, model has " + std::to_string(spec.param_count()) + " parameters");
  }
}

void add_bias_rows(Matrix& m, std::span<const double> bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) kernels::axpy(1.0, bias, m.row(i));
}

void hadamard(Matrix& target, const Matrix& factor) {
  double* t = target.data();
  const double* f = factor.data();
  for (std::size_t i = 0; i < target.size(); ++i) t[i] *= f[i];
}

// C (rows x out) = A (rows x in) * W^T, W row-major out x in.
void times_transposed(const Matrix& a, std::span<const double> w, std::size_t out, double beta, Matrix& c) {
  kernels::gemm(Trans::No, Trans::Yes, a.rows(), out, a.cols(), 1.0, a.data(), a.cols(), w.data(), a.cols(),
                beta, c.data(), out);
}

// C (rows x in) = A (rows x out) * W, W row-major out x in.
void times(const Matrix& a, std::span<const double> w, std::size_t in, double beta, Matrix& c) {
  kernels::gemm(Trans::No, Trans::No, a.rows(), in, a.cols(), 1.0, a.data(), a.cols(), w.data(), in, beta,
                c.data(), in);
}

}  // namespace

BatchEvaluation::BatchEvaluation(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs,
                                 SurrogateConfig surrogate)
    : spec_(&spec), theta_(&theta), layout_(spec.layout()), surrogate_(surrogate), inputs_(inputs) {
  spec.validate();
  surrogate.validate();
  check_param_length(spec, theta.values(), "theta");
  if (inputs.cols() != spec.input_dim()) {
    throw DimensionError("input has dimension " + std::to_string(inputs.cols()) + ", model expects " +
                         std::to_string(spec.input_dim()));
  }
  const std::size_t batch = inputs.rows();
  const std::size_t depth = layout_.size();
  pre_.reserve(depth);
  activation_.reserve(depth - 1);
  factor_.reserve(depth - 1);
  for (std::size_t l = 0; l < depth; ++l) {
    const LayerLayout& layer = layout_[l];
    Matrix z(batch, layer.out);
    times_transposed(layer_input(l), weights(l, theta.values()), layer.out, 0.0, z);
    if (layer.has_bias) add_bias_rows(z, biases(l, theta.values()));
    if (l + 1 < depth) {
      Matrix a(batch, layer.out);
      Matrix f(batch, layer.out);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = z.data()[i];
        a.data()[i] = v > 0.0 ? v : 0.0;
        f.data()[i] = surrogate_.factor(v);
      }
      activation_.push_back(std::move(a));
      factor_.push_back(std::move(f));
    }
    pre_.push_back(std::move(z));
  }
  outputs_.assign(pre_.back().values().begin(), pre_.back().values().end());
}

std::span<const double> BatchEvaluation::weights(std::size_t layer, std::span<const double> params) const {
  const LayerLayout& l = layout_[layer];
  return params.subspan(l.weight_offset, l.in * l.out);
}

std::span<const double> BatchEvaluation::biases(std::size_t layer, std::span<const double> params) const {
  const LayerLayout& l = layout_[layer];
  return params.subspan(l.bias_offset, l.out);
}

const Matrix& BatchEvaluation::layer_input(std::size_t layer) const {
  return layer == 0 ? inputs_ : activation_[layer - 1];
}

void BatchEvaluation::accumulate_param_gradient(std::span<const double> coeffs, std::span<double> grad) const {
  const std::size_t batch = batch_size();
  if (coeffs.size() != batch) throw DimensionError("coefficient count differs from batch size");
  check_param_length(*spec_, grad, "gradient");
  const auto theta = theta_->values();

  Matrix delta(batch, 1, std::vector<double>(coeffs.begin(), coeffs.end()));
  for (std::size_t l = layout_.size(); l-- > 0;) {
    const LayerLayout& layer = layout_[l];
    const Matrix& in = layer_input(l);
    kernels::gemm(Trans::Yes, Trans::No, layer.out, layer.in, batch, 1.0, delta.data(), layer.out, in.data(),
                  layer.in, 1.0, grad.data() + layer.weight_offset, layer.in);
    if (layer.has_bias) {
      auto gb = grad.subspan(layer.bias_offset, layer.out);
      for (std::size_t i = 0; i < batch; ++i) kernels::axpy(1.0, delta.row(i), gb);
    }
    if (l > 0) {
      Matrix next(batch, layer.in);
      times(delta, weights(l, theta), layer.in, 0.0, next);
      hadamard(next, factor_[l - 1]);
      delta = std::move(next);
    }
  }
}

std::vector<double> BatchEvaluation::directional_derivatives(std::span<const double> direction) const {
  check_param_length(*spec_, direction, "direction");
  const std::size_t batch = batch_size();
  const auto theta = theta_->values();
  Matrix t;
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    const LayerLayout& layer = layout_[l];
    Matrix next(batch, layer.out);
    times_transposed(layer_input(l), weights(l, direction), layer.out, 0.0, next);
    if (l > 0) {
      hadamard(t, factor_[l - 1]);
      times_transposed(t, weights(l, theta), layer.out, 1.0, next);
    }
    if (layer.has_bias) add_bias_rows(next, biases(l, direction));
    t = std::move(next);
  }
  return {t.values().begin(), t.values().end()};
}

std::vector<double> BatchEvaluation::directional_input_gradient(std::span<const double> direction,
                                                                std::span<const double> row_scale,
                                                                Matrix& input_grad) const {
  if (surrogate_.mode != SurrogateConfig::Mode::Sigmoid) {
    throw UnsupportedModeError("mixed second derivative requires the sigmoid surrogate");
  }
  check_param_length(*spec_, direction, "direction");
  const std::size_t batch = batch_size();
  if (row_scale.size() != batch) throw DimensionError("row scale count differs from batch size");
  const auto theta = theta_->values();
  const std::size_t depth = layout_.size();

  // Forward tangents t_l = dz_l along the parameter direction.
  std::vector<Matrix> tangent;
  tangent.reserve(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const LayerLayout& layer = layout_[l];
    Matrix next(batch, layer.out);
    times_transposed(layer_input(l), weights(l, direction), layer.out, 0.0, next);
    if (l > 0) {
      Matrix u = tangent.back();
      hadamard(u, factor_[l - 1]);
      times_transposed(u, weights(l, theta), layer.out, 1.0, next);
    }
    if (layer.has_bias) add_bias_rows(next, biases(l, direction));
    tangent.push_back(std::move(next));
  }
  std::vector<double> values(tangent.back().values().begin(), tangent.back().values().end());

  // Reverse sweep over the tangent computation, seeded with row_scale.
  Matrix tangent_bar(batch, 1, std::vector<double>(row_scale.begin(), row_scale.end()));
  Matrix pre_bar;  // adjoint of z_l; empty while it is identically zero
  for (std::size_t l = depth - 1; l > 0; --l) {
    const LayerLayout& layer = layout_[l];
    const std::size_t k = l - 1;
    Matrix u_bar(batch, layer.in);
    times(tangent_bar, weights(l, theta), layer.in, 0.0, u_bar);
    Matrix a_bar(batch, layer.in);
    times(tangent_bar, weights(l, direction), layer.in, 0.0, a_bar);
    if (!pre_bar.empty()) times(pre_bar, weights(l, theta), layer.in, 1.0, a_bar);

    Matrix next_tangent_bar(batch, layer.in);
    Matrix next_pre_bar(batch, layer.in);
    const Matrix& z = pre_[k];
    const Matrix& f = factor_[k];
    const Matrix& t = tangent[k];
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double zi = z.data()[i];
      const double ub = u_bar.data()[i];
      next_tangent_bar.data()[i] = f.data()[i] * ub;
      next_pre_bar.data()[i] =
          surrogate_.factor_derivative(zi) * t.data()[i] * ub + (zi > 0.0 ? a_bar.data()[i] : 0.0);
    }
    tangent_bar = std::move(next_tangent_bar);
    pre_bar = std::move(next_pre_bar);
  }
  const LayerLayout& first = layout_[0];
  input_grad = Matrix(batch, first.in);
  times(tangent_bar, weights(0, direction), first.in, 0.0, input_grad);
  if (!pre_bar.empty()) times(pre_bar, weights(0, theta), first.in, 1.0, input_grad);
  return values;
}

Matrix BatchEvaluation::param_gradient_gram() const {
  const std::size_t batch = batch_size();
  const auto theta = theta_->values();
  Matrix gram(batch, batch);
  Matrix delta(batch, 1, 1.0);
  Matrix dd(batch, batch);
  Matrix aa(batch, batch);
  for (std::size_t l = layout_.size(); l-- > 0;) {
    const LayerLayout& layer = layout_[l];
    const Matrix& in = layer_input(l);
    kernels::gemm(Trans::No, Trans::Yes, batch, batch, layer.out, 1.0, delta.data(), layer.out, delta.data(),
                  layer.out, 0.0, dd.data(), batch);
    kernels::gemm(Trans::No, Trans::Yes, batch, batch, layer.in, 1.0, in.data(), layer.in, in.data(), layer.in,
                  0.0, aa.data(), batch);
    for (std::size_t i = 0; i < gram.size(); ++i) {
      gram.data()[i] += dd.data()[i] * (aa.data()[i] + (layer.has_bias ? 1.0 : 0.0));
    }
    if (l > 0) {
      Matrix next(batch, layer.in);
      times(delta, weights(l, theta), layer.in, 0.0, next);
      hadamard(next, factor_[l - 1]);
      delta = std::move(next);
    }
  }
  return gram;
}

Matrix BatchEvaluation::input_gradient(std::span<const double> row_scale) const {
  const std::size_t batch = batch_size();
  if (row_scale.size() != batch) throw DimensionError("row scale count differs from batch size");
  const auto theta = theta_->values();
  Matrix pre_bar(batch, 1, std::vector<double>(row_scale.begin(), row_scale.end()));
  for (std::size_t l = layout_.size() - 1; l > 0; --l) {
    const LayerLayout& layer = layout_[l];
    Matrix next(batch, layer.in);
    times(pre_bar, weights(l, theta), layer.in, 0.0, next);
    hadamard(next, factor_[l - 1]);
    pre_bar = std::move(next);
  }
  Matrix grad(batch, layout_[0].in);
  times(pre_bar, weights(0, theta), layout_[0].in, 0.0, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Single-sample API

namespace {

Matrix single_row(std::span<const double> x) { return Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())); }

}  // namespace

double forward(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x) {
  const Matrix input = single_row(x);
  return BatchEvaluation(spec, theta, input, SurrogateConfig::exact()).outputs()[0];
}

std::vector<double> forward_batch(const ModelSpec& spec, const ParamVector& theta, const Matrix& x) {
  const BatchEvaluation eval(spec, theta, x, SurrogateConfig::exact());
  return {eval.outputs().begin(), eval.outputs().end()};
}

std::vector<double> grad_theta(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x,
                               SurrogateConfig surrogate) {
  const Matrix input = single_row(x);
  const BatchEvaluation eval(spec, theta, input, surrogate);
  std::vector<double> grad(spec.param_count(), 0.0);
  const double one = 1.0;
  eval.accumulate_param_gradient({&one, 1}, grad);
  return grad;
}

double jvp_theta(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x,
                 std::span<const double> direction, SurrogateConfig surrogate) {
  const Matrix input = single_row(x);
  return BatchEvaluation(spec, theta, input, surrogate).directional_derivatives(direction)[0];
}

std::vector<double> grad_x_of_jvp(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x,
                                  std::span<const double> direction, SurrogateConfig surrogate) {
  if (surrogate.mode != SurrogateConfig::Mode::Sigmoid) {
    throw UnsupportedModeError("mixed second derivative requires the sigmoid surrogate");
  }
  const Matrix input = single_row(x);
  const BatchEvaluation eval(spec, theta, input, surrogate);
  Matrix grad;
  const double one = 1.0;
  eval.directional_input_gradient(direction, {&one, 1}, grad);
  return {grad.values().begin(), grad.values().end()};
}

// ---------------------------------------------------------------------------
// Logistic loss

double logistic(double q) {
  if (q >= 0.0) return std::log1p(std::exp(-q));
  return -q + std::log1p(std::exp(q));
}

double logistic_derivative(double q) { return -sigmoid(-q); }

double logistic_loss(std::span<const double> outputs, std::span<const double> labels) {
  if (outputs.size() != labels.size()) throw DimensionError("outputs and labels differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) total += logistic(labels[i] * outputs[i]);
  return total;
}

std::vector<double> grad_training_loss(const ModelSpec& spec, const ParamVector& theta,
                                       const LabeledDataset& dataset, double* loss) {
  if (dataset.empty()) throw ConfigError("training set is empty", "dataset");
  if (dataset.y.size() != dataset.size()) throw DimensionError("label count differs from sample count");
  const BatchEvaluation eval(spec, theta, dataset.x, SurrogateConfig::exact());
  const auto out = eval.outputs();
  std::vector<double> coeffs(dataset.size());
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    coeffs[i] = logistic_derivative(dataset.y[i] * out[i]) * dataset.y[i];
  }
  if (loss != nullptr) *loss = logistic_loss(out, dataset.y);
  std::vector<double> grad(spec.param_count(), 0.0);
  eval.accumulate_param_gradient(coeffs, grad);
  return grad;
}

}  // namespace kktrecon
