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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kktrecon/dataset.hpp"
#include "kktrecon/matrix.hpp"
#include "kktrecon/mlp.hpp"

namespace kktrecon {

// ---- similarity -----------------------------------------------------------

/// Affine stretch sending min -> 0 and max -> 1. A constant vector maps to
/// all 0.5 and sets `*was_constant`.
std::vector<double> scale_to_unit(std::span<const double> x, bool* was_constant = nullptr);

/// Zero-mean normalized cross-correlation. Throws Error when either input is
/// constant.
double ncc(std::span<const double> a, std::span<const double> b);

/// Mean SSIM over 'valid' positions of an 11x11 Gaussian window (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, L = 1) and over channels. Images smaller than the
/// window use a window clipped to the image extent.
double ssim(std::span<const double> a, std::span<const double> b, const ImageShape& shape);

// ---- matching -------------------------------------------------------------

struct MatchRecord {
  std::size_t train_index = 0;
  double output = 0.0;  // y * Phi(theta; x)
  double best_ncc = 0.0;
  std::size_t best_candidate = 0;
  std::size_t voters = 0;
  std::vector<double> voted;  // in [0, 1]
  double ssim_voted = 0.0;
  double ssim_best = 0.0;
};

struct MatchReport {
  /// Sorted by ssim_voted descending, ties by train index.
  std::vector<MatchRecord> records;
  ImageShape shape;

  std::string to_csv() const;
};

/// For every training sample: NCC against all candidates, average the ones
/// scoring at least `vote_ratio` times the best (only the best when the best
/// score is not positive), and score the average with SSIM. Training images
/// are compared with their normalization mean added back; both sides go
/// through scale_to_unit. `outputs` are the y * Phi values recorded per
/// sample (may be empty).
MatchReport match_and_vote(const LabeledDataset& train, const Matrix& candidates, std::span<const double> outputs,
                           double vote_ratio = 0.9, std::size_t workers = 1);

/// Indices (into `points`) that survive the lambda filter and the greedy
/// radius dedup visited in a seeded random order.
std::vector<std::size_t> dedup_2d(const Matrix& points, std::span<const double> lambdas,
                                  double lambda_threshold = 5.0, double radius = 0.03, std::uint64_t seed = 0);

/// Training samples with some point of `candidates[rows]` within `radius`.
std::size_t count_recovered(const LabeledDataset& train, const Matrix& candidates, std::span<const std::size_t> rows,
                            double radius);

// ---- KKT diagnostic ---------------------------------------------------------

struct KktOptions {
  /// Projected-gradient norm relative to its value at lambda = 0.
  double tolerance = 1e-8;
  std::size_t max_iterations = 2'000'000;
};

struct KktDiagnostic {
  std::vector<double> lambda;
  double relative_residual = 1.0;
  std::vector<double> margins;
  std::size_t iterations = 0;
  bool converged = false;
  double projected_gradient = 0.0;
  /// NNLS objective sampled at geometric iterations.
  std::vector<double> objective_trace;
};

/// min_{lambda >= 0} |theta - sum_i lambda_i y_i g_i|^2 with exact-step
/// gradients g_i, by projected gradient descent with backtracking.
KktDiagnostic kkt_residual(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& dataset,
                           const KktOptions& options = {});

/// Same solver on an explicit problem: minimize t - 2 c.l + l.H.l over l >= 0.
KktDiagnostic solve_nnls(const Matrix& hessian, std::span<const double> linear, double constant,
                         const KktOptions& options = {});

// ---- margin analysis and baselines -------------------------------------------

struct ScatterRow {
  std::size_t train_index = 0;
  double output = 0.0;
  double ssim = 0.0;
};

/// One row per training sample, in train order.
std::vector<ScatterRow> scatter_margin_vs_ssim(const ModelSpec& spec, const ParamVector& theta,
                                               const LabeledDataset& train, const MatchReport& report);

struct InversionResult {
  std::vector<double> x;
  double initial_output = 0.0;
  double final_output = 0.0;
  std::vector<double> output_trace;
};

/// Gradient ascent (sign = +1) or descent (sign = -1) on Phi over the input
/// from x0 ~ N(0, sigma^2 I). Throws NumericalError on non-finite values.
InversionResult model_inversion_baseline(const ModelSpec& spec, const ParamVector& theta, double sigma, double lr,
                                         std::size_t iterations, int sign, std::uint64_t seed);

/// Rows of the first weight matrix, each passed through scale_to_unit.
std::vector<std::vector<double>> export_first_layer_weights(const ModelSpec& spec, const ParamVector& theta);

}  // namespace kktrecon
