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

// Reconstruction of training samples from a trained homogeneous network.
//
// Candidates x_i and coefficients lambda_i are optimized jointly so that
// theta is explained as sum_i lambda_i y_i dPhi(x_i)/dtheta:
//
//   L = w_stationary * |theta - sum_i lambda_i y_i g_i|^2
//     + w_lambda     * sum_i max(lambda_min - lambda_i, 0)
//     + w_prior      * mean over entries of max(z - 1, 0) + max(-z - 1, 0)
//
// with g_i evaluated under the sigmoid surrogate for ReLU's derivative.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "kktrecon/matrix.hpp"
#include "kktrecon/mlp.hpp"

namespace kktrecon {

struct ReconState {
  Matrix x;
  std::vector<double> lambda;
  /// +1 for the first m/2 rows, -1 for the rest.
  std::vector<double> y;

  std::size_t size() const { return x.rows(); }
  void validate() const;
};

struct ReconHyper {
  double learning_rate = 1e-3;
  double sigma_x = 1e-2;
  double alpha = 100.0;
  double lambda_min = 0.0;
  double w_stationary = 1.0;
  double w_lambda = 5.0;
  double w_prior = 1.0;
  std::size_t iterations = 100'000;
  double momentum = 0.9;

  void validate() const;
};

struct SweepRanges {
  double lr_min = 1e-5, lr_max = 1.0;                  // log-uniform
  double sigma_min = 1e-6, sigma_max = 1.0;            // log-uniform
  double alpha_min = 10.0, alpha_max = 500.0;          // uniform
  double lambda_min_min = 1e-4, lambda_min_max = 1.0;  // log-uniform
  std::size_t runs = 100;

  void validate() const;
};

/// Draws learning_rate, sigma_x, alpha and lambda_min; the remaining fields
/// are copied from `base`.
ReconHyper sample_hyper(const SweepRanges& ranges, const ReconHyper& base, std::uint64_t seed);

/// Rows i.i.d. N(0, sigma_x^2 I), lambda i.i.d. U[0, 1].
ReconState init_recon_state(std::size_t m, std::size_t d, double sigma_x, std::uint64_t seed);

struct StationaryTerm {
  double value = 0.0;
  /// theta - sum_i lambda_i y_i g_i
  std::vector<double> residual;
};

StationaryTerm loss_stationary(const ModelSpec& spec, const ParamVector& theta, const ReconState& state,
                               SurrogateConfig surrogate);
double loss_lambda(std::span<const double> lambda, double lambda_min);
double loss_prior(const Matrix& x);

struct ReconLoss {
  double total = 0.0;
  double stationary = 0.0;
  double lambda = 0.0;
  double prior = 0.0;
};

struct ReconGradient {
  ReconLoss loss;
  Matrix grad_x;
  std::vector<double> grad_lambda;
};

ReconGradient recon_loss_and_grads(const ModelSpec& spec, const ParamVector& theta, const ReconState& state,
                                   const ReconHyper& hyper);

struct ReconTracePoint {
  std::size_t iteration = 0;
  ReconLoss loss;
};

struct ReconRun {
  ReconState state;
  std::vector<ReconTracePoint> trace;
  ReconLoss final_loss;
  bool failed = false;
  std::string failure;
};

struct ReconOptions {
  /// Extra linear trace cadence on top of the geometric one; 0 disables.
  std::size_t trace_every = 0;
  std::function<void(const ReconTracePoint&)> progress;
};

/// Heavy-ball descent on (X, lambda) jointly. A non-finite loss stops the
/// run with `failed` set; `state` then holds the last finite iterate.
ReconRun run_reconstruction(const ModelSpec& spec, const ParamVector& theta, ReconState state0,
                            const ReconHyper& hyper, const ReconOptions& options = {});

struct PoolRun {
  std::size_t run_id = 0;
  std::uint64_t seed = 0;
  ReconHyper hyper;
  ReconLoss final_loss;
  bool failed = false;
  std::string failure;
  ReconState state;
};

/// All candidates of a sweep with their run metadata, in run order.
struct CandidatePool {
  std::size_t dim = 0;
  std::size_t m = 0;
  std::uint64_t master_seed = 0;
  std::vector<PoolRun> runs;

  /// Every candidate row of every run, run-major.
  Matrix candidates(bool include_failed = true) const;
  std::vector<double> lambdas(bool include_failed = true) const;
  std::size_t candidate_count() const { return runs.size() * m; }
};

std::uint64_t run_seed(std::uint64_t master_seed, std::size_t run_id);

/// Runs `ranges.runs` independent reconstructions on up to `workers`
/// threads. Run k's hyperparameters and initial state depend only on
/// (master_seed, k). A failing run is recorded, not propagated.
CandidatePool run_sweep(const ModelSpec& spec, const ParamVector& theta, const SweepRanges& ranges,
                        const ReconHyper& base, std::size_t m, std::uint64_t master_seed, std::size_t workers,
                        const std::function<void(const PoolRun&)>& on_done = {});

/// Like run_sweep but with fixed hyperparameters for every run.
CandidatePool run_fixed(const ModelSpec& spec, const ParamVector& theta, const ReconHyper& hyper, std::size_t runs,
                        std::size_t m, std::uint64_t master_seed, std::size_t workers,
                        const std::function<void(const PoolRun&)>& on_done = {});

/// `<path>` manifest, `<path>.f32` candidates (run-major, row-major) and
/// `<path>.csv` with one row per candidate.
void save_pool(const std::filesystem::path& path, const CandidatePool& pool);
CandidatePool load_pool(const std::filesystem::path& path);

}  // namespace kktrecon
