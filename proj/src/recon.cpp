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


#include "kktrecon/recon.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "kktrecon/error.hpp"
#include "kktrecon/io.hpp"
#include "kktrecon/kernels.hpp"

namespace kktrecon {

void ReconState::validate() const {
  const std::size_t m = x.rows();
  if (m == 0 || m % 2 != 0) throw ConfigError("candidate count must be even and positive", "reconstruction.m");
  if (lambda.size() != m || y.size() != m) throw DimensionError("lambda/label lengths differ from candidate count");
}

void ReconHyper::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("must be non-negative", "reconstruction.learning_rate");
  if (!(sigma_x >= 0.0)) throw ConfigError("must be non-negative", "reconstruction.sigma_x");
  if (!(alpha > 0.0)) throw ConfigError("must be positive", "reconstruction.alpha");
  if (!(lambda_min >= 0.0)) throw ConfigError("must be non-negative", "reconstruction.lambda_min");
  if (!(w_stationary >= 0.0 && w_lambda >= 0.0 && w_prior >= 0.0)) {
    throw ConfigError("loss weights must be non-negative", "reconstruction.weights");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("must lie in [0, 1)", "reconstruction.momentum");
}

void SweepRanges::validate() const {
  auto check = [](double lo, double hi, bool log_scale, const char* field) {
    if (!(lo <= hi) || (log_scale && !(lo > 0.0))) throw ConfigError("invalid range", field);
  };
  check(lr_min, lr_max, true, "reconstruction.sweep.learning_rate");
  check(sigma_min, sigma_max, true, "reconstruction.sweep.sigma_x");
  check(alpha_min, alpha_max, false, "reconstruction.sweep.alpha");
  if (!(alpha_min > 0.0)) throw ConfigError("must be positive", "reconstruction.sweep.alpha");
  check(lambda_min_min, lambda_min_max, true, "reconstruction.sweep.lambda_min");
  if (runs < 1) throw ConfigError("must be at least 1", "reconstruction.sweep.runs");
}

ReconHyper sample_hyper(const SweepRanges& ranges, const ReconHyper& base, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) { return std::exp(std::log(lo) + unit(rng) * std::log(hi / lo)); };
  ReconHyper h = base;
  h.learning_rate = log_uniform(ranges.lr_min, ranges.lr_max);
  h.sigma_x = log_uniform(ranges.sigma_min, ranges.sigma_max);
  h.alpha = ranges.alpha_min + unit(rng) * (ranges.alpha_max - ranges.alpha_min);
  h.lambda_min = log_uniform(ranges.lambda_min_min, ranges.lambda_min_max);
  return h;
}

ReconState init_recon_state(std::size_t m, std::size_t d, double sigma_x, std::uint64_t seed) {
  if (m == 0 || m % 2 != 0) throw ConfigError("candidate count must be even and positive", "reconstruction.m");
  ReconState state;
  state.x = Matrix(m, d);
  state.lambda.resize(m);
  state.y.resize(m);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : state.x.values()) v = sigma_x * normal(rng);
  for (double& v : state.lambda) v = unit(rng);
  for (std::size_t i = 0; i < m; ++i) state.y[i] = i < m / 2 ? 1.0 : -1.0;
  return state;
}

namespace {

std::vector<double> residual_from(const BatchEvaluation& eval, const ParamVector& theta, const ReconState& state) {
  std::vector<double> coeffs(state.size());
  for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] = -state.lambda[i] * state.y[i];
  std::vector<double> r(theta.vector());
  eval.accumulate_param_gradient(coeffs, r);
  return r;
}

void check_state(const ModelSpec& spec, const ParamVector& theta, const ReconState& state) {
  state.validate();
  if (state.x.cols() != spec.input_dim()) throw DimensionError("candidate dimension differs from the model input");
  if (theta.size() != spec.param_count()) throw DimensionError("theta length differs from the spec");
}

}  // namespace

StationaryTerm loss_stationary(const ModelSpec& spec, const ParamVector& theta, const ReconState& state,
                               SurrogateConfig surrogate) {
  check_state(spec, theta, state);
  const BatchEvaluation eval(spec, theta, state.x, surrogate);
  StationaryTerm term;
  term.residual = residual_from(eval, theta, state);
  term.value = kernels::dot(term.residual, term.residual);
  return term;
}

double loss_lambda(std::span<const double> lambda, double lambda_min) {
  double total = 0.0;
  for (double l : lambda) total += std::max(lambda_min - l, 0.0);
  return total;
}

double loss_prior(const Matrix& x) {
  if (x.empty()) return 0.0;
  double total = 0.0;
  for (double z : x.values()) total += std::max(z - 1.0, 0.0) + std::max(-z - 1.0, 0.0);
  return total / static_cast<double>(x.size());
}

ReconGradient recon_loss_and_grads(const ModelSpec& spec, const ParamVector& theta, const ReconState& state,
                                   const ReconHyper& hyper) {
  check_state(spec, theta, state);
  const std::size_t m = state.size();
  const BatchEvaluation eval(spec, theta, state.x, SurrogateConfig::sigmoid(hyper.alpha));
  const std::vector<double> r = residual_from(eval, theta, state);

  ReconGradient out;
  out.loss.stationary = kernels::dot(r, r);
  out.loss.lambda = loss_lambda(state.lambda, hyper.lambda_min);
  out.loss.prior = loss_prior(state.x);
  out.loss.total =
      hyper.w_stationary * out.loss.stationary + hyper.w_lambda * out.loss.lambda + hyper.w_prior * out.loss.prior;

  std::vector<double> row_scale(m);
  for (std::size_t i = 0; i < m; ++i) row_scale[i] = -2.0 * hyper.w_stationary * state.lambda[i] * state.y[i];
  const std::vector<double> g_dot_r = eval.directional_input_gradient(r, row_scale, out.grad_x);

  out.grad_lambda.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double hinge = state.lambda[i] < hyper.lambda_min ? -1.0 : 0.0;
    out.grad_lambda[i] = -2.0 * hyper.w_stationary * state.y[i] * g_dot_r[i] + hyper.w_lambda * hinge;
  }
  const double prior_scale = hyper.w_prior / static_cast<double>(state.x.size());
  const double* xs = state.x.data();
  double* gx = out.grad_x.data();
  for (std::size_t k = 0; k < state.x.size(); ++k) {
    if (xs[k] > 1.0) {
      gx[k] += prior_scale;
    } else if (xs[k] < -1.0) {
      gx[k] -= prior_scale;
    }
  }
  return out;
}

namespace {

bool is_finite(const ReconLoss& l) { return std::isfinite(l.total); }

bool all_finite(const ReconGradient& g) {
  for (double v : g.grad_x.values()) {
    if (!std::isfinite(v)) return false;
  }
  for (double v : g.grad_lambda) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ReconLoss loss_only(const ModelSpec& spec, const ParamVector& theta, const ReconState& state,
                    const ReconHyper& hyper) {
  ReconLoss l;
  l.stationary = loss_stationary(spec, theta, state, SurrogateConfig::sigmoid(hyper.alpha)).value;
  l.lambda = loss_lambda(state.lambda, hyper.lambda_min);
  l.prior = loss_prior(state.x);
  l.total = hyper.w_stationary * l.stationary + hyper.w_lambda * l.lambda + hyper.w_prior * l.prior;
  return l;
}

}  // namespace

ReconRun run_reconstruction(const ModelSpec& spec, const ParamVector& theta, ReconState state0,
                            const ReconHyper& hyper, const ReconOptions& options) {
  hyper.validate();
  check_state(spec, theta, state0);
  ReconRun run;
  run.state = std::move(state0);
  Matrix velocity_x(run.state.x.rows(), run.state.x.cols());
  std::vector<double> velocity_lambda(run.state.size(), 0.0);

  auto trace = [&](std::size_t iteration, const ReconLoss& loss) {
    run.trace.push_back({iteration, loss});
    if (options.progress) options.progress(run.trace.back());
  };

  ReconState last_finite = run.state;
  for (std::size_t it = 0; it < hyper.iterations; ++it) {
    const ReconGradient g = recon_loss_and_grads(spec, theta, run.state, hyper);
    if (!is_finite(g.loss) || !all_finite(g)) {
      run.state = std::move(last_finite);
      run.failed = true;
      run.failure = "non-finite reconstruction loss at iteration " + std::to_string(it);
      trace(it, g.loss);
      run.final_loss = g.loss;
      return run;
    }
    if ((it & (it - 1)) == 0 || (options.trace_every > 0 && it % options.trace_every == 0)) trace(it, g.loss);
    last_finite.x = run.state.x;
    last_finite.lambda = run.state.lambda;

    kernels::scale(hyper.momentum, velocity_x.values());
    kernels::axpy(-hyper.learning_rate, g.grad_x.values(), velocity_x.values());
    kernels::axpy(1.0, velocity_x.values(), run.state.x.values());
    kernels::scale(hyper.momentum, velocity_lambda);
    kernels::axpy(-hyper.learning_rate, g.grad_lambda, velocity_lambda);
    kernels::axpy(1.0, velocity_lambda, run.state.lambda);
  }
  run.final_loss = loss_only(spec, theta, run.state, hyper);
  if (!is_finite(run.final_loss)) {
    run.failed = true;
    run.failure = "non-finite reconstruction loss at iteration " + std::to_string(hyper.iterations);
  }
  trace(hyper.iterations, run.final_loss);
  return run;
}

// ---------------------------------------------------------------------------
// sweeps

std::uint64_t run_seed(std::uint64_t master_seed, std::size_t run_id) {
  // splitmix64 over (master, run) so sub-seeds are independent of run count
  std::uint64_t z = master_seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(run_id) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

using HyperFor = std::function<ReconHyper(std::size_t run_id, std::uint64_t seed)>;

CandidatePool execute_runs(const ModelSpec& spec, const ParamVector& theta, std::size_t runs, std::size_t m,
                           std::uint64_t master_seed, std::size_t workers, const HyperFor& hyper_for,
                           const std::function<void(const PoolRun&)>& on_done) {
  if (m == 0 || m % 2 != 0) throw ConfigError("candidate count must be even and positive", "reconstruction.m");
  CandidatePool pool;
  pool.dim = spec.input_dim();
  pool.m = m;
  pool.master_seed = master_seed;
  pool.runs.resize(runs);

  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < runs; k = next++) {
      PoolRun& out = pool.runs[k];
      out.run_id = k;
      out.seed = run_seed(master_seed, k);
      out.hyper = hyper_for(k, out.seed);
      try {
        ReconState init = init_recon_state(m, pool.dim, out.hyper.sigma_x, out.seed ^ 0x5eedull);
        ReconRun result = run_reconstruction(spec, theta, std::move(init), out.hyper);
        out.final_loss = result.final_loss;
        out.failed = result.failed;
        out.failure = result.failure;
        out.state = std::move(result.state);
      } catch (const std::exception& e) {
        out.failed = true;
        out.failure = e.what();
        out.state = init_recon_state(m, pool.dim, 0.0, 0);
      }
      if (on_done) {
        std::lock_guard lock(report_mutex);
        on_done(out);
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, runs));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool_threads;
    for (std::size_t t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
  }
  return pool;
}

}  // namespace

CandidatePool run_sweep(const ModelSpec& spec, const ParamVector& theta, const SweepRanges& ranges,
                        const ReconHyper& base, std::size_t m, std::uint64_t master_seed, std::size_t workers,
                        const std::function<void(const PoolRun&)>& on_done) {
  ranges.validate();
  base.validate();
  return execute_runs(
      spec, theta, ranges.runs, m, master_seed, workers,
      [&](std::size_t, std::uint64_t seed) { return sample_hyper(ranges, base, seed); }, on_done);
}

CandidatePool run_fixed(const ModelSpec& spec, const ParamVector& theta, const ReconHyper& hyper, std::size_t runs,
                        std::size_t m, std::uint64_t master_seed, std::size_t workers,
                        const std::function<void(const PoolRun&)>& on_done) {
  hyper.validate();
  if (runs < 1) throw ConfigError("must be at least 1", "reconstruction.runs");
  return execute_runs(
      spec, theta, runs, m, master_seed, workers, [&](std::size_t, std::uint64_t) { return hyper; }, on_done);
}

Matrix CandidatePool::candidates(bool include_failed) const {
  std::size_t rows = 0;
  for (const auto& run : runs) rows += (include_failed || !run.failed) ? run.state.size() : 0;
  Matrix out(rows, dim);
  std::size_t r = 0;
  for (const auto& run : runs) {
    if (!include_failed && run.failed) continue;
    std::copy(run.state.x.values().begin(), run.state.x.values().end(), out.data() + r * dim);
    r += run.state.size();
  }
  return out;
}

std::vector<double> CandidatePool::lambdas(bool include_failed) const {
  std::vector<double> out;
  for (const auto& run : runs) {
    if (!include_failed && run.failed) continue;
    out.insert(out.end(), run.state.lambda.begin(), run.state.lambda.end());
  }
  return out;
}

namespace {

nlohmann::json hyper_to_json(const ReconHyper& h) {
  return {{"learning_rate", h.learning_rate}, {"sigma_x", h.sigma_x},         {"alpha", h.alpha},
          {"lambda_min", h.lambda_min},       {"w_stationary", h.w_stationary}, {"w_lambda", h.w_lambda},
          {"w_prior", h.w_prior},             {"iterations", h.iterations},     {"momentum", h.momentum}};
}

ReconHyper hyper_from_json(const nlohmann::json& j) {
  ReconHyper h;
  h.learning_rate = j.at("learning_rate").get<double>();
  h.sigma_x = j.at("sigma_x").get<double>();
  h.alpha = j.at("alpha").get<double>();
  h.lambda_min = j.at("lambda_min").get<double>();
  h.w_stationary = j.at("w_stationary").get<double>();
  h.w_lambda = j.at("w_lambda").get<double>();
  h.w_prior = j.at("w_prior").get<double>();
  h.iterations = j.at("iterations").get<std::size_t>();
  h.momentum = j.at("momentum").get<double>();
  return h;
}

nlohmann::json loss_to_json(const ReconLoss& l) {
  return {{"total", l.total}, {"stationary", l.stationary}, {"lambda", l.lambda}, {"prior", l.prior}};
}

// JSON has no NaN/inf; failed runs may carry them.
double json_number(const nlohmann::json& v) { return v.is_null() ? NAN : v.get<double>(); }

}  // namespace

void save_pool(const std::filesystem::path& path, const CandidatePool& pool) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : pool.runs) {
    runs.push_back({{"run_id", run.run_id},
                    {"seed", run.seed},
                    {"hyper", hyper_to_json(run.hyper)},
                    {"final_loss", loss_to_json(run.final_loss)},
                    {"failed", run.failed},
                    {"failure", run.failure}});
  }
  std::filesystem::path blob = path;
  blob += ".f32";
  std::filesystem::path lambda_blob = path;
  lambda_blob += ".lambda.f32";
  write_f32_blob(blob, pool.candidates().values());
  write_f32_blob(lambda_blob, pool.lambdas());
  write_json_file(path, {{"format", "kktrecon-pool"},
                         {"version", kFormatVersion},
                         {"dim", pool.dim},
                         {"m", pool.m},
                         {"master_seed", pool.master_seed},
                         {"candidates", blob.filename().string()},
                         {"lambdas", lambda_blob.filename().string()},
                         {"runs", runs}});

  std::filesystem::path csv = path;
  csv += ".csv";
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw Error("cannot write '" + csv.string() + "'");
  out.precision(10);
  out << "run_id,candidate,label,learning_rate,sigma_x,alpha,lambda_min,loss_total,loss_stationary,loss_lambda,"
         "loss_prior,failed,lambda\n";
  for (const auto& run : pool.runs) {
    for (std::size_t i = 0; i < run.state.size(); ++i) {
      out << run.run_id << ',' << i << ',' << run.state.y[i] << ',' << run.hyper.learning_rate << ','
          << run.hyper.sigma_x << ',' << run.hyper.alpha << ',' << run.hyper.lambda_min << ','
          << run.final_loss.total << ',' << run.final_loss.stationary << ',' << run.final_loss.lambda << ','
          << run.final_loss.prior << ',' << (run.failed ? 1 : 0) << ',' << run.state.lambda[i] << '\n';
    }
  }
}

CandidatePool load_pool(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("format", "") != "kktrecon-pool") throw ParseError(path.string() + ": not a candidate pool manifest");
  CandidatePool pool;
  try {
    pool.dim = j.at("dim").get<std::size_t>();
    pool.m = j.at("m").get<std::size_t>();
    pool.master_seed = j.at("master_seed").get<std::uint64_t>();
    const auto& runs = j.at("runs");
    const std::size_t total = runs.size() * pool.m;
    const auto base = path.parent_path();
    const auto x = read_f32_blob(base / j.at("candidates").get<std::string>(), total * pool.dim);
    const auto lambda = read_f32_blob(base / j.at("lambdas").get<std::string>(), total);
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto& r = runs[k];
      PoolRun run;
      run.run_id = r.at("run_id").get<std::size_t>();
      run.seed = r.at("seed").get<std::uint64_t>();
      run.hyper = hyper_from_json(r.at("hyper"));
      const auto& fl = r.at("final_loss");
      run.final_loss = {json_number(fl.at("total")), json_number(fl.at("stationary")),
                        json_number(fl.at("lambda")), json_number(fl.at("prior"))};
      run.failed = r.at("failed").get<bool>();
      run.failure = r.at("failure").get<std::string>();
      const std::size_t offset = k * pool.m;
      run.state.x = Matrix(pool.m, pool.dim,
                           std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(offset * pool.dim),
                                               x.begin() + static_cast<std::ptrdiff_t>((offset + pool.m) * pool.dim)));
      run.state.lambda.assign(lambda.begin() + static_cast<std::ptrdiff_t>(offset),
                              lambda.begin() + static_cast<std::ptrdiff_t>(offset + pool.m));
      run.state.y.resize(pool.m);
      for (std::size_t i = 0; i < pool.m; ++i) run.state.y[i] = i < pool.m / 2 ? 1.0 : -1.0;
      pool.runs.push_back(std::move(run));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return pool;
}

}  // namespace kktrecon
