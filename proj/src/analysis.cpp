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


#include "kktrecon/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "kktrecon/error.hpp"
#include "kktrecon/kernels.hpp"

namespace kktrecon {

// ---------------------------------------------------------------------------
// similarity

std::vector<double> scale_to_unit(std::span<const double> x, bool* was_constant) {
  std::vector<double> out(x.size(), 0.5);
  if (x.empty()) {
    if (was_constant) *was_constant = true;
    return out;
  }
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const bool constant = !(hi > lo);
  if (was_constant) *was_constant = constant;
  if (constant) return out;
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) * inv;
  // guard the endpoints against rounding in (x - lo) * inv
  out[static_cast<std::size_t>(lo_it - x.begin())] = 0.0;
  out[static_cast<std::size_t>(hi_it - x.begin())] = 1.0;
  return out;
}

namespace {

struct Centered {
  std::vector<double> values;
  double norm = 0.0;
};

Centered center(std::span<const double> a) {
  Centered c;
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  c.values.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c.values[i] = a[i] - mean;
  c.norm = std::sqrt(kernels::dot(c.values, c.values));
  return c;
}

double ncc_centered(const Centered& a, const Centered& b) {
  const double r = kernels::dot(a.values, b.values) / (a.norm * b.norm);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace

double ncc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("ncc operands differ in length");
  if (a.empty()) throw Error("ncc of empty vectors is undefined");
  const Centered ca = center(a);
  const Centered cb = center(b);
  if (!(ca.norm > 0.0) || !(cb.norm > 0.0)) throw Error("ncc is undefined for a constant vector");
  return ncc_centered(ca, cb);
}

namespace {

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = 0.5 * static_cast<double>(size - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(std::span<const double> a, std::span<const double> b, const ImageShape& shape) {
  if (a.size() != b.size() || a.size() != shape.size()) throw DimensionError("ssim operands do not match the shape");
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const std::size_t wh = std::min<std::size_t>(11, shape.height);
  const std::size_t ww = std::min<std::size_t>(11, shape.width);
  const auto gy = gaussian_window(wh, 1.5);
  const auto gx = gaussian_window(ww, 1.5);
  const std::size_t C = shape.channels;
  auto at = [&](std::span<const double> img, std::size_t r, std::size_t c, std::size_t ch) {
    return img[(r * shape.width + c) * C + ch];
  };

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < C; ++ch) {
    for (std::size_t r0 = 0; r0 + wh <= shape.height; ++r0) {
      for (std::size_t c0 = 0; c0 + ww <= shape.width; ++c0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < wh; ++i) {
          for (std::size_t j = 0; j < ww; ++j) {
            const double w = gy[i] * gx[j];
            const double va = at(a, r0 + i, c0 + j, ch);
            const double vb = at(b, r0 + i, c0 + j, ch);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double var_a = saa - ma * ma;
        const double var_b = sbb - mb * mb;
        const double cov = sab - ma * mb;
        total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// matching

std::string MatchReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "rank,train_index,output,best_ncc,best_candidate,voters,ssim_voted,ssim_best\n";
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    out << k << ',' << r.train_index << ',' << r.output << ',' << r.best_ncc << ',' << r.best_candidate << ','
        << r.voters << ',' << r.ssim_voted << ',' << r.ssim_best << '\n';
  }
  return out.str();
}

MatchReport match_and_vote(const LabeledDataset& train, const Matrix& candidates, std::span<const double> outputs,
                           double vote_ratio, std::size_t workers) {
  if (candidates.rows() == 0) throw ConfigError("candidate pool is empty", "pool");
  if (candidates.cols() != train.dim()) throw DimensionError("candidate dimension differs from the training set");
  if (!outputs.empty() && outputs.size() != train.size()) throw DimensionError("one output per sample expected");
  const std::size_t d = train.dim();

  std::vector<std::vector<double>> scaled(candidates.rows());
  std::vector<Centered> centered(candidates.rows());
  for (std::size_t k = 0; k < candidates.rows(); ++k) {
    scaled[k] = scale_to_unit(candidates.row(k));
    centered[k] = center(scaled[k]);
  }

  MatchReport report;
  report.shape = train.shape;
  report.records.resize(train.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    std::vector<double> scores(candidates.rows());
    for (std::size_t i = next++; i < train.size(); i = next++) {
      MatchRecord& rec = report.records[i];
      rec.train_index = i;
      rec.output = outputs.empty() ? 0.0 : outputs[i];
      const auto target = scale_to_unit(train.denormalized(i));
      const Centered ct = center(target);
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < candidates.rows(); ++k) {
        scores[k] = (ct.norm > 0.0 && centered[k].norm > 0.0) ? ncc_centered(ct, centered[k])
                                                              : -std::numeric_limits<double>::infinity();
        if (scores[k] > best) {
          best = scores[k];
          rec.best_candidate = k;
        }
      }
      rec.best_ncc = best;
      rec.voted.assign(d, 0.0);
      if (best > 0.0) {
        for (std::size_t k = 0; k < candidates.rows(); ++k) {
          if (scores[k] >= vote_ratio * best) {
            kernels::axpy(1.0, scaled[k], rec.voted);
            ++rec.voters;
          }
        }
        kernels::scale(1.0 / static_cast<double>(rec.voters), rec.voted);
      } else {
        rec.voted = scaled[rec.best_candidate];
        rec.voters = 1;
      }
      rec.ssim_voted = ssim(rec.voted, target, train.shape);
      rec.ssim_best = ssim(scaled[rec.best_candidate], target, train.shape);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, train.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  std::stable_sort(report.records.begin(), report.records.end(),
                   [](const MatchRecord& a, const MatchRecord& b) { return a.ssim_voted > b.ssim_voted; });
  return report;
}

std::vector<std::size_t> dedup_2d(const Matrix& points, std::span<const double> lambdas, double lambda_threshold,
                                  double radius, std::uint64_t seed) {
  if (lambdas.size() != points.rows()) throw DimensionError("one lambda per point expected");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (lambdas[i] >= lambda_threshold) order.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool close = false;
    for (std::size_t k : kept) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < points.cols(); ++j) {
        const double diff = points(i, j) - points(k, j);
        d2 += diff * diff;
      }
      if (d2 < radius * radius) {
        close = true;
        break;
      }
    }
    if (!close) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::size_t count_recovered(const LabeledDataset& train, const Matrix& candidates, std::span<const std::size_t> rows,
                            double radius) {
  std::size_t recovered = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t k : rows) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < train.dim(); ++j) {
        const double diff = train.x(i, j) - candidates(k, j);
        d2 += diff * diff;
      }
      if (d2 < radius * radius) {
        ++recovered;
        break;
      }
    }
  }
  return recovered;
}

// ---------------------------------------------------------------------------
// KKT diagnostic

namespace {

void symmetric_matvec(const Matrix& h, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < h.rows(); ++i) out[i] = kernels::dot(h.row(i), x);
}

double projected_gradient_norm(std::span<const double> lambda, std::span<const double> grad) {
  double s = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const double g = lambda[i] > 0.0 ? grad[i] : std::min(grad[i], 0.0);
    s += g * g;
  }
  return std::sqrt(s);
}

}  // namespace

KktDiagnostic solve_nnls(const Matrix& hessian, std::span<const double> linear, double constant,
                         const KktOptions& options) {
  const std::size_t n = linear.size();
  if (hessian.rows() != n || hessian.cols() != n) throw DimensionError("NNLS Hessian must be n x n");
  KktDiagnostic out;
  out.lambda.assign(n, 0.0);
  std::vector<double> h_lambda(n, 0.0);
  std::vector<double> grad(n);
  std::vector<double> trial(n);
  std::vector<double> step(n);
  std::vector<double> h_step(n);

  auto objective = [&](std::span<const double> l, std::span<const double> hl) {
    return constant - 2.0 * kernels::dot(linear, l) + kernels::dot(l, hl);
  };
  auto gradient = [&] {
    for (std::size_t i = 0; i < n; ++i) grad[i] = 2.0 * (h_lambda[i] - linear[i]);
  };

  double frob = 0.0;
  for (double v : hessian.values()) frob += v * v;
  frob = std::sqrt(frob);
  double t = frob > 0.0 ? 1.0 / (2.0 * frob) : 1.0;

  gradient();
  const double reference = projected_gradient_norm(out.lambda, grad);
  double f = objective(out.lambda, h_lambda);
  out.objective_trace.push_back(f);
  out.projected_gradient = reference;
  if (!(reference > 0.0)) {
    out.converged = true;
    return out;
  }
  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    // Accept when d'Hd <= |d|^2 / (2t), the exact sufficient-decrease test
    // for a quadratic objective.
    t *= 2.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = std::max(out.lambda[i] - t * grad[i], 0.0);
        step[i] = trial[i] - out.lambda[i];
      }
      symmetric_matvec(hessian, step, h_step);
      if (kernels::dot(step, h_step) <= kernels::dot(step, step) / (2.0 * t)) break;
      t *= 0.5;
    }
    out.lambda.swap(trial);
    kernels::axpy(1.0, h_step, h_lambda);
    gradient();
    const double f_next = objective(out.lambda, h_lambda);
    f = std::min(f, f_next);
    out.iterations = it;
    if ((it & (it - 1)) == 0) out.objective_trace.push_back(f_next);
    out.projected_gradient = projected_gradient_norm(out.lambda, grad);
    if (out.projected_gradient <= options.tolerance * reference) {
      out.converged = true;
      break;
    }
    // Refresh H*lambda now and then so the incremental update does not drift.
    if (it % 1024 == 0) {
      symmetric_matvec(hessian, out.lambda, h_lambda);
      gradient();
    }
  }
  out.objective_trace.push_back(objective(out.lambda, h_lambda));
  return out;
}

KktDiagnostic kkt_residual(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& dataset,
                           const KktOptions& options) {
  if (dataset.empty()) throw ConfigError("dataset is empty", "dataset");
  const std::size_t n = dataset.size();
  const BatchEvaluation eval(spec, theta, dataset.x, SurrogateConfig::exact());
  Matrix h = eval.param_gradient_gram();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) h(i, j) *= dataset.y[i] * dataset.y[j];
  }
  const auto g_dot_theta = eval.directional_derivatives(theta.values());
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = dataset.y[i] * g_dot_theta[i];
  const double theta_sq = kernels::dot(theta.values(), theta.values());

  KktDiagnostic diag = solve_nnls(h, c, theta_sq, options);

  std::vector<double> coeffs(n);
  for (std::size_t i = 0; i < n; ++i) coeffs[i] = -diag.lambda[i] * dataset.y[i];
  std::vector<double> r(theta.vector());
  eval.accumulate_param_gradient(coeffs, r);
  diag.relative_residual = theta_sq > 0.0 ? norm2(r) / std::sqrt(theta_sq) : 0.0;
  diag.margins.resize(n);
  const auto out = eval.outputs();
  for (std::size_t i = 0; i < n; ++i) diag.margins[i] = dataset.y[i] * out[i];
  return diag;
}

// ---------------------------------------------------------------------------
// margin analysis and baselines

std::vector<ScatterRow> scatter_margin_vs_ssim(const ModelSpec& spec, const ParamVector& theta,
                                               const LabeledDataset& train, const MatchReport& report) {
  if (report.records.size() != train.size()) throw DimensionError("report must cover every training sample");
  const auto outputs = forward_batch(spec, theta, train.x);
  std::vector<ScatterRow> rows(train.size());
  std::vector<bool> seen(train.size(), false);
  for (const auto& rec : report.records) {
    if (rec.train_index >= train.size() || seen[rec.train_index]) {
      throw DimensionError("report train indices are not a permutation");
    }
    seen[rec.train_index] = true;
    rows[rec.train_index] = {rec.train_index, train.y[rec.train_index] * outputs[rec.train_index], rec.ssim_voted};
  }
  return rows;
}

InversionResult model_inversion_baseline(const ModelSpec& spec, const ParamVector& theta, double sigma, double lr,
                                         std::size_t iterations, int sign, std::uint64_t seed) {
  if (sign != 1 && sign != -1) throw ConfigError("sign must be +1 or -1", "sign");
  if (!(sigma >= 0.0) || !(lr >= 0.0)) throw ConfigError("sigma and lr must be non-negative", "inversion");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(1, spec.input_dim());
  for (double& v : x.values()) v = sigma * normal(rng);
  InversionResult result;
  const double direction = static_cast<double>(sign);
  for (std::size_t it = 0;; ++it) {
    const BatchEvaluation eval(spec, theta, x, SurrogateConfig::exact());
    const double phi = eval.outputs()[0];
    if (!std::isfinite(phi)) throw NumericalError("model inversion diverged", it == 0 ? 0 : it - 1);
    if (it == 0) result.initial_output = phi;
    if ((it & (it - 1)) == 0 || it == iterations) result.output_trace.push_back(phi);
    result.final_output = phi;
    if (it == iterations) break;
    const Matrix grad = eval.input_gradient(std::span(&direction, 1));
    kernels::axpy(lr, grad.values(), x.values());
  }
  result.x.assign(x.values().begin(), x.values().end());
  return result;
}

std::vector<std::vector<double>> export_first_layer_weights(const ModelSpec& spec, const ParamVector& theta) {
  const LayerLayout first = spec.layout().front();
  std::vector<std::vector<double>> rows;
  rows.reserve(first.out);
  for (std::size_t u = 0; u < first.out; ++u) {
    rows.push_back(scale_to_unit(theta.values().subspan(first.weight_offset + u * first.in, first.in)));
  }
  return rows;
}

}  // namespace kktrecon
