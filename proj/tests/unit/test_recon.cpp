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
#include <filesystem>
#include <random>
#include <vector>

#include "doctest.h"
#include "kktrecon/error.hpp"
#include "kktrecon/recon.hpp"
#include "test_support.hpp"

using namespace kktrecon;
using kktrecon::testing::naive_forward;
using kktrecon::testing::normal_vector;
using kktrecon::testing::random_theta;
using kktrecon::testing::relative_error;

namespace {

// Linear model Phi = w.x + b on two symmetric points; theta is exactly
// lambda1 * (x1, 1) - lambda2 * (x2, 1) with lambda1 = lambda2 = 0.5.
struct ExactKkt {
  ModelSpec spec = ModelSpec::homogeneous({1, 1});
  ParamVector theta{std::vector<double>{1.0, 0.0}};
  ReconState state;
  ExactKkt() {
    state.x = Matrix(2, 1, std::vector<double>{1.0, -1.0});
    state.lambda = {0.5, 0.5};
    state.y = {1.0, -1.0};
  }
};

ReconState random_state(std::size_t m, std::size_t d, std::mt19937_64& rng) {
  ReconState s = init_recon_state(m, d, 0.8, rng());
  std::uniform_real_distribution<double> lam(-1.0, 2.0);
  for (double& l : s.lambda) l = lam(rng);
  return s;
}

// Total loss through an independent path: explicit per-candidate gradients.
double brute_total(const ModelSpec& spec, const ParamVector& theta, const ReconState& s, const ReconHyper& h) {
  std::vector<double> r(theta.vector());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto g = grad_theta(spec, theta, s.x.row(i), SurrogateConfig::sigmoid(h.alpha));
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= s.lambda[i] * s.y[i] * g[j];
  }
  double stat = 0.0;
  for (double v : r) stat += v * v;
  return h.w_stationary * stat + h.w_lambda * loss_lambda(s.lambda, h.lambda_min) + h.w_prior * loss_prior(s.x);
}

bool away_from_kinks(const ModelSpec& spec, const ParamVector& theta, const ReconState& s, const ReconHyper& h) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    double closest = 0.0;
    naive_forward(spec, theta.values(), s.x.row(i), &closest);
    if (closest < 5e-2) return false;
    if (std::abs(s.lambda[i] - h.lambda_min) < 1e-2) return false;
    for (double v : s.x.row(i)) {
      if (std::abs(std::abs(v) - 1.0) < 1e-2) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("init_recon_state") {
  const ReconState s = init_recon_state(1000, 3, 0.1, 7);
  CHECK(s.size() == 1000);
  CHECK(std::count(s.y.begin(), s.y.end(), 1.0) == 500);
  CHECK(s.y[499] == 1.0);
  CHECK(s.y[500] == -1.0);
  for (double l : s.lambda) CHECK((l >= 0.0 && l <= 1.0));
  const ReconState zero = init_recon_state(4, 3, 0.0, 1);
  for (double v : zero.x.values()) CHECK(v == 0.0);
  CHECK(init_recon_state(6, 2, 1.0, 3).x == init_recon_state(6, 2, 1.0, 3).x);
  CHECK_THROWS_AS(init_recon_state(3, 2, 1.0, 1), ConfigError);
}

TEST_CASE("loss_stationary closed forms") {
  std::mt19937_64 rng(1);
  const ModelSpec spec = ModelSpec::homogeneous({4, 4, 1});
  const ParamVector theta = random_theta(spec, rng);
  ReconState s = init_recon_state(2, 4, 1.0, 2);
  const auto surrogate = SurrogateConfig::sigmoid(20.0);

  s.lambda = {0.0, 0.0};
  const double theta_sq = kktrecon::testing::dot(theta.values(), theta.values());
  CHECK(loss_stationary(spec, theta, s, surrogate).value == doctest::Approx(theta_sq).epsilon(1e-12));

  // One active candidate with the least-squares optimal coefficient.
  const auto g = grad_theta(spec, theta, s.x.row(0), surrogate);
  const double tg = kktrecon::testing::dot(theta.values(), g);
  const double gg = kktrecon::testing::dot(g, g);
  s.lambda = {s.y[0] * tg / gg, 0.0};
  CHECK(loss_stationary(spec, theta, s, surrogate).value == doctest::Approx(theta_sq - tg * tg / gg).epsilon(1e-10));

  const ExactKkt kkt;
  const auto term = loss_stationary(kkt.spec, kkt.theta, kkt.state, surrogate);
  CHECK(std::abs(term.value) < 1e-20);
}

TEST_CASE("loss_stationary scales linearly with theta inside the residual") {
  // For a linear model g is independent of theta, so scaling theta and
  // lambda together scales the residual.
  const ModelSpec spec = ModelSpec::homogeneous({2, 1});
  ReconState s = init_recon_state(2, 2, 1.0, 9);
  const ParamVector theta(std::vector<double>{0.3, -0.2, 0.1});
  const auto a = loss_stationary(spec, theta, s, SurrogateConfig::sigmoid(5.0));
  ReconState s2 = s;
  for (double& l : s2.lambda) l *= 3.0;
  const ParamVector theta3(std::vector<double>{0.9, -0.6, 0.3});
  const auto b = loss_stationary(spec, theta3, s2, SurrogateConfig::sigmoid(5.0));
  for (std::size_t j = 0; j < a.residual.size(); ++j) CHECK(b.residual[j] == doctest::Approx(3.0 * a.residual[j]));
}

TEST_CASE("loss_lambda and loss_prior arithmetic") {
  CHECK(loss_lambda(std::vector<double>{0.5, 1.2}, 0.0) == 0.0);
  CHECK(loss_lambda(std::vector<double>{-0.3, 0.2}, 0.0) == doctest::Approx(0.3));
  CHECK(loss_lambda(std::vector<double>{0.05}, 0.1) == doctest::Approx(0.05));
  CHECK(loss_prior(Matrix(2, 2, std::vector<double>{1.0, -1.0, 0.5, 0.0})) == 0.0);
  CHECK(loss_prior(Matrix(1, 3, std::vector<double>{1.5, 0.0, 0.0})) == doctest::Approx(0.5 / 3.0));
  CHECK(loss_prior(Matrix(1, 1, std::vector<double>{-2.0})) == doctest::Approx(1.0));
}

TEST_CASE("recon_loss_and_grads matches central differences of the total loss") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> alpha(2.0, 10.0);
  const ModelSpec small = ModelSpec::homogeneous({4, 4, 1});
  const ModelSpec deep = ModelSpec::homogeneous({4, 4, 4, 1});
  int checked = 0;
  for (const ModelSpec* spec : {&small, &deep}) {
    for (int trial = 0; trial < 20;) {
      const ParamVector theta = random_theta(*spec, rng);
      const std::size_t m = 2 + 2 * (trial % 2);
      ReconState s = random_state(m, 4, rng);
      ReconHyper h;
      h.alpha = alpha(rng);
      h.lambda_min = 0.3;
      if (!away_from_kinks(*spec, theta, s, h)) continue;
      ++trial;
      const ReconGradient g = recon_loss_and_grads(*spec, theta, s, h);
      CHECK(g.loss.total == doctest::Approx(brute_total(*spec, theta, s, h)).epsilon(1e-10));

      auto fd_x = kktrecon::testing::central_difference(
          [&](std::span<const double> x) {
            ReconState t = s;
            std::copy(x.begin(), x.end(), t.x.data());
            return brute_total(*spec, theta, t, h);
          },
          s.x.values(), 1e-5);
      auto fd_l = kktrecon::testing::central_difference(
          [&](std::span<const double> l) {
            ReconState t = s;
            t.lambda.assign(l.begin(), l.end());
            return brute_total(*spec, theta, t, h);
          },
          s.lambda, 1e-5);
      CHECK(relative_error(g.grad_x.values(), fd_x) < 1e-4);
      CHECK(relative_error(g.grad_lambda, fd_l) < 1e-4);
      ++checked;
    }
  }
  CHECK(checked == 40);
}

TEST_CASE("a zero coefficient leaves only the prior in the candidate gradient") {
  std::mt19937_64 rng(4);
  const ModelSpec spec = ModelSpec::homogeneous({3, 5, 1});
  const ParamVector theta = random_theta(spec, rng);
  ReconState s = init_recon_state(2, 3, 1.0, 5);
  s.x(0, 0) = 1.7;
  s.x(0, 1) = -0.2;
  s.x(0, 2) = -3.0;
  s.lambda[0] = 0.0;
  ReconHyper h;
  h.w_prior = 2.0;
  const ReconGradient g = recon_loss_and_grads(spec, theta, s, h);
  const double unit = 2.0 / 6.0;
  CHECK(g.grad_x(0, 0) == doctest::Approx(unit));
  CHECK(g.grad_x(0, 1) == 0.0);
  CHECK(g.grad_x(0, 2) == doctest::Approx(-unit));
}

TEST_CASE("exact-KKT state has zero loss and vanishing gradients") {
  const ExactKkt kkt;
  ReconHyper h;
  h.lambda_min = 0.1;
  const ReconGradient g = recon_loss_and_grads(kkt.spec, kkt.theta, kkt.state, h);
  CHECK(std::abs(g.loss.total) < 1e-10);
  for (double v : g.grad_x.values()) CHECK(std::abs(v) < 1e-10);
  for (double v : g.grad_lambda) CHECK(std::abs(v) < 1e-10);
}

TEST_CASE("padding with zero-coefficient candidates keeps the loss at the prior") {
  const ExactKkt kkt;
  ReconState padded = kkt.state;
  padded.x = Matrix(4, 1, std::vector<double>{1.0, 0.3, -1.0, 0.7});
  padded.lambda = {0.5, 0.0, 0.5, 0.0};
  padded.y = {1.0, 1.0, -1.0, -1.0};
  ReconHyper h;
  h.lambda_min = 0.0;
  const ReconGradient g = recon_loss_and_grads(kkt.spec, kkt.theta, padded, h);
  CHECK(std::abs(g.loss.total) < 1e-10);
}

TEST_CASE("run_reconstruction: zero learning rate is the identity") {
  std::mt19937_64 rng(6);
  const ModelSpec spec = ModelSpec::homogeneous({3, 4, 1});
  const ParamVector theta = random_theta(spec, rng);
  ReconHyper h;
  h.learning_rate = 0.0;
  h.iterations = 10;
  const ReconState s0 = init_recon_state(4, 3, 0.5, 1);
  const ReconRun run = run_reconstruction(spec, theta, s0, h);
  CHECK(run.state.x == s0.x);
  CHECK(run.state.lambda == s0.lambda);
  CHECK_FALSE(run.failed);
  CHECK(run.trace.back().iteration == 10);
}

TEST_CASE("run_reconstruction lowers the loss on a small problem") {
  std::mt19937_64 rng(7);
  const ModelSpec spec = ModelSpec::homogeneous({3, 6, 1});
  const ParamVector theta = random_theta(spec, rng, 0.5);
  ReconHyper h;
  h.learning_rate = 1e-3;
  h.iterations = 2000;
  h.alpha = 10.0;
  const ReconRun run = run_reconstruction(spec, theta, init_recon_state(4, 3, 0.5, 2), h);
  CHECK_FALSE(run.failed);
  CHECK(run.final_loss.total < run.trace.front().loss.total);
}

TEST_CASE("run_reconstruction flags divergence and keeps a finite state") {
  std::mt19937_64 rng(8);
  const ModelSpec spec = ModelSpec::homogeneous({3, 6, 1});
  const ParamVector theta = random_theta(spec, rng);
  ReconHyper h;
  h.learning_rate = 1e6;
  h.iterations = 1000;
  const ReconRun run = run_reconstruction(spec, theta, init_recon_state(4, 3, 0.5, 2), h);
  CHECK(run.failed);
  for (double v : run.state.x.values()) CHECK(std::isfinite(v));
}

TEST_CASE("run_sweep: sizes, ranges, determinism, independence") {
  std::mt19937_64 rng(9);
  const ModelSpec spec = ModelSpec::homogeneous({2, 5, 1});
  const ParamVector theta = random_theta(spec, rng);
  SweepRanges ranges;
  ranges.runs = 6;
  ReconHyper base;
  base.iterations = 30;
  const CandidatePool a = run_sweep(spec, theta, ranges, base, 4, 11, 1);
  CHECK(a.candidate_count() == 24);
  CHECK(a.candidates().rows() == 24);
  for (const auto& run : a.runs) {
    CHECK((run.hyper.learning_rate >= 1e-5 && run.hyper.learning_rate <= 1.0));
    CHECK((run.hyper.sigma_x >= 1e-6 && run.hyper.sigma_x <= 1.0));
    CHECK((run.hyper.alpha >= 10.0 && run.hyper.alpha <= 500.0));
    CHECK((run.hyper.lambda_min >= 1e-4 && run.hyper.lambda_min <= 1.0));
  }
  const CandidatePool b = run_sweep(spec, theta, ranges, base, 4, 11, 3);
  CHECK(a.candidates() == b.candidates());
  CHECK(a.lambdas() == b.lambdas());
  ranges.runs = 3;
  const CandidatePool c = run_sweep(spec, theta, ranges, base, 4, 11, 2);
  for (std::size_t k = 0; k < 3; ++k) CHECK(c.runs[k].state.x == a.runs[k].state.x);
}

TEST_CASE("pool save/load round trip") {
  std::mt19937_64 rng(10);
  const ModelSpec spec = ModelSpec::homogeneous({2, 5, 1});
  const ParamVector theta = random_theta(spec, rng);
  ReconHyper h;
  h.iterations = 5;
  const CandidatePool pool = run_fixed(spec, theta, h, 2, 4, 3, 1);
  const auto dir = std::filesystem::temp_directory_path() / "kktrecon_test_pool";
  std::filesystem::create_directories(dir);
  save_pool(dir / "pool.json", pool);
  const CandidatePool back = load_pool(dir / "pool.json");
  REQUIRE(back.runs.size() == 2);
  CHECK(back.m == 4);
  CHECK(back.runs[1].hyper.learning_rate == h.learning_rate);
  const Matrix want = pool.candidates();
  const Matrix got = back.candidates();
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(got.data()[i] == static_cast<double>(static_cast<float>(want.data()[i])));
  }
  CHECK(std::filesystem::exists(dir / "pool.json.csv"));
}
