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


// Acceptance gate: one PASS/FAIL line per criterion.
//
//   kktrecon_acceptance [--only 1,4] [--cache DIR] [--fresh]
//
// Criteria 1, 4 and 6 share one trained 2D model and criterion 7 trains
// desk-scale MNIST models; both are cached under the cache directory and
// reused when their configuration is unchanged.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kktrecon/analysis.hpp"
#include "kktrecon/error.hpp"
#include "kktrecon/experiment.hpp"
#include "kktrecon/kernels.hpp"
#include "kktrecon/recon.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace kktrecon;
using kktrecon::testing::central_difference;
using kktrecon::testing::naive_forward;
using kktrecon::testing::normal_vector;
using kktrecon::testing::random_theta;
using kktrecon::testing::relative_error;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << "\n"; }

// Runs the pipeline steps that are missing or stale for this configuration.
json run_cached(const ExperimentConfig& config, const fs::path& dir, bool fresh,
                const std::vector<std::string>& steps) {
  const RunPaths paths{dir};
  const fs::path key_path = dir / "acceptance_key.json";
  const json key = config.to_json();
  json done = json::object();
  if (!fresh && fs::exists(key_path)) {
    const json stored = read_json_file(key_path);
    if (stored.value("config", json()) == key) done = stored.value("steps", json::object());
  }
  if (fresh || done.empty()) fs::remove_all(dir);
  fs::create_directories(dir);
  bool stale = false;
  for (const auto& step : steps) {
    if (!stale && done.contains(step)) continue;
    stale = true;  // later steps depend on earlier ones
    const auto t0 = std::chrono::steady_clock::now();
    progress(config.name + ": " + step);
    json summary;
    const StepLog log = [](const std::string&) {};
    if (step == "train") summary = step_train(config, paths, log);
    if (step == "reconstruct") summary = step_reconstruct(config, paths, log);
    if (step == "analyze") summary = step_analyze(config, paths, log);
    if (step == "invert") summary = step_invert(config, paths, log);
    done[step] = summary;
    write_json_file(key_path, {{"config", key}, {"steps", done}});
    progress(fmt("%s: %s done in %.0f s", config.name.c_str(), step.c_str(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
  }
  return done;
}

// ---------------------------------------------------------------------------

struct Planar {
  json steps;
  Checkpoint checkpoint;
};

Planar planar_run(const fs::path& cache, bool fresh) {
  const ExperimentConfig config = make_preset("circle2d");
  Planar p;
  p.steps = run_cached(config, cache / "circle2d", fresh, {"train", "reconstruct", "analyze", "invert"});
  p.checkpoint = load_checkpoint(RunPaths{cache / "circle2d"}.checkpoint());
  return p;
}

Verdict criterion_1(const Planar& p) {
  const json& m = p.steps.at("analyze").at("matching");
  const double loss = p.checkpoint.final_loss;
  const std::size_t recovered = m.at("recovered");
  const std::size_t survivors = m.at("survivors");
  Verdict v;
  v.pass = loss < 1e-6 && recovered >= 18 && survivors <= 30;
  v.detail = fmt("train loss %.3g (< 1e-6), recovered %zu/20 (>= 18), survivors %zu (<= 30), unfiltered %zu/20",
                 loss, recovered, survivors, static_cast<std::size_t>(m.at("recovered_unfiltered")));
  return v;
}

Verdict criterion_4(const Planar& p) {
  const json& k = p.steps.at("analyze").at("kkt");
  const double residual = k.at("relative_residual");
  const bool nonneg = k.at("lambda_nonnegative");
  const std::size_t far = k.at("far_from_margin");
  const std::size_t bad = k.at("far_from_margin_with_weight");
  Verdict v;
  v.pass = residual < 0.1 && nonneg && bad == 0;
  v.detail = fmt("NNLS residual %.4f (< 0.1), lambda >= 0: %s, far-from-margin samples %zu with weight %zu",
                 residual, nonneg ? "yes" : "no", far, bad);
  return v;
}

Verdict criterion_6(const Planar& p) {
  const std::size_t inverted = p.steps.at("invert").at("recovered");
  const std::size_t kkt = p.steps.at("analyze").at("matching").at("recovered");
  Verdict v;
  v.pass = inverted <= 10 && inverted < kkt;
  v.detail = fmt("inversion recovers %zu (<= 10), reconstruction recovers %zu (must be larger)", inverted, kkt);
  return v;
}

// ---------------------------------------------------------------------------

bool clear_of_kinks(const ModelSpec& spec, const ParamVector& theta, const Matrix& x, double margin) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double closest = 0.0;
    naive_forward(spec, theta.values(), x.row(i), &closest);
    if (closest < margin) return false;
  }
  return true;
}

Verdict criterion_2() {
  std::mt19937_64 rng(20);
  const ModelSpec spec = ModelSpec::homogeneous({4, 4, 1});
  const int instances = 20;
  double worst[4] = {0, 0, 0, 0};
  int done[4] = {0, 0, 0, 0};

  // grad_theta against differences of forward
  while (done[0] < instances) {
    const ParamVector theta = random_theta(spec, rng);
    Matrix x(1, 4, normal_vector(4, rng));
    if (!clear_of_kinks(spec, theta, x, 1e-2)) continue;
    const auto g = grad_theta(spec, theta, x.row(0), SurrogateConfig::exact());
    const auto fd = central_difference(
        [&](std::span<const double> t) { return forward(spec, ParamVector({t.begin(), t.end()}), x.row(0)); },
        theta.values(), 1e-5);
    worst[0] = std::max(worst[0], relative_error(g, fd));
    ++done[0];
  }
  // grad_training_loss against differences of the summed logistic loss
  while (done[1] < instances) {
    const ParamVector theta = random_theta(spec, rng);
    LabeledDataset ds;
    ds.x = Matrix(5, 4, normal_vector(20, rng));
    ds.y = {1, -1, 1, -1, 1};
    ds.shape = ImageShape::flat(4);
    if (!clear_of_kinks(spec, theta, ds.x, 1e-2)) continue;
    const auto g = grad_training_loss(spec, theta, ds);
    const auto fd = central_difference(
        [&](std::span<const double> t) {
          return logistic_loss(forward_batch(spec, ParamVector({t.begin(), t.end()}), ds.x), ds.y);
        },
        theta.values(), 1e-5);
    worst[1] = std::max(worst[1], relative_error(g, fd));
    ++done[1];
  }
  // grad_x_of_jvp against differences of jvp_theta in x
  std::uniform_real_distribution<double> alpha_dist(2.0, 10.0);
  while (done[2] < instances) {
    const ParamVector theta = random_theta(spec, rng);
    Matrix x(1, 4, normal_vector(4, rng));
    const auto r = normal_vector(spec.param_count(), rng);
    if (!clear_of_kinks(spec, theta, x, 1e-2)) continue;
    const SurrogateConfig s = SurrogateConfig::sigmoid(alpha_dist(rng));
    const auto g = grad_x_of_jvp(spec, theta, x.row(0), r, s);
    const auto fd = central_difference([&](std::span<const double> p) { return jvp_theta(spec, theta, p, r, s); },
                                       x.row(0), 1e-5);
    worst[2] = std::max(worst[2], relative_error(g, fd));
    ++done[2];
  }
  // recon_loss_and_grads against differences of its own total, both blocks
  while (done[3] < instances) {
    const ParamVector theta = random_theta(spec, rng);
    const std::size_t m = done[3] % 2 == 0 ? 4 : 2;
    ReconState st = init_recon_state(m, 4, 0.8, rng());
    std::uniform_real_distribution<double> lam(-1.0, 2.0);
    for (double& l : st.lambda) l = lam(rng);
    ReconHyper h;
    h.alpha = alpha_dist(rng);
    h.lambda_min = 0.3;
    bool ok = clear_of_kinks(spec, theta, st.x, 5e-2);
    for (double l : st.lambda) ok = ok && std::abs(l - h.lambda_min) > 1e-2;
    for (double v : st.x.values()) ok = ok && std::abs(std::abs(v) - 1.0) > 1e-2;
    if (!ok) continue;
    const ReconGradient g = recon_loss_and_grads(spec, theta, st, h);
    const auto fd_x = central_difference(
        [&](std::span<const double> xs) {
          ReconState t = st;
          std::copy(xs.begin(), xs.end(), t.x.data());
          return recon_loss_and_grads(spec, theta, t, h).loss.total;
        },
        st.x.values(), 1e-5);
    const auto fd_l = central_difference(
        [&](std::span<const double> ls) {
          ReconState t = st;
          t.lambda.assign(ls.begin(), ls.end());
          return recon_loss_and_grads(spec, theta, t, h).loss.total;
        },
        st.lambda, 1e-5);
    worst[3] = std::max({worst[3], relative_error(g.grad_x.values(), fd_x), relative_error(g.grad_lambda, fd_l)});
    ++done[3];
  }
  Verdict v;
  v.pass = std::all_of(std::begin(worst), std::end(worst), [](double e) { return e < 1e-4; });
  v.detail = fmt("worst relative error over %d instances each: grad_theta %.2e, grad_training_loss %.2e, "
                 "grad_x_of_jvp %.2e, recon_loss_and_grads %.2e (< 1e-4)",
                 instances, worst[0], worst[1], worst[2], worst[3]);
  return v;
}

Verdict criterion_3() {
  std::mt19937_64 rng(3);
  const ModelSpec spec = ModelSpec::homogeneous({5, 7, 6, 1});
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const ParamVector theta = random_theta(spec, rng);
    const auto x = normal_vector(5, rng);
    const double a = scale(rng);
    std::vector<double> scaled(theta.vector());
    for (double& t : scaled) t *= a;
    const double phi = forward(spec, theta, x);
    const double phi_a = forward(spec, ParamVector(scaled), x);
    worst = std::max(worst, std::abs(phi_a - a * a * a * phi) / (1.0 + std::abs(phi)));
  }
  return {worst < 1e-10, fmt("worst |Phi(a theta) - a^3 Phi(theta)| / (1 + |Phi|) = %.2e over 100 triples", worst)};
}

Verdict criterion_5() {
  const ModelSpec spec = ModelSpec::homogeneous({1, 1});
  const ParamVector theta(std::vector<double>{1.0, 0.0});
  ReconState st;
  st.x = Matrix(2, 1, std::vector<double>{1.0, -1.0});
  st.lambda = {0.5, 0.5};
  st.y = {1.0, -1.0};
  ReconHyper h;
  h.lambda_min = 0.1;
  const ReconGradient g = recon_loss_and_grads(spec, theta, st, h);
  double worst_grad = 0.0;
  for (double v : g.grad_x.values()) worst_grad = std::max(worst_grad, std::abs(v));
  for (double v : g.grad_lambda) worst_grad = std::max(worst_grad, std::abs(v));
  return {std::abs(g.loss.total) < 1e-10 && worst_grad < 1e-10,
          fmt("L_reconstruct = %.2e, largest gradient entry %.2e (both < 1e-10)", std::abs(g.loss.total), worst_grad)};
}

Verdict criterion_8() {
  std::mt19937_64 rng(8);
  const ImageShape shape{28, 28, 1};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(shape.size()), b(shape.size());
  for (double& v : a) v = u(rng);
  for (double& v : b) v = u(rng);
  std::vector<double> neg(a.size()), affine(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    neg[i] = -a[i];
    affine[i] = 2.5 * b[i] + 0.7;
  }
  const std::vector<double> zeros(shape.size(), 0.0), ones(shape.size(), 1.0);
  const double c1 = 1e-4;
  const double e_self_ssim = std::abs(ssim(a, a, shape) - 1.0);
  const double e_self_ncc = std::abs(ncc(a, a) - 1.0);
  const double e_neg = std::abs(ncc(a, neg) + 1.0);
  const double e_const = std::abs(ssim(zeros, ones, shape) - c1 / (1.0 + c1));
  const double e_affine = std::abs(ncc(a, affine) - ncc(a, b));
  const double worst = std::max({e_self_ssim, e_self_ncc, e_neg, e_const, e_affine});
  return {worst < 1e-10, fmt("self SSIM %.1e, self NCC %.1e, negation %.1e, constant-pair SSIM %.1e, NCC affine %.1e "
                             "(all < 1e-10)",
                             e_self_ssim, e_self_ncc, e_neg, e_const, e_affine)};
}

Verdict criterion_7(const fs::path& cache, bool fresh) {
  std::string detail;
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    ExperimentConfig config = make_preset("mnist-odd-even");
    config.seed = seed;
    config.name = "mnist-odd-even-seed" + std::to_string(seed);
    const json steps = run_cached(config, cache / config.name, fresh, {"train", "reconstruct", "analyze"});
    const json& m = steps.at("analyze").at("matching");
    const std::size_t good = m.at("good_reconstructions");
    const std::size_t low = m.at("good_in_lowest_quartile");
    detail += fmt("%sseed %llu: train loss %.2g, SSIM>0.4 %zu, of which lowest-quartile %zu, best SSIM %.3f",
                  detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed),
                  static_cast<double>(steps.at("train").at("final_loss")), good, low,
                  static_cast<double>(m.at("best_ssim")));
    if (low >= 5) return {true, detail};
  }
  return {false, detail + " (need >= 5 lowest-quartile samples above 0.4 for one seed)"};
}

std::set<int> parse_only(const std::string& text) {
  std::set<int> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path cache = fs::current_path() / "acceptance_cache";
  bool fresh = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only = parse_only(argv[++i]);
    } else if (arg == "--cache" && i + 1 < argc) {
      cache = argv[++i];
    } else if (arg == "--fresh") {
      fresh = true;
    } else {
      std::cerr << "usage: kktrecon_acceptance [--only 1,2] [--cache DIR] [--fresh]\n";
      return 2;
    }
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  std::cerr << "kernel backend: " << kernels::backend_name(kernels::active_backend()) << ", cache " << cache << "\n";

  const char* titles[9] = {"",
                           "2D end-to-end recovery",
                           "gradient-oracle suite",
                           "homogeneity",
                           "KKT diagnostic on the 2D model",
                           "zero-loss feasibility fixture",
                           "baseline dominance on 2D",
                           "image-domain smoke test (MNIST desk scale)",
                           "SSIM/NCC unit suite"};
  std::optional<Planar> planar;
  auto need_planar = [&]() -> const Planar& {
    if (!planar) planar = planar_run(cache, fresh);
    return *planar;
  };

  int failures = 0;
  for (int c = 1; c <= 8; ++c) {
    if (!wanted(c)) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (c) {
        case 1: v = criterion_1(need_planar()); break;
        case 2: v = criterion_2(); break;
        case 3: v = criterion_3(); break;
        case 4: v = criterion_4(need_planar()); break;
        case 5: v = criterion_5(); break;
        case 6: v = criterion_6(need_planar()); break;
        case 7: v = criterion_7(cache, fresh); break;
        case 8: v = criterion_8(); break;
      }
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c << ": " << (v.pass ? "PASS" : "FAIL") << " - " << titles[c] << " - " << v.detail
              << fmt(" [%.1f s]", secs) << std::endl;
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
