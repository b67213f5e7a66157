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
#include <limits>
#include <random>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "kktrecon/kernels.hpp"

namespace kk = kktrecon::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("backend names and override") {
  CHECK(kk::backend_name(kk::Backend::Scalar) == "scalar");
  CHECK(kk::backend_name(kk::Backend::Avx2) == "avx2");
  {
    kk::ScopedBackend guard(kk::Backend::Scalar);
    CHECK(kk::active_backend() == kk::Backend::Scalar);
  }
  if (kk::avx2_available()) {
    kk::ScopedBackend guard(kk::Backend::Avx2);
    CHECK(kk::active_backend() == kk::Backend::Avx2);
  }
}

TEST_CASE("gemm: scalar reference matches a naive triple loop") {
  // 2x3 * 3x2
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};
  const std::vector<double> b = {7, 8, 9, 10, 11, 12};
  std::vector<double> c(4, 0.0);
  kk::scalar::gemm(kk::Trans::No, kk::Trans::No, 2, 2, 3, 1.0, a.data(), 3, b.data(), 2, 0.0, c.data(), 2);
  CHECK(c == std::vector<double>{58, 64, 139, 154});
  // A^T B with A stored 3x2
  kk::scalar::gemm(kk::Trans::Yes, kk::Trans::No, 2, 2, 3, 1.0, a.data(), 2, b.data(), 2, 0.0, c.data(), 2);
  CHECK(c == std::vector<double>{1 * 7 + 3 * 9 + 5 * 11, 1 * 8 + 3 * 10 + 5 * 12, 2 * 7 + 4 * 9 + 6 * 11,
                                 2 * 8 + 4 * 10 + 6 * 12});
}

TEST_CASE("gemm: avx2 matches scalar across shapes and transposes") {
  if (!kk::avx2_available()) {
    MESSAGE("AVX2 unavailable; skipping equivalence");
    return;
  }
  std::mt19937_64 rng(7);
  const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> shapes = {
      {1, 1, 1}, {5, 7, 3}, {6, 8, 256}, {13, 17, 300}, {73, 9, 1}, {20, 1000, 2}, {100, 1, 1000}, {7, 2049, 5}};
  for (const auto& [m, n, k] : shapes) {
    for (auto ta : {kk::Trans::No, kk::Trans::Yes}) {
      for (auto tb : {kk::Trans::No, kk::Trans::Yes}) {
        for (double beta : {0.0, 1.0, -0.5}) {
          const auto a = random_vector(m * k, rng);
          const auto b = random_vector(k * n, rng);
          const auto c0 = random_vector(m * n, rng);
          const std::size_t lda = ta == kk::Trans::No ? k : m;
          const std::size_t ldb = tb == kk::Trans::No ? n : k;
          auto c_ref = c0;
          auto c_simd = c0;
          kk::scalar::gemm(ta, tb, m, n, k, 0.75, a.data(), lda, b.data(), ldb, beta, c_ref.data(), n);
          kk::avx2::gemm(ta, tb, m, n, k, 0.75, a.data(), lda, b.data(), ldb, beta, c_simd.data(), n);
          CAPTURE(m);
          CAPTURE(n);
          CAPTURE(k);
          CHECK(max_abs_diff(c_ref, c_simd) <= 1e-12 * std::sqrt(static_cast<double>(k)) * 10.0);
        }
      }
    }
  }
}

TEST_CASE("gemm: beta zero ignores garbage in C") {
  const std::vector<double> a = {1.0, 2.0};
  const std::vector<double> b = {3.0, 4.0};
  for (auto backend : {kk::Backend::Scalar, kk::Backend::Avx2}) {
    kk::ScopedBackend guard(backend);
    std::vector<double> c = {std::numeric_limits<double>::quiet_NaN()};
    kk::gemm(kk::Trans::No, kk::Trans::Yes, 1, 1, 2, 1.0, a.data(), 2, b.data(), 2, 0.0, c.data(), 1);
    CHECK(c[0] == 11.0);
  }
}

TEST_CASE("vector kernels: avx2 matches scalar") {
  std::mt19937_64 rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 15u, 16u, 17u, 1001u}) {
    const auto x = random_vector(n, rng);
    auto y1 = random_vector(n, rng);
    auto y2 = y1;
    const double d_ref = kk::scalar::dot(x.data(), y1.data(), n);
    const double d_simd = kk::avx2::dot(x.data(), y1.data(), n);
    CHECK(std::abs(d_ref - d_simd) <= 1e-12 * (1.0 + std::abs(d_ref)) * static_cast<double>(n + 1));
    kk::scalar::axpy(-1.5, x.data(), y1.data(), n);
    kk::avx2::axpy(-1.5, x.data(), y2.data(), n);
    CHECK(max_abs_diff(y1, y2) <= 1e-14);
    kk::scalar::scale(0.3, y1.data(), n);
    kk::avx2::scale(0.3, y2.data(), n);
    CHECK(max_abs_diff(y1, y2) <= 1e-14);
  }
}

TEST_CASE("dispatched dot is deterministic") {
  std::mt19937_64 rng(3);
  const auto x = random_vector(777, rng);
  const auto y = random_vector(777, rng);
  CHECK(kk::dot(x, y) == kk::dot(x, y));
}
