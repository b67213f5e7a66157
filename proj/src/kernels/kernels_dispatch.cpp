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

#include <atomic>
#include <cassert>
#include <cstdlib>
#include <cstring>

#include "kktrecon/kernels.hpp"

namespace kktrecon::kernels {

namespace {

bool detect_avx2() {
#if defined(KKTRECON_ENABLE_AVX2) && (defined(__x86_64__) || defined(__i386__)) && \
    (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  // KKTRECON_BACKEND=scalar forces the reference kernels for a whole process.
  if (const char* env = std::getenv("KKTRECON_BACKEND"); env && std::strcmp(env, "scalar") == 0) {
    return Backend::Scalar;
  }
  return detect_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

}  // namespace

std::string_view backend_name(Backend backend) {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_available() {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (backend == Backend::Avx2 && !avx2_available()) backend = Backend::Scalar;
  backend_slot().store(backend, std::memory_order_relaxed);
}

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  if (active_backend() == Backend::Avx2) {
    avx2::gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    scalar::gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

double dot(std::span<const double> x, std::span<const double> y) {
  assert(x.size() == y.size());
  return active_backend() == Backend::Avx2 ? avx2::dot(x.data(), y.data(), x.size())
                                           : scalar::dot(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  if (active_backend() == Backend::Avx2) {
    avx2::axpy(alpha, x.data(), y.data(), x.size());
  } else {
    scalar::axpy(alpha, x.data(), y.data(), x.size());
  }
}

void scale(double alpha, std::span<double> x) {
  if (active_backend() == Backend::Avx2) {
    avx2::scale(alpha, x.data(), x.size());
  } else {
    scalar::scale(alpha, x.data(), x.size());
  }
}

}  // namespace kktrecon::kernels
