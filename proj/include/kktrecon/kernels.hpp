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

// Dense double-precision kernels. Every kernel has a scalar reference
// implementation and, on x86-64, an AVX2+FMA implementation. The active
// backend is chosen once at startup from CPUID and can be overridden for
// equivalence testing.

#include <cstddef>
#include <span>
#include <string_view>

namespace kktrecon::kernels {

enum class Backend { Scalar, Avx2 };

enum class Trans { No, Yes };

std::string_view backend_name(Backend backend);

/// True when the running CPU supports AVX2 and FMA and the AVX2 kernels were
/// compiled in.
bool avx2_available();

Backend active_backend();

/// Switches the process-wide backend. Requesting Avx2 on a CPU without it
/// falls back to Scalar. Not thread-safe with concurrent kernel calls.
void set_backend(Backend backend);

/// RAII override used by tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend) : previous_(active_backend()) { set_backend(backend); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

/// C = alpha * op(A) * op(B) + beta * C, all row-major.
/// op(A) is m x k, op(B) is k x n, C is m x n. When beta == 0, C is
/// overwritten without being read.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);

double dot(std::span<const double> x, std::span<const double> y);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

void scale(double alpha, std::span<double> x);

// Backend-specific entry points, exposed so equivalence tests can call both
// sides directly. Application code uses the dispatched functions above.
namespace scalar {
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
}  // namespace avx2

}  // namespace kktrecon::kernels
