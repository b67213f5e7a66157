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

// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after the dispatcher has checked CPUID.
//
// The GEMM follows the usual packed-panel scheme: op(B) is packed into
// NR-wide column slivers, op(A) into MR-tall row slivers, and a 6x8
// register-blocked micro-kernel accumulates one tile at a time.

#include "kktrecon/kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define KKTRECON_HAVE_AVX2 1
#endif

namespace kktrecon::kernels::avx2 {

#if defined(KKTRECON_HAVE_AVX2)

namespace {

constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 8;
constexpr std::size_t kKC = 256;
constexpr std::size_t kMC = 72;
constexpr std::size_t kNC = 2048;

struct Operand {
  const double* data;
  std::size_t ld;
  Trans trans;
  double at(std::size_t row, std::size_t col) const {
    return trans == Trans::No ? data[row * ld + col] : data[col * ld + row];
  }
};

// Packs rows [row0, row0+mc) x cols [col0, col0+kc) of op(A) as MR-row slivers.
void pack_a(const Operand& a, std::size_t row0, std::size_t mc, std::size_t col0, std::size_t kc,
            double* out) {
  for (std::size_t s = 0; s < mc; s += kMR) {
    const std::size_t rows = std::min(kMR, mc - s);
    if (a.trans == Trans::Yes) {
      // op(A)(i, p) = A[p][i]: rows of a sliver are contiguous in memory.
      for (std::size_t p = 0; p < kc; ++p) {
        const double* src = a.data + (col0 + p) * a.ld + row0 + s;
        std::size_t r = 0;
        for (; r < rows; ++r) out[r] = src[r];
        for (; r < kMR; ++r) out[r] = 0.0;
        out += kMR;
      }
    } else {
      for (std::size_t p = 0; p < kc; ++p) {
        std::size_t r = 0;
        for (; r < rows; ++r) out[r] = a.data[(row0 + s + r) * a.ld + col0 + p];
        for (; r < kMR; ++r) out[r] = 0.0;
        out += kMR;
      }
    }
  }
}

// Packs rows [row0, row0+kc) x cols [col0, col0+nc) of op(B) as NR-col slivers.
void pack_b(const Operand& b, std::size_t row0, std::size_t kc, std::size_t col0, std::size_t nc,
            double* out) {
  for (std::size_t t = 0; t < nc; t += kNR) {
    const std::size_t cols = std::min(kNR, nc - t);
    if (b.trans == Trans::No) {
      for (std::size_t p = 0; p < kc; ++p) {
        const double* src = b.data + (row0 + p) * b.ld + col0 + t;
        if (cols == kNR) {
          _mm256_storeu_pd(out, _mm256_loadu_pd(src));
          _mm256_storeu_pd(out + 4, _mm256_loadu_pd(src + 4));
        } else {
          std::size_t c = 0;
          for (; c < cols; ++c) out[c] = src[c];
          for (; c < kNR; ++c) out[c] = 0.0;
        }
        out += kNR;
      }
    } else {
      for (std::size_t p = 0; p < kc; ++p) {
        std::size_t c = 0;
        for (; c < cols; ++c) out[c] = b.data[(col0 + t + c) * b.ld + row0 + p];
        for (; c < kNR; ++c) out[c] = 0.0;
        out += kNR;
      }
    }
  }
}

// acc[MR][NR] = sum_p a[p][:] (x) b[p][:]
void micro_kernel(std::size_t kc, const double* a, const double* b, double* acc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b);
    const __m256d b1 = _mm256_loadu_pd(b + 4);
    __m256d av = _mm256_broadcast_sd(a + 0);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + 1);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
    av = _mm256_broadcast_sd(a + 4);
    c40 = _mm256_fmadd_pd(av, b0, c40);
    c41 = _mm256_fmadd_pd(av, b1, c41);
    av = _mm256_broadcast_sd(a + 5);
    c50 = _mm256_fmadd_pd(av, b0, c50);
    c51 = _mm256_fmadd_pd(av, b1, c51);
    a += kMR;
    b += kNR;
  }
  _mm256_storeu_pd(acc + 0, c00);
  _mm256_storeu_pd(acc + 4, c01);
  _mm256_storeu_pd(acc + 8, c10);
  _mm256_storeu_pd(acc + 12, c11);
  _mm256_storeu_pd(acc + 16, c20);
  _mm256_storeu_pd(acc + 20, c21);
  _mm256_storeu_pd(acc + 24, c30);
  _mm256_storeu_pd(acc + 28, c31);
  _mm256_storeu_pd(acc + 32, c40);
  _mm256_storeu_pd(acc + 36, c41);
  _mm256_storeu_pd(acc + 40, c50);
  _mm256_storeu_pd(acc + 44, c51);
}

void scale_output(std::size_t m, std::size_t n, double beta, double* c, std::size_t ldc) {
  if (beta == 1.0) return;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = c + i * ldc;
    if (beta == 0.0) {
      std::fill(row, row + n, 0.0);
    } else {
      scale(beta, row, n);
    }
  }
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  scale_output(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;

  const Operand op_a{a, lda, trans_a};
  const Operand op_b{b, ldb, trans_b};
  thread_local std::vector<double> packed_a;
  thread_local std::vector<double> packed_b;
  packed_a.resize(kMC * kKC);
  packed_b.resize(((std::min(kNC, n) + kNR - 1) / kNR) * kNR * kKC);
  alignas(32) double acc[kMR * kNR];

  for (std::size_t jc = 0; jc < n; jc += kNC) {
    const std::size_t nc = std::min(kNC, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKC) {
      const std::size_t kc = std::min(kKC, k - pc);
      pack_b(op_b, pc, kc, jc, nc, packed_b.data());
      for (std::size_t ic = 0; ic < m; ic += kMC) {
        const std::size_t mc = std::min(kMC, m - ic);
        pack_a(op_a, ic, mc, pc, kc, packed_a.data());
        for (std::size_t jr = 0; jr < nc; jr += kNR) {
          const std::size_t cols = std::min(kNR, nc - jr);
          const double* b_sliver = packed_b.data() + (jr / kNR) * kNR * kc;
          for (std::size_t ir = 0; ir < mc; ir += kMR) {
            const std::size_t rows = std::min(kMR, mc - ir);
            micro_kernel(kc, packed_a.data() + (ir / kMR) * kMR * kc, b_sliver, acc);
            double* tile = c + (ic + ir) * ldc + jc + jr;
            if (cols == kNR) {
              const __m256d va = _mm256_set1_pd(alpha);
              for (std::size_t r = 0; r < rows; ++r) {
                double* out = tile + r * ldc;
                _mm256_storeu_pd(out, _mm256_fmadd_pd(va, _mm256_load_pd(acc + r * kNR),
                                                      _mm256_loadu_pd(out)));
                _mm256_storeu_pd(out + 4, _mm256_fmadd_pd(va, _mm256_load_pd(acc + r * kNR + 4),
                                                          _mm256_loadu_pd(out + 4)));
              }
            } else {
              for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t q = 0; q < cols; ++q) tile[r * ldc + q] += alpha * acc[r * kNR + q];
              }
            }
          }
        }
      }
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), s3);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  const __m256d s = _mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, s);
  double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

#else  // !KKTRECON_HAVE_AVX2

// Non-x86 builds: the dispatcher never selects these, but the symbols exist
// so tests link everywhere.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
double dot(const double* x, const double* y, std::size_t n) { return scalar::dot(x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }
void scale(double alpha, double* x, std::size_t n) { scalar::scale(alpha, x, n); }

#endif

}  // namespace kktrecon::kernels::avx2
