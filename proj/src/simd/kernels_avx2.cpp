// Compiled with -mavx2 -mfma; only reached through avx2_kernels() after a
// runtime CPU check.
#include "cped/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>

namespace cped::simd {
namespace {

// R rows x 8 columns of C, full k sweep. Accumulators stay in registers.
template <int R>
inline void block8(const double* a, const double* b, double* c, std::size_t k,
                   std::size_t n, std::size_t i0, std::size_t j0, bool accumulate) {
  __m256d acc0[R];
  __m256d acc1[R];
  for (int r = 0; r < R; ++r) {
    if (accumulate) {
      acc0[r] = _mm256_loadu_pd(c + (i0 + r) * n + j0);
      acc1[r] = _mm256_loadu_pd(c + (i0 + r) * n + j0 + 4);
    } else {
      acc0[r] = _mm256_setzero_pd();
      acc1[r] = _mm256_setzero_pd();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n + j0);
    const __m256d b1 = _mm256_loadu_pd(b + p * n + j0 + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + (i0 + r) * k + p);
      acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + (i0 + r) * n + j0, acc0[r]);
    _mm256_storeu_pd(c + (i0 + r) * n + j0 + 4, acc1[r]);
  }
}

template <int R>
inline void block4(const double* a, const double* b, double* c, std::size_t k,
                   std::size_t n, std::size_t i0, std::size_t j0, bool accumulate) {
  __m256d acc[R];
  for (int r = 0; r < R; ++r) {
    acc[r] = accumulate ? _mm256_loadu_pd(c + (i0 + r) * n + j0) : _mm256_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d bv = _mm256_loadu_pd(b + p * n + j0);
    for (int r = 0; r < R; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + (i0 + r) * k + p), bv, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + (i0 + r) * n + j0, acc[r]);
}

template <int R>
inline void block1(const double* a, const double* b, double* c, std::size_t k,
                   std::size_t n, std::size_t i0, std::size_t j, bool accumulate) {
  for (int r = 0; r < R; ++r) {
    double s = accumulate ? c[(i0 + r) * n + j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) s = std::fma(a[(i0 + r) * k + p], b[p * n + j], s);
    c[(i0 + r) * n + j] = s;
  }
}

template <int R>
inline void row_panel(const double* a, const double* b, double* c, std::size_t k,
                      std::size_t n, std::size_t i0, bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) block8<R>(a, b, c, k, n, i0, j, accumulate);
  for (; j + 4 <= n; j += 4) block4<R>(a, b, c, k, n, i0, j, accumulate);
  for (; j < n; ++j) block1<R>(a, b, c, k, n, i0, j, accumulate);
}

void gemm_avx2(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_panel<4>(a, b, c, k, n, i, accumulate);
  for (; i < m; ++i) row_panel<1>(a, b, c, k, n, i, accumulate);
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void adam_avx2(double* param, double* m, double* v, const double* grad,
               std::size_t n, const AdamParams& p) {
  const __m256d b1 = _mm256_set1_pd(p.beta1);
  const __m256d omb1 = _mm256_set1_pd(1.0 - p.beta1);
  const __m256d b2 = _mm256_set1_pd(p.beta2);
  const __m256d omb2 = _mm256_set1_pd(1.0 - p.beta2);
  const __m256d bc1 = _mm256_set1_pd(p.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(p.bias_correction2);
  const __m256d lr = _mm256_set1_pd(p.lr);
  const __m256d eps = _mm256_set1_pd(p.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(omb1, g));
    const __m256d vi =
        _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_div_pd(vi, bc2)), eps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, _mm256_div_pd(mi, bc1)), denom);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    param[i] -= p.lr * (m[i] / p.bias_correction1) / (std::sqrt(v[i] / p.bias_correction2) + p.eps);
  }
}

constexpr KernelTable kAvx2{Isa::Avx2, gemm_avx2, axpy_avx2, dot_avx2, adam_avx2};

}  // namespace

const KernelTable* avx2_kernels_compiled() { return &kAvx2; }

}  // namespace cped::simd

#else

namespace cped::simd {
const KernelTable* avx2_kernels_compiled() { return nullptr; }
}  // namespace cped::simd

#endif
