#include "cped/simd/kernels.hpp"

#include <cmath>

namespace cped::simd {
namespace {

void gemm_scalar(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  }
  // i-p-j order keeps each C element's sum in increasing p.
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void adam_scalar(double* param, double* m, double* v, const double* grad,
                 std::size_t n, const AdamParams& p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    const double mhat = m[i] / p.bias_correction1;
    const double vhat = v[i] / p.bias_correction2;
    param[i] -= p.lr * mhat / (std::sqrt(vhat) + p.eps);
  }
}

constexpr KernelTable kScalar{Isa::Scalar, gemm_scalar, axpy_scalar, dot_scalar,
                              adam_scalar};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace cped::simd
