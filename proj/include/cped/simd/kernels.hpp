#pragma once

// Dense double-precision kernels behind the tensor layer.
//
// Every kernel has a portable scalar reference in kernels_scalar.cpp. On x86-64
// an AVX2+FMA variant is compiled in a separate translation unit and chosen at
// startup when the CPU reports both features. The table in use can be pinned
// with CPED_ISA=scalar|avx2 or set_isa().

#include <cstddef>
#include <string_view>

namespace cped::simd {

enum class Isa { Scalar, Avx2 };

struct AdamParams {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  // C[m x n] (+)= A[m x k] * B[k x n], all row-major and densely packed.
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // In-place Adam update of one parameter block.
  void (*adam)(double* param, double* m, double* v, const double* grad,
               std::size_t n, const AdamParams& p);
};

const KernelTable& scalar_kernels();
// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

const KernelTable& kernels();
Isa active_isa();
// Returns false (and leaves the table unchanged) if the ISA is unavailable.
bool set_isa(Isa isa);
std::string_view isa_name(Isa isa);

// Helpers built on the active table.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);  // C (+)= A * B^T, B is n x k
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);  // C (+)= A^T * B, A is k x m

}  // namespace cped::simd
