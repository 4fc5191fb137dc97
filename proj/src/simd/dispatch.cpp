#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "cped/simd/kernels.hpp"

namespace cped::simd {

const KernelTable* avx2_kernels_compiled();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const KernelTable* avx2 = avx2_kernels();
  const char* env = std::getenv("CPED_ISA");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_kernels();
  return avx2 != nullptr ? avx2 : &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

// Per-thread scratch for transposed operands.
std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable* table = cpu_has_avx2() ? avx2_kernels_compiled() : nullptr;
  return table;
}

const KernelTable& kernels() { return *active().load(std::memory_order_relaxed); }

Isa active_isa() { return kernels().isa; }

bool set_isa(Isa isa) {
  const KernelTable* table = isa == Isa::Scalar ? &scalar_kernels() : avx2_kernels();
  if (table == nullptr) return false;
  active().store(table, std::memory_order_relaxed);
  return true;
}

std::string_view isa_name(Isa isa) { return isa == Isa::Scalar ? "scalar" : "avx2"; }

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  auto& bt = scratch();
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  kernels().gemm(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  auto& at = scratch();
  at.resize(m * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  }
  kernels().gemm(at.data(), b, c, m, k, n, accumulate);
}

}  // namespace cped::simd
