#include <cmath>
#include <vector>

#include "cped/rng.hpp"
#include "cped/simd/kernels.hpp"
#include "doctest.h"

using namespace cped;
using namespace cped::simd;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  }
  return worst;
}

struct IsaGuard {
  Isa saved = active_isa();
  ~IsaGuard() { set_isa(saved); }
};

}  // namespace

TEST_CASE("scalar reference gemm matches a naive triple loop") {
  Rng rng(1);
  const std::size_t m = 5, k = 7, n = 3;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  std::vector<double> c(m * n, 0.5);
  scalar_kernels().gemm(a.data(), b.data(), c.data(), m, k, n, true);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.5;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("avx2 kernels agree with scalar reference across ragged shapes") {
  const KernelTable* avx = avx2_kernels();
  if (avx == nullptr) {
    MESSAGE("AVX2+FMA unavailable; equivalence test skipped");
    return;
  }
  Rng rng(2);
  const std::size_t shapes[][3] = {{1, 1, 1},  {1, 4, 2},  {3, 5, 7},   {4, 8, 8},
                                   {9, 3, 17}, {33, 2, 6}, {64, 64, 64}, {256, 6, 13}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], k = s[1], n = s[2];
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    for (bool acc : {false, true}) {
      auto init = random_vec(m * n, rng);
      auto c_ref = init;
      auto c_avx = init;
      scalar_kernels().gemm(a.data(), b.data(), c_ref.data(), m, k, n, acc);
      avx->gemm(a.data(), b.data(), c_avx.data(), m, k, n, acc);
      CHECK(max_rel(c_ref, c_avx) < 1e-12);
    }
  }
  for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 1001u}) {
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);
    auto y_ref = y;
    auto y_avx = y;
    scalar_kernels().axpy(0.37, x.data(), y_ref.data(), n);
    avx->axpy(0.37, x.data(), y_avx.data(), n);
    CHECK(max_rel(y_ref, y_avx) < 1e-14);
    const double d_ref = scalar_kernels().dot(x.data(), y.data(), n);
    const double d_avx = avx->dot(x.data(), y.data(), n);
    CHECK(std::abs(d_ref - d_avx) <= 1e-12 * std::max(1.0, std::abs(d_ref)));

    auto p_ref = random_vec(n, rng);
    auto p_avx = p_ref;
    std::vector<double> m_ref(n, 0.0), v_ref(n, 0.0), m_avx(n, 0.0), v_avx(n, 0.0);
    for (int t = 1; t <= 3; ++t) {
      auto g = random_vec(n, rng);
      AdamParams ap{1e-3, 0.9, 0.999, 1e-8, 1.0 - std::pow(0.9, t), 1.0 - std::pow(0.999, t)};
      scalar_kernels().adam(p_ref.data(), m_ref.data(), v_ref.data(), g.data(), n, ap);
      avx->adam(p_avx.data(), m_avx.data(), v_avx.data(), g.data(), n, ap);
    }
    CHECK(max_rel(p_ref, p_avx) < 1e-13);
  }
}

TEST_CASE("transposed gemm helpers match explicit transposes") {
  IsaGuard guard;
  Rng rng(3);
  const std::size_t m = 6, k = 5, n = 9;
  auto a = random_vec(m * k, rng);
  auto bt = random_vec(n * k, rng);  // n x k
  for (Isa isa : {Isa::Scalar, Isa::Avx2}) {
    if (!set_isa(isa)) continue;
    std::vector<double> c(m * n);
    gemm_nt(a.data(), bt.data(), c.data(), m, k, n, false);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * bt[j * k + p];
        CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-13));
      }
    }
    auto at = random_vec(k * m, rng);  // k x m
    auto b = random_vec(k * n, rng);
    std::vector<double> d(m * n);
    gemm_tn(at.data(), b.data(), d.data(), m, k, n, false);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += at[p * m + i] * b[p * n + j];
        CHECK(d[i * n + j] == doctest::Approx(s).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("isa can be pinned to scalar and restored") {
  IsaGuard guard;
  REQUIRE(set_isa(Isa::Scalar));
  CHECK(active_isa() == Isa::Scalar);
  CHECK(isa_name(active_isa()) == "scalar");
}
