// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include "tandem/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <cstdint>
#include <vector>

namespace tandem::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

inline __m256i tail_mask(std::size_t width) {
  alignas(32) static const std::int64_t bits[8] = {-1, -1, -1, -1, 0, 0, 0, 0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + 4 - width));
}

// R x (4*V) register tile of C += A * B. A(i, p) = a[i * ais + p * aps]; B is
// row-major k x n. `width` < 4*V masks the last vector.
template <std::size_t R, std::size_t V>
inline void tile(std::size_t n, std::size_t k, const double* a, std::size_t ais, std::size_t aps,
                 const double* b, double* c, std::size_t width) {
  __m256d acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) acc[r][v] = _mm256_setzero_pd();
  const bool masked = width < 4 * V;
  const __m256i mask = tail_mask(masked ? width - 4 * (V - 1) : 4);
  for (std::size_t p = 0; p < k; ++p) {
    __m256d bv[V];
    for (std::size_t v = 0; v < V; ++v)
      bv[v] = (masked && v == V - 1) ? _mm256_maskload_pd(b + p * n + 4 * v, mask)
                                     : _mm256_loadu_pd(b + p * n + 4 * v);
    const double* ap = a + p * aps;
    for (std::size_t r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(ap + r * ais);
      for (std::size_t v = 0; v < V; ++v) acc[r][v] = _mm256_fmadd_pd(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) {
      double* dst = c + r * n + 4 * v;
      if (masked && v == V - 1)
        _mm256_maskstore_pd(dst, mask, _mm256_add_pd(_mm256_maskload_pd(dst, mask), acc[r][v]));
      else
        _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), acc[r][v]));
    }
}

template <std::size_t R>
inline void row_block(std::size_t n, std::size_t k, const double* a, std::size_t ais,
                      std::size_t aps, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) tile<R, 2>(n, k, a, ais, aps, b + j, c + j, 8);
  if (j + 4 < n) {
    tile<R, 2>(n, k, a, ais, aps, b + j, c + j, n - j);
  } else if (j < n) {
    tile<R, 1>(n, k, a, ais, aps, b + j, c + j, n - j);
  }
}

void gemm_tile(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ais,
               std::size_t aps, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<4>(n, k, a + i * ais, ais, aps, b, c + i * n);
  for (; i < m; ++i) row_block<1>(n, k, a + i * ais, ais, aps, b, c + i * n);
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c) {
  gemm_tile(m, n, k, a, k, 1, b, c);
}

// B is n x k; transpose it once so the tile kernel can stream rows.
void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c) {
  if (m < 4) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_avx2(a + i * k, b + j * k, k);
    return;
  }
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_tile(m, n, k, a, k, 1, bt.data(), c);
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c) {
  gemm_tile(m, n, k, a, 1, m, b, c);
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", dot_avx2, axpy_avx2, gemm_nn_avx2, gemm_nt_avx2,
                                 gemm_tn_avx2};
  return &table;
}

}  // namespace tandem::kernels::detail

#else

namespace tandem::kernels::detail {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace tandem::kernels::detail

#endif
