#include "fatbench/kernels.hpp"

// AVX2+FMA backend. This TU is compiled with -mavx2 -mfma and must only be
// entered after the runtime CPU check in kernels_dispatch.cpp.

#if defined(FATBENCH_HAVE_AVX2)

#include <immintrin.h>

#include <cstring>

namespace fatbench::kern {
namespace {

inline double hsum256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* x, const double* y, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum256(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_avx2(double a, const double* x, double* y, size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void matmul_nn_avx2(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t l = 0; l < k; ++l) axpy_avx2(arow[l], b + l * n, crow, n);
    }
}

void matmul_nt_avx2(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) crow[j] = dot_avx2(arow, b + j * k, k);
    }
}

void matmul_tn_avx2(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t l = 0; l < k; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (size_t i = 0; i < m; ++i) axpy_avx2(arow[i], brow, c + i * n, n);
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable t{"avx2",        dot_avx2,       axpy_avx2,
                               matmul_nn_avx2, matmul_nt_avx2, matmul_tn_avx2};
    return t;
}

}  // namespace fatbench::kern

#else  // !FATBENCH_HAVE_AVX2

namespace fatbench::kern {
const KernelTable& avx2_table() { return scalar_table(); }
}  // namespace fatbench::kern

#endif
