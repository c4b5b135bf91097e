#include <cstring>

#include "fatbench/kernels.hpp"

// Reference kernels. Plain loops, no intrinsics; the SIMD backends are
// equivalence-tested against these.

namespace fatbench::kern {
namespace {

double dot_scalar(const double* x, const double* y, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_scalar(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void matmul_nn_scalar(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_scalar(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) crow[j] = dot_scalar(arow, b + j * k, k);
    }
}

void matmul_tn_scalar(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    // a is k x m, b is k x n
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t l = 0; l < k; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{"scalar", dot_scalar,        axpy_scalar,
                               matmul_nn_scalar, matmul_nt_scalar, matmul_tn_scalar};
    return t;
}

}  // namespace fatbench::kern
