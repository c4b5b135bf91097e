#pragma once

#include <cstddef>
#include <string>

namespace fatbench::kern {

// Hot f64 inner loops behind a runtime-selected backend. The scalar table is
// the reference; SIMD tables must agree with it to tight tolerance (see
// tests). Selection happens once, at first use, from CPU features, and can be
// forced with set_backend() or the FATBENCH_KERNEL env var (scalar|avx2).

struct KernelTable {
    const char* name;
    // dot(x, y, n) = sum_i x[i]*y[i]
    double (*dot)(const double* x, const double* y, size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, size_t n);
    // C(m x n) = A(m x k) * B(k x n), row-major, C overwritten
    void (*matmul_nn)(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
    // C(m x n) = A(m x k) * B(n x k)^T
    void (*matmul_nt)(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
    // C(m x n) = A(k x m)^T * B(k x n)
    void (*matmul_tn)(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
};

enum class Backend { Scalar, Avx2 };

const KernelTable& scalar_table();
bool avx2_available();
const KernelTable& avx2_table();  // only valid when avx2_available()

// Active table used by all numeric code.
const KernelTable& active();
// Force a backend; returns false (and leaves the active table unchanged)
// when the requested backend is not available on this machine.
bool set_backend(Backend b);
std::string active_name();

inline double dot(const double* x, const double* y, size_t n) { return active().dot(x, y, n); }
inline void axpy(double a, const double* x, double* y, size_t n) { active().axpy(a, x, y, n); }
inline void matmul_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    active().matmul_nn(a, b, c, m, k, n);
}
inline void matmul_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    active().matmul_nt(a, b, c, m, k, n);
}
inline void matmul_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    active().matmul_tn(a, b, c, m, k, n);
}

}  // namespace fatbench::kern
