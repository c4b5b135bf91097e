#include <doctest.h>

#include <tuple>
#include <vector>

#include "fatbench/kernels.hpp"
#include "fatbench/rng.hpp"

using namespace fatbench;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

bool close_rel(double a, double b, double tol) {
    double scale = std::max({std::abs(a), std::abs(b), 1.0});
    return std::abs(a - b) <= tol * scale;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar dot and axpy match plain loops") {
    Rng rng(1);
    const auto& k = kern::scalar_table();
    for (size_t n : {size_t(1), size_t(3), size_t(8), size_t(17), size_t(64), size_t(129)}) {
        auto x = random_vec(n, rng);
        auto y = random_vec(n, rng);
        double expect = 0.0;
        for (size_t i = 0; i < n; ++i) expect += x[i] * y[i];
        CHECK(k.dot(x.data(), y.data(), n) == doctest::Approx(expect).epsilon(1e-12));

        auto y2 = y;
        k.axpy(0.37, x.data(), y2.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y[i] + 0.37 * x[i]));
    }
}

TEST_CASE("scalar matmul variants agree with index-sum definitions") {
    Rng rng(2);
    const auto& k = kern::scalar_table();
    size_t m = 5, kk = 7, n = 4;
    auto a = random_vec(m * kk, rng);
    auto b = random_vec(kk * n, rng);
    std::vector<double> c_nn(m * n), c_ref(m * n, 0.0);
    k.matmul_nn(a.data(), b.data(), c_nn.data(), m, kk, n);
    for (size_t i = 0; i < m; ++i)
        for (size_t l = 0; l < kk; ++l)
            for (size_t j = 0; j < n; ++j) c_ref[i * n + j] += a[i * kk + l] * b[l * n + j];
    for (size_t i = 0; i < m * n; ++i) CHECK(close_rel(c_nn[i], c_ref[i], 1e-12));

    // nt: B given as (n x kk), compare against explicit transpose
    auto bt = random_vec(n * kk, rng);
    std::vector<double> c_nt(m * n);
    k.matmul_nt(a.data(), bt.data(), c_nt.data(), m, kk, n);
    std::fill(c_ref.begin(), c_ref.end(), 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            for (size_t l = 0; l < kk; ++l) c_ref[i * n + j] += a[i * kk + l] * bt[j * kk + l];
    for (size_t i = 0; i < m * n; ++i) CHECK(close_rel(c_nt[i], c_ref[i], 1e-12));

    // tn: A given as (kk x m)
    auto at = random_vec(kk * m, rng);
    std::vector<double> c_tn(m * n);
    k.matmul_tn(at.data(), b.data(), c_tn.data(), m, kk, n);
    std::fill(c_ref.begin(), c_ref.end(), 0.0);
    for (size_t l = 0; l < kk; ++l)
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) c_ref[i * n + j] += at[l * m + i] * b[l * n + j];
    for (size_t i = 0; i < m * n; ++i) CHECK(close_rel(c_tn[i], c_ref[i], 1e-12));
}

TEST_CASE("avx2 backend matches scalar reference") {
    if (!kern::avx2_available()) {
        MESSAGE("AVX2 not available on this machine; dispatch falls back to scalar");
        return;
    }
    const auto& sc = kern::scalar_table();
    const auto& vx = kern::avx2_table();
    Rng rng(3);
    for (size_t n : {size_t(1), size_t(2), size_t(4), size_t(7), size_t(12), size_t(33),
                     size_t(64), size_t(127)}) {
        auto x = random_vec(n, rng);
        auto y = random_vec(n, rng);
        CHECK(close_rel(sc.dot(x.data(), y.data(), n), vx.dot(x.data(), y.data(), n), 1e-12));
        auto y1 = y, y2 = y;
        sc.axpy(-1.3, x.data(), y1.data(), n);
        vx.axpy(-1.3, x.data(), y2.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(close_rel(y1[i], y2[i], 1e-12));
    }
    const std::tuple<size_t, size_t, size_t> shapes[] = {
        {1, 1, 1}, {3, 5, 2}, {8, 8, 8}, {13, 31, 9}, {32, 64, 24}};
    for (auto [m, kk, n] : shapes) {
        auto a = random_vec(m * kk, rng);
        auto b = random_vec(kk * n, rng);
        auto bt = random_vec(n * kk, rng);
        auto at = random_vec(kk * m, rng);
        std::vector<double> c1(m * n), c2(m * n);
        sc.matmul_nn(a.data(), b.data(), c1.data(), m, kk, n);
        vx.matmul_nn(a.data(), b.data(), c2.data(), m, kk, n);
        for (size_t i = 0; i < m * n; ++i) CHECK(close_rel(c1[i], c2[i], 1e-12));
        sc.matmul_nt(a.data(), bt.data(), c1.data(), m, kk, n);
        vx.matmul_nt(a.data(), bt.data(), c2.data(), m, kk, n);
        for (size_t i = 0; i < m * n; ++i) CHECK(close_rel(c1[i], c2[i], 1e-12));
        sc.matmul_tn(at.data(), b.data(), c1.data(), m, kk, n);
        vx.matmul_tn(at.data(), b.data(), c2.data(), m, kk, n);
        for (size_t i = 0; i < m * n; ++i) CHECK(close_rel(c1[i], c2[i], 1e-12));
    }
}

TEST_CASE("backend selection") {
    CHECK(kern::set_backend(kern::Backend::Scalar));
    CHECK(kern::active_name() == "scalar");
    if (kern::avx2_available()) {
        CHECK(kern::set_backend(kern::Backend::Avx2));
        CHECK(kern::active_name() == "avx2");
    } else {
        CHECK_FALSE(kern::set_backend(kern::Backend::Avx2));
        CHECK(kern::active_name() == "scalar");
    }
}

}  // TEST_SUITE
