#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "fatbench/errors.hpp"

namespace fatbench::nk {

// Dense row-major 2-D tensor of doubles. Vectors are 1xN or Nx1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), 0.0) {
        if (r < 0 || c < 0) throw ContractError("Tensor: negative dimension");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    static Tensor full(int r, int c, double x) {
        Tensor t(r, c);
        for (auto& e : t.v) e = x;
        return t;
    }

    static Tensor row_vector(const std::vector<double>& vals) {
        Tensor t(1, int(vals.size()));
        t.v = vals;
        return t;
    }

    static Tensor from(std::initializer_list<std::initializer_list<double>> rows_in) {
        int r = int(rows_in.size());
        int c = r > 0 ? int(rows_in.begin()->size()) : 0;
        Tensor t(r, c);
        int i = 0;
        for (const auto& row : rows_in) {
            if (int(row.size()) != c) throw ContractError("Tensor::from: ragged rows");
            int j = 0;
            for (double x : row) t.at(i, j++) = x;
            ++i;
        }
        return t;
    }

    size_t size() const { return v.size(); }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    double* row(int i) { return v.data() + size_t(i) * size_t(cols); }
    const double* row(int i) const { return v.data() + size_t(i) * size_t(cols); }
    double& at(int i, int j) { return v[size_t(i) * size_t(cols) + size_t(j)]; }
    double at(int i, int j) const { return v[size_t(i) * size_t(cols) + size_t(j)]; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

}  // namespace fatbench::nk
