#pragma once

// Independent oracles used to freeze expected values. Everything here is
// deliberately brute-force and separate from the library implementation
// paths it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "fatbench/tensor.hpp"

namespace oracles {

// AUC by exhaustive positive/negative pair counting, ties get half credit.
inline double auc_pair_counting(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    double wins = 0.0;
    long n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0) continue;
        ++n_pos;
        for (size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    for (int y : labels) n_neg += (y == 0);
    return wins / (double(n_pos) * double(n_neg));
}

// Threshold sweep over midpoints plus +-inf sentinels: minimize |prec-rec|,
// ties to higher balanced accuracy, then the lower threshold.
inline double sweep_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> uniq = scores;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> cands;
    cands.push_back(-std::numeric_limits<double>::infinity());
    for (size_t i = 0; i + 1 < uniq.size(); ++i) cands.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    cands.push_back(std::numeric_limits<double>::infinity());

    double best_th = 0.5, best_obj = std::numeric_limits<double>::infinity(), best_bacc = -1.0;
    bool found = false;
    for (double th : cands) {
        long tp = 0, fp = 0, tn = 0, fn = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            bool pred = scores[i] >= th;
            if (pred && labels[i]) ++tp;
            else if (pred) ++fp;
            else if (labels[i]) ++fn;
            else ++tn;
        }
        if (tp + fp == 0 || tp + fn == 0 || tn + fp == 0) continue;
        double prec = double(tp) / double(tp + fp);
        double rec = double(tp) / double(tp + fn);
        double bacc = 0.5 * (rec + double(tn) / double(tn + fp));
        double obj = std::abs(prec - rec);
        if (!found || obj < best_obj || (obj == best_obj && bacc > best_bacc)) {
            found = true;
            best_obj = obj;
            best_bacc = bacc;
            best_th = th;
        }
    }
    return best_th;
}

// Ridge objective on centered-intercept form: mean handling matches a model
// with an unpenalized intercept.
inline double ridge_objective(const fatbench::nk::Tensor& X, const std::vector<double>& y,
                              double alpha, const std::vector<double>& w, double b) {
    double ss = 0.0;
    for (int i = 0; i < X.rows; ++i) {
        double pred = b;
        for (int j = 0; j < X.cols; ++j) pred += X.at(i, j) * w[size_t(j)];
        double d = pred - y[size_t(i)];
        ss += d * d;
    }
    double pen = 0.0;
    for (double wi : w) pen += wi * wi;
    return ss + alpha * pen;
}

struct RidgeOracleFit {
    std::vector<double> w;
    double b = 0.0;
};

// Plain gradient descent with backtracking on the ridge objective, run to
// tight tolerance. Independent of the library's closed-form route.
inline RidgeOracleFit ridge_gd_oracle(const fatbench::nk::Tensor& X, const std::vector<double>& y,
                                      double alpha, bool with_intercept, int max_iters = 200000,
                                      double tol = 1e-12) {
    RidgeOracleFit fit;
    fit.w.assign(size_t(X.cols), 0.0);
    double loss = ridge_objective(X, y, alpha, fit.w, fit.b);
    double step = 1.0 / (double(X.rows) + alpha + 1.0);
    for (int it = 0; it < max_iters; ++it) {
        std::vector<double> gw(size_t(X.cols), 0.0);
        double gb = 0.0;
        for (int i = 0; i < X.rows; ++i) {
            double pred = fit.b;
            for (int j = 0; j < X.cols; ++j) pred += X.at(i, j) * fit.w[size_t(j)];
            double r = 2.0 * (pred - y[size_t(i)]);
            for (int j = 0; j < X.cols; ++j) gw[size_t(j)] += r * X.at(i, j);
            gb += r;
        }
        for (int j = 0; j < X.cols; ++j) gw[size_t(j)] += 2.0 * alpha * fit.w[size_t(j)];
        if (!with_intercept) gb = 0.0;
        double gnorm2 = gb * gb;
        for (double g : gw) gnorm2 += g * g;
        if (std::sqrt(gnorm2) < tol) break;
        step *= 2.0;
        for (int bt = 0; bt < 80; ++bt) {
            std::vector<double> wt(fit.w);
            for (int j = 0; j < X.cols; ++j) wt[size_t(j)] -= step * gw[size_t(j)];
            double bt_b = fit.b - step * gb;
            double lt = ridge_objective(X, y, alpha, wt, bt_b);
            if (lt <= loss - 1e-4 * step * gnorm2) {
                fit.w.swap(wt);
                fit.b = bt_b;
                loss = lt;
                break;
            }
            step *= 0.5;
        }
    }
    return fit;
}

// Dense symmetric solve by Gaussian elimination with partial pivoting; the
// independent closed-form route for small ridge systems.
inline std::vector<double> gauss_solve(fatbench::nk::Tensor a, std::vector<double> b) {
    const int n = a.rows;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a.at(r, col)) > std::abs(a.at(piv, col))) piv = r;
        if (piv != col) {
            for (int c = 0; c < n; ++c) std::swap(a.at(col, c), a.at(piv, c));
            std::swap(b[size_t(col)], b[size_t(piv)]);
        }
        double d = a.at(col, col);
        for (int r = col + 1; r < n; ++r) {
            double f = a.at(r, col) / d;
            for (int c = col; c < n; ++c) a.at(r, c) -= f * a.at(col, c);
            b[size_t(r)] -= f * b[size_t(col)];
        }
    }
    std::vector<double> x(static_cast<size_t>(n));
    for (int r = n - 1; r >= 0; --r) {
        double s = b[size_t(r)];
        for (int c = r + 1; c < n; ++c) s -= a.at(r, c) * x[size_t(c)];
        x[size_t(r)] = s / a.at(r, r);
    }
    return x;
}

// Central finite differences against analytic gradients. Relative error per
// component is |fd - an| / max(|fd|, |an|, 0.01); the floor keeps near-zero
// components from amplifying truncation noise into false failures.
struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

inline GradCheck finite_diff_check(
    std::vector<fatbench::nk::Tensor> params,
    const std::function<double(const std::vector<fatbench::nk::Tensor>&)>& loss_of,
    const std::vector<fatbench::nk::Tensor>& analytic, double h = 1e-4) {
    GradCheck res;
    for (size_t p = 0; p < params.size(); ++p) {
        for (size_t i = 0; i < params[p].size(); ++i) {
            double orig = params[p].v[i];
            params[p].v[i] = orig + h;
            double up = loss_of(params);
            params[p].v[i] = orig - h;
            double down = loss_of(params);
            params[p].v[i] = orig;
            double fd = (up - down) / (2.0 * h);
            double an = analytic[p].v[i];
            double abs_err = std::abs(fd - an);
            double rel = abs_err / std::max({std::abs(fd), std::abs(an), 0.01});
            res.max_rel_error = std::max(res.max_rel_error, rel);
            res.max_abs_error = std::max(res.max_abs_error, abs_err);
        }
    }
    return res;
}

}  // namespace oracles
