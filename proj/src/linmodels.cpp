#include "fatbench/linmodels.hpp"

#include <atomic>
#include <cmath>

#include "fatbench/kernels.hpp"
#include "fatbench/metrics.hpp"

namespace fatbench::linmod {

namespace {

std::atomic<uint64_t> g_ridge_fits{0};

// In-place Cholesky solve of A x = b for symmetric positive definite A.
// Returns false if a pivot collapses.
bool cholesky_solve(nk::Tensor& a, std::vector<double>& b) {
    const int n = a.rows;
    for (int j = 0; j < n; ++j) {
        double d = a.at(j, j);
        for (int k = 0; k < j; ++k) d -= a.at(j, k) * a.at(j, k);
        if (!(d > 0.0)) return false;
        d = std::sqrt(d);
        a.at(j, j) = d;
        for (int i = j + 1; i < n; ++i) {
            double s = a.at(i, j);
            for (int k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
            a.at(i, j) = s / d;
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = b[size_t(i)];
        for (int k = 0; k < i; ++k) s -= a.at(i, k) * b[size_t(k)];
        b[size_t(i)] = s / a.at(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[size_t(i)];
        for (int k = i + 1; k < n; ++k) s -= a.at(k, i) * b[size_t(k)];
        b[size_t(i)] = s / a.at(i, i);
    }
    return true;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow.
double softplus(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

}  // namespace

double RidgeModel::predict(std::span<const double> x) const {
    if (x.size() != weights.size()) throw ContractError("RidgeModel::predict: dimension mismatch");
    return kern::dot(x.data(), weights.data(), x.size()) + intercept;
}

uint64_t ridge_fit_count() { return g_ridge_fits.load(); }
void reset_ridge_fit_count() { g_ridge_fits.store(0); }

RidgeModel ridge_fit(const nk::Tensor& X, const std::vector<double>& y, double alpha,
                     bool with_intercept) {
    const int n = X.rows, d = X.cols;
    if (n == 0) throw ContractError("ridge_fit: empty design matrix");
    if (int(y.size()) != n) throw ContractError("ridge_fit: row/target mismatch");
    if (!(alpha > 0.0)) throw ContractError("ridge_fit: alpha must be positive");
    g_ridge_fits.fetch_add(1, std::memory_order_relaxed);

    std::vector<double> xmean(size_t(d), 0.0);
    double ymean = 0.0;
    if (with_intercept) {
        for (int i = 0; i < n; ++i) {
            const double* xi = X.row(i);
            for (int j = 0; j < d; ++j) xmean[size_t(j)] += xi[j];
            ymean += y[size_t(i)];
        }
        for (auto& m : xmean) m /= n;
        ymean /= n;
    }

    nk::Tensor xc = X;
    std::vector<double> yc = y;
    if (with_intercept) {
        for (int i = 0; i < n; ++i) {
            double* xi = xc.row(i);
            for (int j = 0; j < d; ++j) xi[j] -= xmean[size_t(j)];
            yc[size_t(i)] -= ymean;
        }
    }

    nk::Tensor gram(d, d);
    kern::matmul_tn(xc.data(), xc.data(), gram.data(), size_t(d), size_t(n), size_t(d));
    std::vector<double> rhs(size_t(d), 0.0);
    for (int i = 0; i < n; ++i) kern::axpy(yc[size_t(i)], xc.row(i), rhs.data(), size_t(d));

    for (int j = 0; j < d; ++j) gram.at(j, j) += alpha;

    double jitter = 0.0;
    for (int j = 0; j < d; ++j) jitter += gram.at(j, j);
    jitter = jitter / d * 1e-12;
    for (int attempt = 0;; ++attempt) {
        nk::Tensor a = gram;
        std::vector<double> b = rhs;
        if (cholesky_solve(a, b)) {
            RidgeModel m;
            m.weights = std::move(b);
            m.alpha = alpha;
            m.with_intercept = with_intercept;
            if (with_intercept)
                m.intercept = ymean - kern::dot(xmean.data(), m.weights.data(), size_t(d));
            return m;
        }
        if (attempt >= 3) throw NumericFault("ridge_fit: Cholesky failed");
        for (int j = 0; j < d; ++j) gram.at(j, j) += jitter;
        jitter *= 10.0;
    }
}

double LogisticModel::raw(std::span<const double> x) const {
    if (x.size() != weights.size()) throw ContractError("LogisticModel::raw: dimension mismatch");
    return kern::dot(x.data(), weights.data(), x.size()) + intercept;
}

double LogisticModel::score(std::span<const double> x) const { return sigmoid(raw(x)); }

double logistic_loss(const nk::Tensor& X, const std::vector<int>& labels, double inv_reg,
                     const std::vector<double>& w, double b) {
    const int n = X.rows;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = kern::dot(X.row(i), w.data(), size_t(X.cols)) + b;
        loss += softplus(z) - (labels[size_t(i)] != 0 ? z : 0.0);
    }
    double ss = 0.0;
    for (double wi : w) ss += wi * wi;
    return loss + ss / (2.0 * inv_reg);
}

LogisticModel logistic_fit(const nk::Tensor& X, const std::vector<int>& labels, double inv_reg,
                           const LogisticFitOptions& opts) {
    const int n = X.rows, d = X.cols;
    if (n == 0) throw ContractError("logistic_fit: empty design matrix");
    if (int(labels.size()) != n) throw ContractError("logistic_fit: row/label mismatch");
    if (!(inv_reg > 0.0)) throw ContractError("logistic_fit: C must be positive");
    long pos = 0;
    for (int y : labels) pos += (y != 0);
    if (pos == 0 || pos == n) throw ContractError("logistic_fit: single-class labels");

    std::vector<double> w(size_t(d), 0.0);
    double b = 0.0;
    double loss = logistic_loss(X, labels, inv_reg, w, b);
    double step = 1.0 / double(n);

    std::vector<double> gw(static_cast<size_t>(d));
    for (int iter = 0; iter < opts.max_iters; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (int i = 0; i < n; ++i) {
            double z = kern::dot(X.row(i), w.data(), size_t(d)) + b;
            double r = sigmoid(z) - (labels[size_t(i)] != 0 ? 1.0 : 0.0);
            kern::axpy(r, X.row(i), gw.data(), size_t(d));
            gb += r;
        }
        for (int j = 0; j < d; ++j) gw[size_t(j)] += w[size_t(j)] / inv_reg;

        double gnorm2 = gb * gb + kern::dot(gw.data(), gw.data(), size_t(d));
        if (std::sqrt(gnorm2) < opts.grad_tol) break;

        // Backtracking line search with Armijo condition.
        step *= 2.0;
        std::vector<double> wt(static_cast<size_t>(d));
        bool moved = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (int j = 0; j < d; ++j) wt[size_t(j)] = w[size_t(j)] - step * gw[size_t(j)];
            double bt_b = b - step * gb;
            double lt = logistic_loss(X, labels, inv_reg, wt, bt_b);
            if (lt <= loss - 1e-4 * step * gnorm2) {
                w.swap(wt);
                b = bt_b;
                loss = lt;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }

    LogisticModel m;
    m.weights = std::move(w);
    m.intercept = b;
    m.inv_reg = inv_reg;
    return m;
}

nk::Tensor design_matrix(const ObsList& obs, int dim) {
    nk::Tensor X(int(obs.size()), dim);
    for (size_t i = 0; i < obs.size(); ++i) {
        if (int(obs[i]->embedding.size()) != dim)
            throw ContractError("design_matrix: embedding dimension mismatch");
        std::copy(obs[i]->embedding.begin(), obs[i]->embedding.end(), X.row(int(i)));
    }
    return X;
}

RidgeModel tune_cs_regression(const ObsList& train, const ObsList& val, int dim) {
    if (train.empty()) throw ContractError("tune_cs_regression: empty train pool");
    if (val.empty()) throw ContractError("tune_cs_regression: empty validation pool");
    nk::Tensor Xtr = design_matrix(train, dim);
    std::vector<double> ytr(train.size());
    for (size_t i = 0; i < train.size(); ++i) ytr[i] = train[i]->target.hours;

    RidgeModel best;
    double best_rmse = 0.0;
    bool first = true;
    for (double alpha : ridge_alpha_grid()) {
        RidgeModel m = ridge_fit(Xtr, ytr, alpha, true);
        std::vector<double> pred(val.size()), truth(val.size());
        for (size_t i = 0; i < val.size(); ++i) {
            pred[i] = m.predict(val[i]->embedding);
            truth[i] = val[i]->target.hours;
        }
        double r = metrics::rmse(pred, truth);
        if (first || r < best_rmse) {
            first = false;
            best_rmse = r;
            best = std::move(m);
        }
    }
    return best;
}

LogisticModel tune_cs_classifier(const ObsList& train, const ObsList& val, int dim) {
    if (train.empty()) throw ContractError("tune_cs_classifier: empty train pool");
    if (val.empty()) throw ContractError("tune_cs_classifier: empty validation pool");
    nk::Tensor Xtr = design_matrix(train, dim);
    std::vector<int> ytr(train.size());
    for (size_t i = 0; i < train.size(); ++i) ytr[i] = train[i]->target.label;

    LogisticModel best;
    double best_auc = -1.0;
    bool first = true;
    for (double c : logistic_c_grid()) {
        LogisticModel m = logistic_fit(Xtr, ytr, c);
        std::vector<double> scores(val.size());
        std::vector<int> labels(val.size());
        for (size_t i = 0; i < val.size(); ++i) {
            scores[i] = m.score(val[i]->embedding);
            labels[i] = val[i]->target.label;
        }
        auto a = metrics::auc(scores, labels);
        double av = a.value_or(0.5);
        if (first || av > best_auc) {
            first = false;
            best_auc = av;
            best = std::move(m);
        }
    }
    return best;
}

namespace {

std::optional<double> me_predict_impl(const core::SupportSet& history,
                                      std::span<const double> query, double alpha, bool labels) {
    if (history.size() < 2) return std::nullopt;
    const int d = int(query.size());
    nk::Tensor X(int(history.size()), d);
    std::vector<double> y(history.size());
    for (size_t i = 0; i < history.size(); ++i) {
        const auto& e = history.items[i]->embedding;
        if (int(e.size()) != d) throw ContractError("me_predict: dimension mismatch");
        std::copy(e.begin(), e.end(), X.row(int(i)));
        y[i] = labels ? double(history.items[i]->target.label) : history.items[i]->target.hours;
    }
    RidgeModel m = ridge_fit(X, y, alpha, true);
    return m.predict(query);
}

}  // namespace

std::optional<double> me_predict_hours(const core::SupportSet& history,
                                       std::span<const double> query, double alpha) {
    return me_predict_impl(history, query, alpha, false);
}

std::optional<double> me_predict_label_score(const core::SupportSet& history,
                                             std::span<const double> query, double alpha) {
    return me_predict_impl(history, query, alpha, true);
}

}  // namespace fatbench::linmod
