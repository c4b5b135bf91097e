#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fatbench/core.hpp"
#include "fatbench/tensor.hpp"

namespace fatbench::linmod {

struct RidgeModel {
    std::vector<double> weights;
    double intercept = 0.0;
    double alpha = 1.0;
    bool with_intercept = true;

    double predict(std::span<const double> x) const;
};

// Solves (Xc^T Xc + alpha I) w = Xc^T yc on centered data; the intercept is
// recovered from the means and stays unpenalized. with_intercept=false skips
// centering and fixes the intercept at zero.
RidgeModel ridge_fit(const nk::Tensor& X, const std::vector<double>& y, double alpha,
                     bool with_intercept = true);

// Process-wide fit counter; lets tests assert that per-speaker baselines
// really retrain on every call.
uint64_t ridge_fit_count();
void reset_ridge_fit_count();

struct LogisticModel {
    std::vector<double> weights;
    double intercept = 0.0;
    double inv_reg = 1.0;  // C
    double threshold = 0.5;

    double raw(std::span<const double> x) const;    // w.x + b
    double score(std::span<const double> x) const;  // sigmoid(raw)
};

struct LogisticFitOptions {
    int max_iters = 2000;
    double grad_tol = 1e-8;
};

// Full-batch gradient descent with backtracking line search on
// sum cross-entropy + ||w||^2 / (2C), intercept unpenalized.
LogisticModel logistic_fit(const nk::Tensor& X, const std::vector<int>& labels, double inv_reg,
                           const LogisticFitOptions& opts = {});

// Objective value at given coefficients; the oracle tests reuse this.
double logistic_loss(const nk::Tensor& X, const std::vector<int>& labels, double inv_reg,
                     const std::vector<double>& w, double b);

using ObsList = std::vector<const core::Observation*>;

nk::Tensor design_matrix(const ObsList& obs, int dim);

inline const std::vector<double>& ridge_alpha_grid() {
    static const std::vector<double> g{0.1, 1.0, 10.0, 100.0, 1000.0};
    return g;
}

inline const std::vector<double>& logistic_c_grid() {
    static const std::vector<double> g{0.001, 0.01, 0.1, 1.0, 10.0};
    return g;
}

// Cross-sectional regression: one ridge per grid alpha on train, pick the
// alpha with the lowest validation RMSE (smallest alpha on ties).
RidgeModel tune_cs_regression(const ObsList& train, const ObsList& val, int dim);

// Cross-sectional classifier: grid over C, selected by validation AUC
// (smallest C on ties). Threshold calibration happens separately.
LogisticModel tune_cs_classifier(const ObsList& train, const ObsList& val, int dim);

inline constexpr double kMeAlpha = 1000.0;

// Per-speaker baseline: a fresh ridge on exactly the speaker's history.
// Fewer than 2 history points -> nullopt (recorded as a skip upstream).
std::optional<double> me_predict_hours(const core::SupportSet& history,
                                       std::span<const double> query, double alpha = kMeAlpha);
// Classifier variant: ridge on the {0,1} labels; the continuous output is
// the score, thresholded by the shared calibration step.
std::optional<double> me_predict_label_score(const core::SupportSet& history,
                                             std::span<const double> query,
                                             double alpha = kMeAlpha);

}  // namespace fatbench::linmod
