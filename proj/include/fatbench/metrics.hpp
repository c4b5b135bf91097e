#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fatbench::metrics {

// Classification metrics return nullopt when undefined (single-class input,
// empty denominators); callers report rather than throw.

// Probability that a random positive outranks a random negative; ties get
// half credit (rank / Mann-Whitney formulation, matches exhaustive pair
// counting exactly).
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

// Positive prediction means score >= threshold.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels,
                       double threshold);

std::optional<double> balanced_accuracy(const Confusion& c);
std::optional<double> precision(const Confusion& c);
std::optional<double> recall(const Confusion& c);

std::optional<double> pearson(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);

struct Calibration {
    double threshold = 0.5;
    bool degenerate = false;  // validation had a single class; fell back to 0.5
};

// Sweeps midpoints between adjacent distinct scores plus -inf/+inf sentinels
// and returns the threshold minimizing |precision - recall|; ties broken
// toward higher balanced accuracy, then the lower threshold.
Calibration calibrate_threshold(std::span<const double> scores, std::span<const int> labels);

// AUC of predicting the label from group membership alone (each point scored
// by its group's positive rate). ~0.5 means the attribute is uninformative.
std::optional<double> confound_aware_auc(std::span<const int> group_ids,
                                         std::span<const int> labels);

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;   // sample std (n-1); 0 when n < 2
    double ci95_half = 0.0;  // 1.96 * stddev / sqrt(n)
    int n = 0;
};

// Mean/dispersion over replicate values (e.g. the 25 evaluation iterations).
Aggregate aggregate(const std::vector<double>& replicates);

}  // namespace fatbench::metrics
