#include "fatbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "fatbench/errors.hpp"

namespace fatbench::metrics {

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ContractError("auc: size mismatch");
    size_t n = scores.size();
    long n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    long n_neg = long(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average ranks over ties, then the Mann-Whitney U statistic.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (double(i + 1) + double(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double u = rank_sum_pos - 0.5 * double(n_pos) * double(n_pos + 1);
    return u / (double(n_pos) * double(n_neg));
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels,
                       double threshold) {
    if (scores.size() != labels.size()) throw ContractError("confusion_at: size mismatch");
    Confusion c;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        bool truth = labels[i] != 0;
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

std::optional<double> balanced_accuracy(const Confusion& c) {
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0) return std::nullopt;
    double tpr = double(c.tp) / double(c.tp + c.fn);
    double tnr = double(c.tn) / double(c.tn + c.fp);
    return 0.5 * (tpr + tnr);
}

std::optional<double> precision(const Confusion& c) {
    if (c.tp + c.fp == 0) return std::nullopt;
    return double(c.tp) / double(c.tp + c.fp);
}

std::optional<double> recall(const Confusion& c) {
    if (c.tp + c.fn == 0) return std::nullopt;
    return double(c.tp) / double(c.tp + c.fn);
}

std::optional<double> pearson(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ContractError("pearson: size mismatch");
    size_t n = pred.size();
    if (n < 2) return std::nullopt;
    double mp = 0.0, mt = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mp += pred[i];
        mt += truth[i];
    }
    mp /= double(n);
    mt /= double(n);
    double spp = 0.0, stt = 0.0, spt = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double dp = pred[i] - mp;
        double dt = truth[i] - mt;
        spp += dp * dp;
        stt += dt * dt;
        spt += dp * dt;
    }
    if (spp == 0.0 || stt == 0.0) return std::nullopt;
    return spt / std::sqrt(spp * stt);
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ContractError("rmse: size mismatch");
    if (pred.empty()) throw ContractError("rmse: empty input");
    double ss = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - truth[i];
        ss += d * d;
    }
    return std::sqrt(ss / double(pred.size()));
}

Calibration calibrate_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ContractError("calibrate_threshold: size mismatch");
    long n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    if (n_pos == 0 || n_pos == long(labels.size())) return Calibration{0.5, true};

    std::vector<double> uniq(scores.begin(), scores.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::vector<double> candidates;
    candidates.push_back(-std::numeric_limits<double>::infinity());
    for (size_t i = 0; i + 1 < uniq.size(); ++i)
        candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    candidates.push_back(std::numeric_limits<double>::infinity());

    Calibration best;
    double best_obj = std::numeric_limits<double>::infinity();
    double best_bacc = -1.0;
    bool found = false;
    for (double th : candidates) {
        Confusion c = confusion_at(scores, labels, th);
        auto prec = precision(c);
        auto rec = recall(c);
        auto bacc = balanced_accuracy(c);
        if (!prec || !rec || !bacc) continue;
        double obj = std::abs(*prec - *rec);
        if (!found || obj < best_obj || (obj == best_obj && *bacc > best_bacc)) {
            found = true;
            best_obj = obj;
            best_bacc = *bacc;
            best.threshold = th;
        }
    }
    if (!found) return Calibration{0.5, true};
    return best;
}

std::optional<double> confound_aware_auc(std::span<const int> group_ids,
                                         std::span<const int> labels) {
    if (group_ids.size() != labels.size()) throw ContractError("confound_aware_auc: size mismatch");
    std::unordered_map<int, std::pair<long, long>> counts;  // group -> (n, n_pos)
    for (size_t i = 0; i < group_ids.size(); ++i) {
        auto& c = counts[group_ids[i]];
        ++c.first;
        c.second += (labels[i] != 0);
    }
    if (counts.size() < 2) return std::nullopt;
    std::vector<double> scores(group_ids.size());
    for (size_t i = 0; i < group_ids.size(); ++i) {
        const auto& c = counts[group_ids[i]];
        scores[i] = double(c.second) / double(c.first);
    }
    return auc(scores, labels);
}

Aggregate aggregate(const std::vector<double>& replicates) {
    Aggregate a;
    a.n = int(replicates.size());
    if (a.n == 0) return a;
    double sum = 0.0;
    for (double x : replicates) sum += x;
    a.mean = sum / double(a.n);
    if (a.n >= 2) {
        double ss = 0.0;
        for (double x : replicates) {
            double d = x - a.mean;
            ss += d * d;
        }
        a.stddev = std::sqrt(ss / double(a.n - 1));
        a.ci95_half = 1.96 * a.stddev / std::sqrt(double(a.n));
    }
    return a;
}

}  // namespace fatbench::metrics
