#include <doctest.h>

#include <cmath>

#include "fatbench/metrics.hpp"
#include "fatbench/rng.hpp"
#include "oracles.hpp"

using namespace fatbench;
using namespace fatbench::metrics;

namespace {

struct RandomScored {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Random scored sets with deliberate ties (scores quantized half the time).
RandomScored random_scored(Rng& rng, int n) {
    RandomScored rs;
    bool quantize = rng.uniform01() < 0.5;
    for (int i = 0; i < n; ++i) {
        double s = rng.uniform01();
        if (quantize) s = std::round(s * 8.0) / 8.0;
        rs.scores.push_back(s);
        rs.labels.push_back(rng.uniform01() < 0.4 ? 1 : 0);
    }
    return rs;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("auc examples") {
    // 3 of 4 positive-negative pairs ordered correctly
    CHECK(*auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) ==
          doctest::Approx(0.75));
    CHECK(*auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(*auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}) == 0.5);
    CHECK_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
    CHECK_FALSE(auc(std::vector<double>{}, std::vector<int>{}).has_value());
}

TEST_CASE("auc equals exhaustive pair counting exactly") {
    Rng rng(11);
    for (int rep = 0; rep < 200; ++rep) {
        auto rs = random_scored(rng, 2 + int(rng.below(60)));
        auto fast = auc(rs.scores, rs.labels);
        bool has_both = false;
        {
            int pos = 0;
            for (int y : rs.labels) pos += y;
            has_both = pos > 0 && pos < int(rs.labels.size());
        }
        if (!has_both) {
            CHECK_FALSE(fast.has_value());
            continue;
        }
        double slow = oracles::auc_pair_counting(rs.scores, rs.labels);
        CHECK(*fast == slow);  // exact, not approximate
    }
}

TEST_CASE("auc invariances") {
    Rng rng(12);
    for (int rep = 0; rep < 50; ++rep) {
        auto rs = random_scored(rng, 30);
        auto base = auc(rs.scores, rs.labels);
        if (!base) continue;
        // strictly increasing transform
        auto warped = rs.scores;
        for (auto& s : warped) s = std::exp(3.0 * s) + 1.0;
        CHECK(*auc(warped, rs.labels) == doctest::Approx(*base).epsilon(1e-12));
    }
    // tie-free complement symmetry
    std::vector<double> s{0.11, 0.27, 0.31, 0.49, 0.73, 0.88};
    std::vector<int> y{0, 1, 0, 1, 1, 0};
    std::vector<double> neg = s;
    for (auto& x : neg) x = -x;
    CHECK(*auc(s, y) + *auc(neg, y) == doctest::Approx(1.0));
}

TEST_CASE("confusion-matrix metrics") {
    std::vector<double> perfect{0.9, 0.1, 0.8, 0.2};
    std::vector<int> labels{1, 0, 1, 0};
    auto c = confusion_at(perfect, labels, 0.5);
    CHECK(*balanced_accuracy(c) == 1.0);
    CHECK(*precision(c) == 1.0);
    CHECK(*recall(c) == 1.0);

    // all predicted positive: recall 1, precision = base rate
    auto c2 = confusion_at(std::vector<double>{1, 1, 1, 1}, labels, 0.5);
    CHECK(*recall(c2) == 1.0);
    CHECK(*precision(c2) == doctest::Approx(0.5));

    // hand confusion matrix: TP=1 FN=1 TN=2 FP=0
    auto c3 = confusion_at(std::vector<double>{1, 0, 0, 0}, std::vector<int>{1, 0, 1, 0}, 0.5);
    CHECK(*recall(c3) == doctest::Approx(0.5));
    CHECK(*precision(c3) == 1.0);
    CHECK(*balanced_accuracy(c3) == doctest::Approx(0.75));

    // undefined cases signal rather than throw
    auto c4 = confusion_at(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}, 0.5);
    CHECK_FALSE(balanced_accuracy(c4).has_value());
    CHECK_FALSE(precision(c4).has_value());
    CHECK_FALSE(recall(c4).has_value());
}

TEST_CASE("pearson and rmse") {
    std::vector<double> x{1.0, 2.0, 3.0, 5.0};
    CHECK(*pearson(x, x) == doctest::Approx(1.0));
    CHECK(rmse(x, x) == 0.0);
    std::vector<double> nx = x;
    for (auto& v : nx) v = -v;
    CHECK(*pearson(nx, x) == doctest::Approx(-1.0));

    std::vector<double> pred{1.0, 2.0, 3.0}, truth{2.0, 2.0, 2.0};
    CHECK_FALSE(pearson(pred, truth).has_value());  // zero variance in truth
    CHECK(rmse(pred, truth) == doctest::Approx(std::sqrt(2.0 / 3.0)));

    // affine invariance
    Rng rng(5);
    std::vector<double> a, b;
    for (int i = 0; i < 40; ++i) {
        a.push_back(rng.normal());
        b.push_back(0.6 * a.back() + rng.normal(0.0, 0.4));
    }
    auto base = *pearson(a, b);
    std::vector<double> a2 = a;
    for (auto& v : a2) v = 3.5 * v + 11.0;
    CHECK(*pearson(a2, b) == doctest::Approx(base).epsilon(1e-12));

    // rmse nonnegative, zero iff equal
    CHECK(rmse(a, b) > 0.0);
}

TEST_CASE("calibrate_threshold examples") {
    // any threshold in (.2,.6) separates; the midpoint candidate is .4
    auto cal = calibrate_threshold(std::vector<double>{0.1, 0.2, 0.6, 0.9},
                                   std::vector<int>{0, 0, 1, 1});
    CHECK(cal.threshold == doctest::Approx(0.4));
    CHECK_FALSE(cal.degenerate);

    auto c = confusion_at(std::vector<double>{0.1, 0.2, 0.6, 0.9}, std::vector<int>{0, 0, 1, 1},
                          cal.threshold);
    CHECK(*precision(c) == 1.0);
    CHECK(*recall(c) == 1.0);

    // degenerate validation falls back to 0.5 with a warning flag
    auto degenerate = calibrate_threshold(std::vector<double>{0.3, 0.7}, std::vector<int>{1, 1});
    CHECK(degenerate.threshold == 0.5);
    CHECK(degenerate.degenerate);
}

TEST_CASE("calibrate_threshold reproduces the exhaustive sweep oracle exactly") {
    Rng rng(21);
    for (int rep = 0; rep < 300; ++rep) {
        auto rs = random_scored(rng, 3 + int(rng.below(40)));
        int pos = 0;
        for (int y : rs.labels) pos += y;
        if (pos == 0 || pos == int(rs.labels.size())) continue;
        auto cal = calibrate_threshold(rs.scores, rs.labels);
        double sweep = oracles::sweep_threshold(rs.scores, rs.labels);
        CHECK(cal.threshold == sweep);
    }
}

TEST_CASE("confound_aware_auc signatures") {
    // identical positive rates across groups -> 0.5
    std::vector<int> groups{0, 0, 1, 1, 0, 0, 1, 1};
    std::vector<int> labels{1, 0, 1, 0, 0, 1, 0, 1};
    CHECK(*confound_aware_auc(groups, labels) == doctest::Approx(0.5));

    // perfectly confounded -> 1.0
    std::vector<int> g2{0, 0, 0, 1, 1, 1};
    std::vector<int> l2{1, 1, 1, 0, 0, 0};
    CHECK(*confound_aware_auc(g2, l2) == doctest::Approx(1.0));

    // single group -> undefined
    CHECK_FALSE(confound_aware_auc(std::vector<int>{0, 0}, std::vector<int>{0, 1}).has_value());
}

TEST_CASE("aggregate") {
    auto a = aggregate({1.0, 2.0, 3.0});
    CHECK(a.mean == doctest::Approx(2.0));
    CHECK(a.stddev == doctest::Approx(1.0));
    CHECK(a.n == 3);
    CHECK(a.ci95_half == doctest::Approx(1.96 / std::sqrt(3.0)));
    CHECK(aggregate({}).n == 0);
    CHECK(aggregate({5.0}).stddev == 0.0);
}

}  // TEST_SUITE
