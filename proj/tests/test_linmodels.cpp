#include <doctest.h>

#include <cmath>

#include "fatbench/linmodels.hpp"
#include "fatbench/metrics.hpp"
#include "fatbench/synthgen.hpp"
#include "oracles.hpp"

using namespace fatbench;
using nk::Tensor;

namespace {

core::Observation make_obs(const std::string& spk, int idx, std::vector<double> emb, double hours) {
    core::Observation o;
    o.speaker_id = spk;
    o.seq_index = idx;
    o.embedding = std::move(emb);
    o.target = core::Target::from_hours(hours);
    return o;
}

}  // namespace

TEST_SUITE("linmodels") {

TEST_CASE("ridge recovers a noiseless linear map as alpha -> 0") {
    Tensor X(6, 1);
    std::vector<double> y;
    for (int i = 0; i < 6; ++i) {
        X.at(i, 0) = double(i) - 2.0;
        y.push_back(2.0 * X.at(i, 0));
    }
    auto m = linmod::ridge_fit(X, y, 1e-8, true);
    CHECK(std::abs(m.weights[0] - 2.0) <= 1e-6);
    CHECK(std::abs(m.intercept) <= 1e-6);
}

TEST_CASE("ridge matches a converged gradient-descent oracle") {
    Rng rng(41);
    Tensor X(5, 3);
    std::vector<double> y;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 3; ++j) X.at(i, j) = rng.normal();
        y.push_back(rng.normal(0.0, 2.0));
    }
    for (bool with_intercept : {true, false}) {
        auto closed = linmod::ridge_fit(X, y, 1.0, with_intercept);
        auto oracle = oracles::ridge_gd_oracle(X, y, 1.0, with_intercept);
        double obj_closed = oracles::ridge_objective(X, y, 1.0, closed.weights, closed.intercept);
        double obj_oracle = oracles::ridge_objective(X, y, 1.0, oracle.w, oracle.b);
        CHECK(obj_closed <= obj_oracle + 1e-6);
    }
}

TEST_CASE("ridge penalty limit: weights vanish, prediction becomes the mean") {
    Rng rng(42);
    Tensor X(20, 4);
    std::vector<double> y;
    double ymean = 0.0;
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 4; ++j) X.at(i, j) = rng.normal();
        y.push_back(rng.uniform(0.0, 24.0));
        ymean += y.back();
    }
    ymean /= 20.0;
    auto m = linmod::ridge_fit(X, y, 1e12, true);
    for (double w : m.weights) CHECK(std::abs(w) <= 1e-6);
    std::vector<double> q{1.0, -2.0, 0.5, 3.0};
    CHECK(m.predict(q) == doctest::Approx(ymean).epsilon(1e-6));
}

TEST_CASE("ridge fit is invariant to training-row permutation") {
    Rng rng(43);
    Tensor X(12, 3);
    std::vector<double> y;
    for (int i = 0; i < 12; ++i) {
        for (int j = 0; j < 3; ++j) X.at(i, j) = rng.normal();
        y.push_back(rng.normal(8.0, 4.0));
    }
    auto m1 = linmod::ridge_fit(X, y, 5.0, true);
    auto perm = rng.permutation(12);
    Tensor X2(12, 3);
    std::vector<double> y2(12);
    for (int i = 0; i < 12; ++i) {
        for (int j = 0; j < 3; ++j) X2.at(i, j) = X.at(perm[size_t(i)], j);
        y2[size_t(i)] = y[size_t(perm[size_t(i)])];
    }
    auto m2 = linmod::ridge_fit(X2, y2, 5.0, true);
    for (size_t j = 0; j < 3; ++j) CHECK(m1.weights[j] == doctest::Approx(m2.weights[j]).epsilon(1e-9));
    CHECK(m1.intercept == doctest::Approx(m2.intercept).epsilon(1e-9));
}

TEST_CASE("ridge contract errors") {
    Tensor empty(0, 3);
    CHECK_THROWS_AS((void)linmod::ridge_fit(empty, {}, 1.0, true), ContractError);
    Tensor X(2, 1);
    CHECK_THROWS_AS((void)linmod::ridge_fit(X, {1.0, 2.0}, 0.0, true), ContractError);
}

TEST_CASE("tune_cs_regression evaluates the full grid and picks by validation rmse") {
    synthgen::CohortSpec spec;
    spec.n_speakers = 60;
    spec.embedding_dim = 8;
    spec.seed = 51;
    auto ds = synthgen::generate_cohort(spec);
    linmod::ObsList train, val;
    for (size_t s = 0; s < ds.speakers.size(); ++s)
        for (const auto& o : ds.speakers[s].observations) (s < 45 ? train : val).push_back(&o);

    linmod::reset_ridge_fit_count();
    auto model = linmod::tune_cs_regression(train, val, 8);
    CHECK(linmod::ridge_fit_count() == linmod::ridge_alpha_grid().size());

    // selection agrees with an exhaustive re-evaluation of the same grid
    double best_rmse = 1e300;
    double best_alpha = 0.0;
    for (double alpha : linmod::ridge_alpha_grid()) {
        nk::Tensor X = linmod::design_matrix(train, 8);
        std::vector<double> y;
        for (const auto* o : train) y.push_back(o->target.hours);
        auto m = linmod::ridge_fit(X, y, alpha, true);
        std::vector<double> pred, truth;
        for (const auto* o : val) {
            pred.push_back(m.predict(o->embedding));
            truth.push_back(o->target.hours);
        }
        double r = metrics::rmse(pred, truth);
        if (r < best_rmse) {
            best_rmse = r;
            best_alpha = alpha;
        }
    }
    CHECK(model.alpha == best_alpha);
}

TEST_CASE("tune_cs_regression prefers heavy shrinkage on a high-noise cohort") {
    synthgen::CohortSpec spec;
    spec.n_speakers = 60;
    spec.avg_samples = 5.0;
    spec.embedding_dim = 24;
    spec.fatigue_signal_scale = 0.3;
    spec.speaker_offset_scale = 4.0;
    spec.noise_scale = 6.0;
    spec.seed = 52;
    auto ds = synthgen::generate_cohort(spec);
    linmod::ObsList train, val;
    for (size_t s = 0; s < ds.speakers.size(); ++s)
        for (const auto& o : ds.speakers[s].observations) (s < 40 ? train : val).push_back(&o);
    auto model = linmod::tune_cs_regression(train, val, 24);
    CHECK(model.alpha >= 100.0);
}

TEST_CASE("tuning rejects empty pools") {
    synthgen::CohortSpec spec;
    spec.n_speakers = 10;
    spec.embedding_dim = 4;
    spec.fatigue_direction_count = 2;
    auto ds = synthgen::generate_cohort(spec);
    linmod::ObsList pool;
    for (const auto& s : ds.speakers)
        for (const auto& o : s.observations) pool.push_back(&o);
    CHECK_THROWS_AS((void)linmod::tune_cs_regression(pool, {}, 4), ContractError);
    CHECK_THROWS_AS((void)linmod::tune_cs_regression({}, pool, 4), ContractError);
    CHECK_THROWS_AS((void)linmod::tune_cs_classifier(pool, {}, 4), ContractError);
}

TEST_CASE("hyperparameter grids carry exactly the five published candidates") {
    CHECK(linmod::ridge_alpha_grid() == std::vector<double>{0.1, 1.0, 10.0, 100.0, 1000.0});
    CHECK(linmod::logistic_c_grid() == std::vector<double>{0.001, 0.01, 0.1, 1.0, 10.0});
}

TEST_CASE("logistic: separable two-point set reaches val AUC 1 with large C") {
    auto a = make_obs("a", 0, {-1.0, 0.0}, 2.0);
    auto b = make_obs("b", 0, {1.0, 0.0}, 20.0);
    linmod::ObsList pts{&a, &b};
    auto model = linmod::tune_cs_classifier(pts, pts, 2);
    std::vector<double> scores{model.score(a.embedding), model.score(b.embedding)};
    std::vector<int> labels{0, 1};
    CHECK(*metrics::auc(scores, labels) == 1.0);
}

TEST_CASE("logistic fit approaches the oracle optimum") {
    Rng rng(61);
    Tensor X(40, 3);
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        for (int j = 0; j < 3; ++j) X.at(i, j) = rng.normal();
        double z = 0.8 * X.at(i, 0) - 0.5 * X.at(i, 1) + 0.3;
        labels.push_back(rng.uniform01() < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0);
    }
    for (double c : {0.01, 1.0}) {
        auto fit = linmod::logistic_fit(X, labels, c);
        // longer budget and tighter tolerance from a different start
        linmod::LogisticFitOptions long_opts{20000, 1e-12};
        auto oracle = linmod::logistic_fit(X, labels, c, long_opts);
        double lf = linmod::logistic_loss(X, labels, c, fit.weights, fit.intercept);
        double lo = linmod::logistic_loss(X, labels, c, oracle.weights, oracle.intercept);
        CHECK(lf <= lo + 1e-6);
    }
}

TEST_CASE("logistic rejects single-class labels") {
    Tensor X(3, 2);
    CHECK_THROWS_AS((void)linmod::logistic_fit(X, {1, 1, 1}, 1.0), ContractError);
}

TEST_CASE("me_predict: degenerate identical-embedding history fits the intercept only") {
    auto a = make_obs("s", 0, {1.0, 1.0}, 4.0);
    auto b = make_obs("s", 1, {1.0, 1.0}, 6.0);
    core::SupportSet hist;
    hist.items = {&a, &b};
    for (auto q : {std::vector<double>{0.0, 0.0}, std::vector<double>{5.0, -3.0}}) {
        auto pred = linmod::me_predict_hours(hist, q);
        REQUIRE(pred.has_value());
        CHECK(*pred == doctest::Approx(5.0).epsilon(1e-9));
    }
}

TEST_CASE("me_predict: noiseless personal model is recovered with enough history") {
    Rng rng(71);
    std::vector<core::Observation> obs;
    std::vector<double> w{1.2, -0.7, 0.4};
    for (int i = 0; i < 8; ++i) {
        std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
        double hours = 8.0 + w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
        obs.push_back(make_obs("s", i, x, std::clamp(hours, 0.0, 24.0)));
    }
    core::SupportSet hist;
    for (const auto& o : obs) hist.items.push_back(&o);
    std::vector<double> q{0.3, 0.2, -0.6};
    double expect = 8.0 + w[0] * q[0] + w[1] * q[1] + w[2] * q[2];
    auto pred = linmod::me_predict_hours(hist, q, 1e-8);
    REQUIRE(pred.has_value());
    CHECK(std::abs(*pred - expect) <= 1e-6);
}

TEST_CASE("me_predict skips short histories and retrains on every call") {
    auto a = make_obs("s", 0, {1.0}, 4.0);
    core::SupportSet one;
    one.items = {&a};
    CHECK_FALSE(linmod::me_predict_hours(one, std::vector<double>{1.0}).has_value());
    CHECK_FALSE(linmod::me_predict_label_score(one, std::vector<double>{1.0}).has_value());

    auto b = make_obs("s", 1, {2.0}, 12.0);
    core::SupportSet hist;
    hist.items = {&a, &b};
    linmod::reset_ridge_fit_count();
    for (int call = 1; call <= 5; ++call) {
        (void)linmod::me_predict_hours(hist, std::vector<double>{1.5});
        CHECK(linmod::ridge_fit_count() == uint64_t(call));
    }
}

TEST_CASE("me classifier variant scores from the label-target ridge") {
    auto a = make_obs("s", 0, {0.0}, 2.0);   // label 0
    auto b = make_obs("s", 1, {1.0}, 15.0);  // label 1
    core::SupportSet hist;
    hist.items = {&a, &b};
    auto lo = linmod::me_predict_label_score(hist, std::vector<double>{0.0});
    auto hi = linmod::me_predict_label_score(hist, std::vector<double>{1.0});
    REQUIRE(lo.has_value());
    REQUIRE(hi.has_value());
    CHECK(*hi > *lo);
}

}  // TEST_SUITE
