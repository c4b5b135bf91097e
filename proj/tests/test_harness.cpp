#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "fatbench/harness.hpp"
#include "fatbench/synthgen.hpp"

using namespace fatbench;
using harness::Family;
using harness::Task;

namespace {

synthgen::CohortSpec small_cohort_spec(uint64_t seed = 606, int n = 120) {
    synthgen::CohortSpec spec;
    spec.n_speakers = n;
    spec.avg_samples = 7.0;
    spec.embedding_dim = 8;
    spec.fatigue_direction_count = 4;
    spec.seed = seed;
    return spec;
}

harness::RunConfig fast_run_config(Task task) {
    harness::RunConfig cfg;
    cfg.task = task;
    cfg.models = {Family::CS, Family::ME, Family::Dist, Family::Proto, Family::Tr};
    if (task == Task::Regression)
        cfg.models = {Family::CS, Family::ME, Family::Dist, Family::Tr};
    cfg.n_folds = 2;
    cfg.n_orderings = 2;
    cfg.bucket_max = 8;
    cfg.proto.episodes = 250;
    cfg.proto.eval_every = 125;
    cfg.proto.val_episodes = 30;
    cfg.tr.n_layers = 2;
    cfg.tr.n_heads = 2;
    cfg.tr.model_dim = 16;
    cfg.tr.max_seq_tokens = 48;
    cfg.tr.steps = 120;
    cfg.tr.eval_every = 60;
    cfg.jobs = 2;
    return cfg;
}

const core::Dataset& shared_dataset() {
    static const core::Dataset ds = synthgen::generate_cohort(small_cohort_spec());
    return ds;
}

const harness::ProtocolResult& shared_clf_result() {
    static const harness::ProtocolResult r =
        harness::run_protocol(shared_dataset(), fast_run_config(Task::Classification));
    return r;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("run config validation") {
    harness::RunConfig cfg;
    cfg.task = Task::Regression;  // default models include proto
    CHECK_THROWS_AS(harness::validate_run_config(cfg), ContractError);
    cfg.models = {Family::CS};
    CHECK_NOTHROW(harness::validate_run_config(cfg));
}

TEST_CASE("protocol emits a complete accounting of every query point") {
    const auto& r = shared_clf_result();
    const auto& ds = shared_dataset();
    REQUIRE(r.iterations.size() == 4);
    for (const auto& it : r.iterations) {
        REQUIRE_FALSE(it.failed);
        const auto& fold = r.plan.folds[size_t(it.fold)];
        size_t total_queries = 0;
        for (int si : fold.test) total_queries += ds.speakers[size_t(si)].observations.size();
        std::map<Family, size_t> rows_per_model;
        for (const auto& row : it.rows) ++rows_per_model[row.model];
        for (Family fam : r.config.models) CHECK(rows_per_model[fam] == total_queries);
    }
}

TEST_CASE("model-specific skip rules") {
    const auto& r = shared_clf_result();
    for (const auto& it : r.iterations) {
        for (const auto& row : it.rows) {
            if (row.model == Family::CS || row.model == Family::Tr)
                CHECK_FALSE(row.skipped);  // full coverage incl. cold start
            if (row.model == Family::ME && row.t < 2) CHECK(row.skipped);
            if (row.model == Family::Dist) CHECK_FALSE(row.skipped);
            if (row.model == Family::Proto && row.t < 2) CHECK(row.skipped);
        }
    }
}

TEST_CASE("per-iteration thresholds are calibrated for every classification model") {
    const auto& r = shared_clf_result();
    for (const auto& it : r.iterations) {
        for (Family fam : r.config.models) {
            REQUIRE(it.thresholds.count(fam) == 1);
            CHECK(std::isfinite(it.thresholds.at(fam)));
        }
    }
}

TEST_CASE("metric rows cover buckets, summary and coverage") {
    const auto& r = shared_clf_result();
    std::set<std::string> buckets, metrics_seen;
    for (const auto& m : r.metrics) {
        buckets.insert(m.support_size);
        metrics_seen.insert(m.metric);
        CHECK(m.task == "classification");
    }
    for (const char* b : {"0", "1", "7", "8+", "t67", "all"}) CHECK(buckets.count(b) == 1);
    for (const char* mt : {"auc", "bacc", "prec", "rec", "coverage", "n_points"})
        CHECK(metrics_seen.count(mt) == 1);

    // coverage at t=0: CS=1, ME=0
    for (const auto& m : r.metrics) {
        if (m.metric != "coverage" || m.support_size != "0") continue;
        if (m.model == "cs") CHECK(m.mean == doctest::Approx(1.0));
        if (m.model == "me") CHECK(m.mean == doctest::Approx(0.0));
    }
}

TEST_CASE("protocol runs are reproducible") {
    const auto& ds = shared_dataset();
    auto cfg = fast_run_config(Task::Classification);
    cfg.models = {Family::CS, Family::Dist};  // keep the rerun cheap
    auto r1 = harness::run_protocol(ds, cfg);
    auto r2 = harness::run_protocol(ds, cfg);
    REQUIRE(r1.metrics.size() == r2.metrics.size());
    for (size_t i = 0; i < r1.metrics.size(); ++i) {
        CHECK(r1.metrics[i].mean == r2.metrics[i].mean);
        CHECK(r1.metrics[i].stddev == r2.metrics[i].stddev);
    }
    REQUIRE(r1.iterations.size() == r2.iterations.size());
    for (size_t i = 0; i < r1.iterations.size(); ++i) {
        REQUIRE(r1.iterations[i].rows.size() == r2.iterations[i].rows.size());
        for (size_t j = 0; j < r1.iterations[i].rows.size(); ++j)
            CHECK(r1.iterations[i].rows[j].score == r2.iterations[i].rows[j].score);
    }
}

TEST_CASE("training never reads test speakers: scrambling their targets changes nothing") {
    const auto& ds = shared_dataset();
    auto cfg = fast_run_config(Task::Classification);
    auto plan = core::make_eval_plan(ds, cfg.n_folds, cfg.n_orderings, cfg.plan_seed);
    const auto& fold = plan.folds[0];

    core::Dataset scrambled = ds;
    Rng rng(888);
    for (int si : fold.test)
        for (auto& o : scrambled.speakers[size_t(si)].observations)
            o.target = core::Target::from_hours(rng.uniform(0.0, 24.0));

    auto fm1 = harness::train_fold_models(ds, fold, cfg, 0);
    auto fm2 = harness::train_fold_models(scrambled, fold, cfg, 0);
    CHECK(fm1.cs_reg->weights == fm2.cs_reg->weights);
    CHECK(fm1.cs_clf->weights == fm2.cs_clf->weights);
    CHECK(fm1.dist->f_d.weights == fm2.dist->f_d.weights);

    auto im1 = harness::train_iteration_models(ds, fold, plan, cfg, fm1, 0, 0);
    auto im2 = harness::train_iteration_models(scrambled, fold, plan, cfg, fm2, 0, 0);
    for (size_t p = 0; p < im1.proto->params.size(); ++p)
        CHECK(im1.proto->params[p].v == im2.proto->params[p].v);
    for (size_t p = 0; p < im1.tr->params.size(); ++p)
        CHECK(im1.tr->params[p].v == im2.tr->params[p].v);
}

TEST_CASE("batched transformer prefix scores match per-query predictions") {
    const auto& ds = shared_dataset();
    auto cfg = fast_run_config(Task::Regression);
    cfg.models = {Family::Tr};
    auto plan = core::make_eval_plan(ds, cfg.n_folds, cfg.n_orderings, cfg.plan_seed);
    harness::FoldModels fm;
    auto im = harness::train_iteration_models(ds, plan.folds[0], plan, cfg, fm, 0, 0);

    const core::SpeakerSequence* spk = nullptr;
    for (int si : plan.folds[0].test) {
        if (ds.speakers[size_t(si)].length() >= 4) {
            spk = &ds.speakers[size_t(si)];
            break;
        }
    }
    REQUIRE(spk != nullptr);
    auto ordering = plan.ordering_for(*spk, 0);
    Rng batch_rng(4242);
    auto batched = harness::tr_prefix_scores(*im.tr, *spk, ordering, batch_rng);

    // the full-length prefix consumes the same augmentation stream
    const int last = spk->length() - 1;
    auto [sup, query] = core::support_set_at(*spk, ordering, last);
    Rng single_rng(4242);
    double single = im.tr->predict_score(sup, query->embedding, single_rng);
    CHECK(std::abs(batched[size_t(last)] - single) <= 1e-9);
}

TEST_CASE("failed iterations are reported, not thrown") {
    // Proto requires speakers with >= 4 observations and both classes; a
    // cohort of two-observation speakers breaks its training.
    synthgen::CohortSpec spec = small_cohort_spec(607, 40);
    spec.avg_samples = 1.0;  // nearly all speakers get 1-2 observations
    auto ds = synthgen::generate_cohort(spec);
    auto cfg = fast_run_config(Task::Classification);
    cfg.models = {Family::Proto};
    cfg.n_folds = 1;
    cfg.n_orderings = 1;
    auto r = harness::run_protocol(ds, cfg);
    REQUIRE(r.iterations.size() == 1);
    CHECK(r.iterations[0].failed);
    CHECK_FALSE(r.iterations[0].error.empty());
}

TEST_CASE("regime sequences") {
    const auto& ds = shared_dataset();
    Rng rng(11);
    int checked = 0;
    for (const auto& spk : ds.speakers) {
        auto periodic = harness::regime_sequence(spk, harness::Regime::Periodic, 8, rng);
        for (size_t i = 1; i < periodic.size(); ++i)
            CHECK(periodic[i]->target.label != periodic[i - 1]->target.label);

        auto balanced = harness::regime_sequence(spk, harness::Regime::Balanced, 8, rng);
        if (!balanced.empty()) {
            CHECK(balanced.size() == 8);
            int pos = 0;
            for (const auto* o : balanced) pos += o->target.label;
            CHECK(pos == 4);
        }

        auto random = harness::regime_sequence(spk, harness::Regime::Random, 8, rng);
        if (spk.length() >= 2) {
            CHECK(random.size() == size_t(spk.length()));
            std::set<const core::Observation*> uniq(random.begin(), random.end());
            CHECK(uniq.size() == random.size());
        }
        if (++checked > 40) break;
    }
}

TEST_CASE("no-signal cohort: every model sits at chance") {
    // 0.5 +- 0.05 needs enough test points; at this size the band is ~3 sigma
    synthgen::CohortSpec spec = small_cohort_spec(608, 300);
    spec.fatigue_signal_scale = 0.0;  // embeddings carry no target information
    auto ds = synthgen::generate_cohort(spec);
    auto cfg = fast_run_config(Task::Classification);
    cfg.n_folds = 2;
    cfg.n_orderings = 2;
    auto r = harness::run_protocol(ds, cfg);
    for (const auto& m : r.metrics) {
        if (m.metric != "auc" || m.support_size != "all" || m.n == 0) continue;
        MESSAGE(m.model, " auc on null-signal cohort = ", m.mean);
        CHECK(std::abs(m.mean - 0.5) <= 0.05);
    }
}

TEST_CASE("fairness report structure and confound audit") {
    const auto& r = shared_clf_result();
    const auto& ds = shared_dataset();
    harness::FairnessConfig fc;
    fc.min_group_points = 40;
    auto report = harness::fairness_report(r, ds, fc);
    REQUIRE(report.models.size() == r.config.models.size());
    for (const auto& block : report.models) {
        std::set<std::string> fields;
        for (const auto& g : block.groups) fields.insert(g.field);
        CHECK(fields == std::set<std::string>{"sex", "age_group", "language"});
    }
    REQUIRE(report.confound_auc.size() == 3);
    for (const auto& [field, aucv] : report.confound_auc) {
        MESSAGE("confound ", field, " = ", aucv);
        CHECK(std::abs(aucv - 0.5) <= 0.05);
    }
}

TEST_CASE("report writers produce parseable files") {
    const auto& r = shared_clf_result();
    const auto& ds = shared_dataset();
    auto dir = std::filesystem::temp_directory_path() / "fatbench_harness_io";
    std::filesystem::create_directories(dir);
    harness::write_metrics_csv(r, dir / "metrics.csv");
    harness::write_predictions_csv(r, ds, dir / "predictions.csv");
    harness::write_summary_text(r, dir / "summary.txt");
    harness::write_curve_csv(r, dir / "curve.csv");
    auto report = harness::fairness_report(r, ds);
    harness::write_fairness_csv(report, dir / "fairness.csv");
    harness::write_fairness_text(report, dir / "fairness.txt");
    for (const char* f : {"metrics.csv", "predictions.csv", "summary.txt", "curve.csv",
                          "fairness.csv", "fairness.txt"}) {
        std::ifstream in(dir / f);
        REQUIRE(in.good());
        std::string first;
        std::getline(in, first);
        CHECK_FALSE(first.empty());
    }
}

TEST_CASE("parallel_for covers every job exactly once") {
    std::vector<int> hits(97, 0);
    harness::parallel_for(97, 3, [&](int i) { hits[size_t(i)] += 1; });
    for (int h : hits) CHECK(h == 1);
}

}  // TEST_SUITE
