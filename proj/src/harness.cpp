#include "fatbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

namespace fatbench::harness {

const char* to_string(Task t) { return t == Task::Regression ? "regression" : "classification"; }

const char* to_string(Family f) {
    switch (f) {
        case Family::CS: return "cs";
        case Family::ME: return "me";
        case Family::Dist: return "dist";
        case Family::Proto: return "proto";
        case Family::Tr: return "tr";
    }
    return "?";
}

std::optional<Task> parse_task(const std::string& s) {
    if (s == "regression") return Task::Regression;
    if (s == "classification") return Task::Classification;
    return std::nullopt;
}

std::optional<Family> parse_family(const std::string& s) {
    if (s == "cs") return Family::CS;
    if (s == "me") return Family::ME;
    if (s == "dist") return Family::Dist;
    if (s == "proto") return Family::Proto;
    if (s == "tr") return Family::Tr;
    return std::nullopt;
}

bool RunConfig::has(Family f) const {
    return std::find(models.begin(), models.end(), f) != models.end();
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.task == Task::Regression && cfg.has(Family::Proto))
        throw ContractError("proto is classification-only and cannot run the regression task");
    if (cfg.models.empty()) throw ContractError("RunConfig: no models selected");
    if (cfg.n_folds < 1 || cfg.n_orderings < 1) throw ContractError("RunConfig: bad plan sizes");
    if (cfg.bucket_max < 1) throw ContractError("RunConfig: bucket_max < 1");
}

void parallel_for(int n_jobs, int n_workers, const std::function<void(int)>& fn) {
    if (n_jobs <= 0) return;
    int hw = int(std::thread::hardware_concurrency());
    if (n_workers <= 0) n_workers = hw > 0 ? hw : 1;
    n_workers = std::min(n_workers, n_jobs);
    if (n_workers <= 1) {
        for (int i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(size_t(n_workers));
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n_jobs) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

namespace {

linmod::ObsList pool_of(const core::Dataset& ds, const std::vector<int>& speaker_idxs) {
    linmod::ObsList out;
    for (int si : speaker_idxs)
        for (const auto& o : ds.speakers[size_t(si)].observations) out.push_back(&o);
    return out;
}

std::vector<const core::SpeakerSequence*> seqs_of(const core::Dataset& ds,
                                                  const std::vector<int>& speaker_idxs) {
    std::vector<const core::SpeakerSequence*> out;
    for (int si : speaker_idxs) out.push_back(&ds.speakers[size_t(si)]);
    return out;
}

}  // namespace

FoldModels train_fold_models(const core::Dataset& ds, const core::Fold& fold,
                             const RunConfig& cfg, int fold_idx) {
    FoldModels fm;
    auto train_pool = pool_of(ds, fold.train);
    auto val_pool = pool_of(ds, fold.val);

    // The distance model falls back to the cross-sectional hours model, so
    // CS regression is needed whenever CS or Dist runs.
    if (cfg.has(Family::CS) || cfg.has(Family::Dist))
        fm.cs_reg = linmod::tune_cs_regression(train_pool, val_pool, ds.embedding_dim);
    if (cfg.has(Family::CS) && cfg.task == Task::Classification)
        fm.cs_clf = linmod::tune_cs_classifier(train_pool, val_pool, ds.embedding_dim);
    if (cfg.has(Family::Dist)) {
        uint64_t seed = seed_of({cfg.train_seed, 0xd157, uint64_t(fold_idx)});
        fm.dist = distmod::train_distance_model(seqs_of(ds, fold.train), *fm.cs_reg,
                                                cfg.dist_pair_cap, seed);
    }
    return fm;
}

IterationModels train_iteration_models(const core::Dataset& ds, const core::Fold& fold,
                                       const core::EvalPlan& plan, const RunConfig& cfg,
                                       const FoldModels& shared, int fold_idx,
                                       int ordering_idx) {
    IterationModels im;
    im.shared = &shared;
    if (cfg.has(Family::Proto)) {
        protonet::ProtoConfig pc = cfg.proto;
        pc.in_dim = ds.embedding_dim;
        pc.seed = seed_of({cfg.train_seed, 0x9907, uint64_t(fold_idx), uint64_t(ordering_idx)});
        im.proto = protonet::train_episodic(seqs_of(ds, fold.train), seqs_of(ds, fold.val), pc);
    }
    if (cfg.has(Family::Tr)) {
        ictr::TransformerConfig tc = cfg.tr;
        tc.embedding_dim = ds.embedding_dim;
        tc.seed = seed_of({cfg.train_seed, 0x7307, uint64_t(fold_idx), uint64_t(ordering_idx)});
        tc.label_targets = cfg.task == Task::Classification;
        auto views = [&](const std::vector<int>& idxs) {
            std::vector<ictr::SeqView> v;
            for (int si : idxs) {
                const auto& spk = ds.speakers[size_t(si)];
                v.push_back({&spk, plan.ordering_for(spk, ordering_idx)});
            }
            return v;
        };
        im.tr = ictr::train(views(fold.train), views(fold.val), tc);
    }
    return im;
}

std::vector<double> tr_prefix_scores(const ictr::TransformerModel& model,
                                     const core::SpeakerSequence& seq,
                                     const std::vector<int>& ordering, Rng& rng) {
    const int n = seq.length();
    const int d = model.cfg.embedding_dim;
    std::vector<double> scores(static_cast<size_t>(n));
    if (2 * n - 1 <= model.cfg.max_seq_tokens) {
        // One causal forward serves every prefix: the output at x-token
        // position 2t only sees tokens 0..2t.
        ictr::TokenSequence ts;
        ts.tokens = nk::Tensor(2 * n - 1, d);
        for (int j = 0; j < n; ++j) {
            const auto& e = seq.observations[size_t(ordering[size_t(j)])].embedding;
            std::copy(e.begin(), e.end(), ts.tokens.row(2 * j));
            if (j < n - 1) {
                const auto& target = seq.observations[size_t(ordering[size_t(j)])].target;
                double y = model.cfg.label_targets ? double(target.label) : target.hours;
                auto aug = ictr::augment_target(y, d, model.cfg.aug_noise_std, rng);
                std::copy(aug.begin(), aug.end(), ts.tokens.row(2 * j + 1));
            }
        }
        ts.positions.resize(size_t(2 * n - 1));
        for (int i = 0; i < 2 * n - 1; ++i) ts.positions[size_t(i)] = i;
        nk::Tensor out = model.forward(ts);
        for (int t = 0; t < n; ++t) {
            const double* row = out.row(2 * t);
            double acc = 0.0;
            for (int j = 0; j < out.cols; ++j) acc += row[j];
            scores[size_t(t)] = acc / double(out.cols);
        }
    } else {
        for (int t = 0; t < n; ++t) {
            auto [sup, query] = core::support_set_at(seq, ordering, t);
            scores[size_t(t)] = model.predict_score(sup, query->embedding, rng);
        }
    }
    return scores;
}

namespace {

struct ScorePool {
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<double> hours;
};

// Scores one speaker's full prefix ladder for one model family. Each entry is
// nullopt when the model skips that support size.
std::vector<std::optional<double>> family_scores(Family fam, Task task, const core::Dataset& ds,
                                                 const core::SpeakerSequence& seq,
                                                 const std::vector<int>& ordering,
                                                 const IterationModels& im, const RunConfig& cfg,
                                                 uint64_t infer_seed) {
    const int n = seq.length();
    std::vector<std::optional<double>> out(static_cast<size_t>(n));
    (void)ds;
    switch (fam) {
        case Family::CS: {
            for (int t = 0; t < n; ++t) {
                const auto& q = seq.observations[size_t(ordering[size_t(t)])];
                out[size_t(t)] = task == Task::Classification
                                     ? im.shared->cs_clf->score(q.embedding)
                                     : im.shared->cs_reg->predict(q.embedding);
            }
            break;
        }
        case Family::ME: {
            for (int t = 0; t < n; ++t) {
                auto [sup, query] = core::support_set_at(seq, ordering, t);
                out[size_t(t)] = task == Task::Classification
                                     ? linmod::me_predict_label_score(sup, query->embedding,
                                                                      cfg.me_alpha)
                                     : linmod::me_predict_hours(sup, query->embedding,
                                                                cfg.me_alpha);
            }
            break;
        }
        case Family::Dist: {
            for (int t = 0; t < n; ++t) {
                auto [sup, query] = core::support_set_at(seq, ordering, t);
                out[size_t(t)] = im.shared->dist->predict(sup, query->embedding);
            }
            break;
        }
        case Family::Proto: {
            for (int t = 0; t < n; ++t) {
                auto [sup, query] = core::support_set_at(seq, ordering, t);
                out[size_t(t)] = protonet::predict(*im.proto, sup, query->embedding);
            }
            break;
        }
        case Family::Tr: {
            Rng rng(infer_seed);
            auto scores = tr_prefix_scores(*im.tr, seq, ordering, rng);
            for (int t = 0; t < n; ++t) {
                double s = scores[size_t(t)];
                out[size_t(t)] = task == Task::Regression ? std::clamp(s, 0.0, 24.0) : s;
            }
            break;
        }
    }
    return out;
}

IterationOutput run_iteration(const core::Dataset& ds, const core::EvalPlan& plan,
                              const RunConfig& cfg, const FoldModels& shared, int fold_idx,
                              int ordering_idx) {
    IterationOutput out;
    out.fold = fold_idx;
    out.ordering = ordering_idx;
    const core::Fold& fold = plan.folds[size_t(fold_idx)];
    try {
        IterationModels im =
            train_iteration_models(ds, fold, plan, cfg, shared, fold_idx, ordering_idx);

        // Decision thresholds come from the validation speakers only.
        if (cfg.task == Task::Classification) {
            for (Family fam : cfg.models) {
                ScorePool pool;
                for (int si : fold.val) {
                    const auto& seq = ds.speakers[size_t(si)];
                    auto ordering = plan.ordering_for(seq, ordering_idx);
                    uint64_t iseed = seed_of({cfg.train_seed, 0x1f, uint64_t(fold_idx),
                                              uint64_t(ordering_idx), fnv1a64(seq.speaker_id), 1});
                    auto scores = family_scores(fam, cfg.task, ds, seq, ordering, im, cfg, iseed);
                    for (int t = 0; t < seq.length(); ++t) {
                        if (!scores[size_t(t)]) continue;
                        pool.scores.push_back(*scores[size_t(t)]);
                        pool.labels.push_back(
                            seq.observations[size_t(ordering[size_t(t)])].target.label);
                    }
                }
                out.thresholds[fam] = metrics::calibrate_threshold(pool.scores, pool.labels).threshold;
            }
        }

        for (int si : fold.test) {
            const auto& seq = ds.speakers[size_t(si)];
            auto ordering = plan.ordering_for(seq, ordering_idx);
            for (Family fam : cfg.models) {
                uint64_t iseed = seed_of({cfg.train_seed, 0x1f, uint64_t(fold_idx),
                                          uint64_t(ordering_idx), fnv1a64(seq.speaker_id), 2});
                auto scores = family_scores(fam, cfg.task, ds, seq, ordering, im, cfg, iseed);
                for (int t = 0; t < seq.length(); ++t) {
                    const auto& q = seq.observations[size_t(ordering[size_t(t)])];
                    PredictionRow row;
                    row.fold = fold_idx;
                    row.ordering = ordering_idx;
                    row.model = fam;
                    row.speaker = si;
                    row.t = t;
                    row.hours = q.target.hours;
                    row.label = q.target.label;
                    if (scores[size_t(t)]) {
                        row.score = *scores[size_t(t)];
                    } else {
                        row.skipped = true;
                    }
                    out.rows.push_back(row);
                }
            }
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
        out.rows.clear();
    }
    return out;
}

struct BucketFilter {
    std::string label;
    std::function<bool(int)> contains;
};

std::vector<BucketFilter> bucket_filters(int bucket_max) {
    std::vector<BucketFilter> out;
    for (int b = 0; b < bucket_max; ++b)
        out.push_back({std::to_string(b), [b](int t) { return t == b; }});
    out.push_back({std::to_string(bucket_max) + "+", [bucket_max](int t) { return t >= bucket_max; }});
    out.push_back({"t67", [](int t) { return t == 6 || t == 7; }});
    out.push_back({"all", [](int) { return true; }});
    return out;
}

void aggregate_metrics(ProtocolResult& result) {
    const RunConfig& cfg = result.config;
    auto buckets = bucket_filters(cfg.bucket_max);
    for (Family fam : cfg.models) {
        for (const auto& bucket : buckets) {
            std::map<std::string, std::vector<double>> series;
            for (const auto& it : result.iterations) {
                if (it.failed) continue;
                ScorePool pool;
                long n_skipped = 0;
                for (const auto& row : it.rows) {
                    if (row.model != fam || !bucket.contains(row.t)) continue;
                    if (row.skipped) {
                        ++n_skipped;
                        continue;
                    }
                    pool.scores.push_back(row.score);
                    pool.labels.push_back(row.label);
                    pool.hours.push_back(row.hours);
                }
                long n_total = long(pool.scores.size()) + n_skipped;
                if (n_total == 0) continue;
                series["coverage"].push_back(double(pool.scores.size()) / double(n_total));
                series["n_points"].push_back(double(pool.scores.size()));
                if (pool.scores.empty()) continue;
                if (cfg.task == Task::Classification) {
                    if (auto a = metrics::auc(pool.scores, pool.labels))
                        series["auc"].push_back(*a);
                    double th = it.thresholds.count(fam) ? it.thresholds.at(fam) : 0.5;
                    auto c = metrics::confusion_at(pool.scores, pool.labels, th);
                    if (auto b = metrics::balanced_accuracy(c)) series["bacc"].push_back(*b);
                    if (auto p = metrics::precision(c)) series["prec"].push_back(*p);
                    if (auto r = metrics::recall(c)) series["rec"].push_back(*r);
                } else {
                    if (auto rho = metrics::pearson(pool.scores, pool.hours))
                        series["rho"].push_back(*rho);
                    series["rmse"].push_back(metrics::rmse(pool.scores, pool.hours));
                }
            }
            for (const auto& [metric, values] : series) {
                auto agg = metrics::aggregate(values);
                MetricRow row;
                row.model = to_string(fam);
                row.task = to_string(cfg.task);
                row.support_size = bucket.label;
                row.metric = metric;
                row.group = "all";
                row.mean = agg.mean;
                row.stddev = agg.stddev;
                row.n = agg.n;
                result.metrics.push_back(std::move(row));
            }
        }
    }
}

}  // namespace

ProtocolResult run_protocol(const core::Dataset& ds, const RunConfig& cfg) {
    validate_run_config(cfg);
    ProtocolResult result;
    result.config = cfg;
    result.plan = core::make_eval_plan(ds, cfg.n_folds, cfg.n_orderings, cfg.plan_seed);

    std::vector<FoldModels> fold_models(size_t(cfg.n_folds));
    parallel_for(cfg.n_folds, cfg.jobs, [&](int f) {
        fold_models[size_t(f)] = train_fold_models(ds, result.plan.folds[size_t(f)], cfg, f);
    });

    const int n_iter = cfg.n_folds * cfg.n_orderings;
    result.iterations.resize(size_t(n_iter));
    parallel_for(n_iter, cfg.jobs, [&](int i) {
        int f = i / cfg.n_orderings;
        int o = i % cfg.n_orderings;
        result.iterations[size_t(i)] =
            run_iteration(ds, result.plan, cfg, fold_models[size_t(f)], f, o);
    });

    aggregate_metrics(result);
    return result;
}

// ---- Null-model control ----

const char* to_string(Regime r) {
    switch (r) {
        case Regime::Periodic: return "periodic";
        case Regime::Balanced: return "balanced";
        case Regime::Random: return "random";
    }
    return "?";
}

const NullCell* NullResult::cell(Regime tr, Regime te) const {
    for (const auto& c : cells)
        if (c.train_regime == tr && c.test_regime == te) return &c;
    return nullptr;
}

std::vector<const core::Observation*> regime_sequence(const core::SpeakerSequence& seq,
                                                      Regime regime, int balanced_len, Rng& rng) {
    std::vector<const core::Observation*> pos, neg;
    for (const auto& o : seq.observations) (o.target.label ? pos : neg).push_back(&o);
    std::vector<const core::Observation*> out;
    switch (regime) {
        case Regime::Random: {
            for (const auto& o : seq.observations) out.push_back(&o);
            rng.shuffle(out);
            break;
        }
        case Regime::Periodic: {
            rng.shuffle(pos);
            rng.shuffle(neg);
            int cls = int(rng.below(2));
            size_t ip = 0, in = 0;
            for (;;) {
                if (cls == 1) {
                    if (ip >= pos.size()) break;
                    out.push_back(pos[ip++]);
                } else {
                    if (in >= neg.size()) break;
                    out.push_back(neg[in++]);
                }
                cls = 1 - cls;
            }
            break;
        }
        case Regime::Balanced: {
            int half = balanced_len / 2;
            if (int(pos.size()) < half || int(neg.size()) < half) return {};
            rng.shuffle(pos);
            rng.shuffle(neg);
            out.assign(pos.begin(), pos.begin() + half);
            out.insert(out.end(), neg.begin(), neg.begin() + half);
            rng.shuffle(out);
            break;
        }
    }
    if (out.size() < 2) return {};
    return out;
}

namespace {

core::SpeakerSequence materialize(const std::string& id,
                                  const std::vector<const core::Observation*>& obs) {
    core::SpeakerSequence seq;
    seq.speaker_id = id;
    for (size_t i = 0; i < obs.size(); ++i) {
        core::Observation o = *obs[i];
        o.seq_index = int(i);
        seq.observations.push_back(std::move(o));
    }
    return seq;
}

std::vector<core::SpeakerSequence> regime_speakers(const core::Dataset& ds,
                                                   const std::vector<int>& idxs, Regime regime,
                                                   int balanced_len, uint64_t seed) {
    std::vector<core::SpeakerSequence> out;
    for (int si : idxs) {
        const auto& spk = ds.speakers[size_t(si)];
        Rng rng(seed_of({seed, fnv1a64(spk.speaker_id)}));
        auto obs = regime_sequence(spk, regime, balanced_len, rng);
        if (obs.empty()) continue;
        out.push_back(materialize(spk.speaker_id, obs));
    }
    return out;
}

std::vector<int> identity_ordering(int n) {
    std::vector<int> o(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) o[size_t(i)] = i;
    return o;
}

}  // namespace

NullResult null_model_experiment(const core::Dataset& ds, const NullConfig& cfg) {
    struct Job {
        int rep;
        Regime train_regime;
    };
    std::vector<Job> jobs;
    for (int r = 0; r < cfg.n_reps; ++r)
        for (Regime tr : cfg.train_regimes) jobs.push_back({r, tr});

    // cell AUCs indexed by (train regime, test regime)
    std::map<std::pair<int, int>, std::vector<double>> cell_values;
    std::vector<std::map<int, double>> job_results(jobs.size());  // test regime -> auc

    parallel_for(int(jobs.size()), cfg.jobs, [&](int ji) {
        const Job& job = jobs[size_t(ji)];
        uint64_t rep_seed = seed_of({cfg.seed, 0x4e11, uint64_t(job.rep)});
        auto plan = core::make_eval_plan(ds, 1, 1, rep_seed);
        const core::Fold& fold = plan.folds[0];

        // Null features: every embedding becomes the train-split mean.
        core::Dataset null_ds = ds;
        {
            std::vector<double> mean(size_t(ds.embedding_dim), 0.0);
            size_t count = 0;
            for (int si : fold.train)
                for (const auto& o : ds.speakers[size_t(si)].observations) {
                    for (size_t j = 0; j < mean.size(); ++j) mean[j] += o.embedding[j];
                    ++count;
                }
            for (auto& m : mean) m /= double(count);
            for (auto& spk : null_ds.speakers)
                for (auto& o : spk.observations) o.embedding = mean;
        }

        uint64_t regime_seed =
            seed_of({rep_seed, 0x5e9, uint64_t(int(job.train_regime))});
        auto train_seqs =
            regime_speakers(null_ds, fold.train, job.train_regime, cfg.balanced_len, regime_seed);
        auto val_seqs = regime_speakers(null_ds, fold.val, job.train_regime, cfg.balanced_len,
                                        seed_of({regime_seed, 2}));

        ictr::TransformerConfig tc = cfg.tr;
        tc.embedding_dim = ds.embedding_dim;
        tc.label_targets = true;
        tc.seed = seed_of({rep_seed, 0x77, uint64_t(int(job.train_regime))});
        std::vector<ictr::SeqView> tv, vv;
        for (const auto& s : train_seqs) tv.push_back({&s, identity_ordering(s.length())});
        for (const auto& s : val_seqs) vv.push_back({&s, identity_ordering(s.length())});
        auto model = ictr::train(tv, vv, tc);

        for (Regime te : cfg.test_regimes) {
            uint64_t test_seed = seed_of({rep_seed, 0x7e57, uint64_t(int(te))});
            auto test_seqs =
                regime_speakers(null_ds, fold.test, te, cfg.balanced_len, test_seed);
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& s : test_seqs) {
                Rng rng(seed_of({test_seed, 0x1f, fnv1a64(s.speaker_id)}));
                auto prefix = tr_prefix_scores(model, s, identity_ordering(s.length()), rng);
                // t=0 carries no sequence information under any regime.
                for (int t = 1; t < s.length(); ++t) {
                    scores.push_back(prefix[size_t(t)]);
                    labels.push_back(s.observations[size_t(t)].target.label);
                }
            }
            if (auto a = metrics::auc(scores, labels))
                job_results[size_t(ji)][int(te)] = *a;
        }
    });

    for (size_t ji = 0; ji < jobs.size(); ++ji)
        for (const auto& [te, aucv] : job_results[ji])
            cell_values[{int(jobs[ji].train_regime), te}].push_back(aucv);

    NullResult result;
    for (Regime tr : cfg.train_regimes)
        for (Regime te : cfg.test_regimes) {
            NullCell cell;
            cell.train_regime = tr;
            cell.test_regime = te;
            cell.auc = metrics::aggregate(cell_values[{int(tr), int(te)}]);
            result.cells.push_back(cell);
        }
    return result;
}

// ---- Fairness ----

namespace {

struct FieldDef {
    std::string name;
    int n_groups;
    std::function<int(const core::Demographics&)> of;
    std::function<std::string(int)> label;
};

std::vector<FieldDef> demographic_fields() {
    return {
        {"sex", 3, [](const core::Demographics& d) { return int(d.sex); },
         [](int g) { return std::string(core::to_string(core::Sex(g))); }},
        {"age_group", 2, [](const core::Demographics& d) { return int(d.age_group); },
         [](int g) { return std::string(core::to_string(core::AgeGroup(g))); }},
        {"language", 4, [](const core::Demographics& d) { return int(d.language); },
         [](int g) { return std::string(core::to_string(core::Language(g))); }},
    };
}

}  // namespace

FairnessReport fairness_report(const ProtocolResult& result, const core::Dataset& ds,
                               const FairnessConfig& cfg) {
    FairnessReport report;
    auto fields = demographic_fields();

    for (Family fam : result.config.models) {
        FairnessReport::ModelBlock block;
        block.model = fam;
        for (const auto& field : fields) {
            std::vector<GroupAuc> rows;
            for (int g = 0; g < field.n_groups; ++g) {
                std::vector<double> auc_series;
                std::vector<double> point_counts;
                for (const auto& it : result.iterations) {
                    if (it.failed) continue;
                    std::vector<double> scores;
                    std::vector<int> labels;
                    for (const auto& row : it.rows) {
                        if (row.model != fam || row.skipped || row.t > cfg.max_t) continue;
                        const auto& demo = ds.speakers[size_t(row.speaker)].demographics();
                        if (field.of(demo) != g) continue;
                        scores.push_back(row.score);
                        labels.push_back(row.label);
                    }
                    point_counts.push_back(double(scores.size()));
                    if (auto a = metrics::auc(scores, labels)) auc_series.push_back(*a);
                }
                GroupAuc ga;
                ga.field = field.name;
                ga.group = field.label(g);
                ga.auc = metrics::aggregate(auc_series);
                ga.avg_points = metrics::aggregate(point_counts).mean;
                ga.undefined = auc_series.empty();
                ga.low_n = ga.avg_points < cfg.min_group_points;
                if (ga.avg_points > 0.0) rows.push_back(std::move(ga));  // nonempty groups only
            }
            // Gap over well-populated, defined groups only; tiny groups stay
            // in the table flagged low-n.
            const GroupAuc* lo = nullptr;
            const GroupAuc* hi = nullptr;
            for (const auto& ga : rows) {
                if (ga.low_n || ga.undefined) continue;
                if (!lo || ga.auc.mean < lo->auc.mean) lo = &ga;
                if (!hi || ga.auc.mean > hi->auc.mean) hi = &ga;
            }
            if (lo && hi && lo != hi) {
                block.gap[field.name] = hi->auc.mean - lo->auc.mean;
                block.lowest_group[field.name] = lo->group;
            }
            for (auto& ga : rows) block.groups.push_back(std::move(ga));
        }
        report.models.push_back(std::move(block));
    }

    for (const auto& field : fields) {
        std::vector<int> groups;
        std::vector<int> labels;
        for (const auto& spk : ds.speakers)
            for (const auto& o : spk.observations) {
                groups.push_back(field.of(o.demographics));
                labels.push_back(o.target.label);
            }
        auto a = metrics::confound_aware_auc(groups, labels);
        report.confound_auc.emplace_back(field.name, a.value_or(0.5));
    }
    return report;
}

// ---- Writers ----

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    return out;
}

std::string fmt(double x, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, x);
    return buf;
}

std::string fmt_ms(const double mean, const double stddev, int prec = 3) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.*f[%.*f]", prec, mean, prec, stddev);
    return buf;
}

}  // namespace

void write_metrics_csv(const ProtocolResult& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "model,task,support_size,metric,mean,std,n_iterations,group\n";
    for (const auto& m : r.metrics)
        out << m.model << ',' << m.task << ',' << m.support_size << ',' << m.metric << ','
            << fmt(m.mean) << ',' << fmt(m.stddev) << ',' << m.n << ',' << m.group << '\n';
}

void write_predictions_csv(const ProtocolResult& r, const core::Dataset& ds,
                           const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "fold,ordering,model,speaker_id,t,skipped,score,hours,label,sex,age_group,language\n";
    for (const auto& it : r.iterations) {
        if (it.failed) continue;
        for (const auto& row : it.rows) {
            const auto& spk = ds.speakers[size_t(row.speaker)];
            const auto& demo = spk.demographics();
            out << row.fold << ',' << row.ordering << ',' << to_string(row.model) << ','
                << spk.speaker_id << ',' << row.t << ',' << (row.skipped ? 1 : 0) << ','
                << (row.skipped ? "" : fmt(row.score, 9)) << ',' << fmt(row.hours, 6) << ','
                << row.label << ',' << core::to_string(demo.sex) << ','
                << core::to_string(demo.age_group) << ',' << core::to_string(demo.language)
                << '\n';
        }
    }
}

void write_summary_text(const ProtocolResult& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "Performance on points with 6-7 previous observations, mean[std] across iterations\n";
    out << "task: " << to_string(r.config.task) << "\n\n";
    std::vector<std::string> metric_names =
        r.config.task == Task::Classification
            ? std::vector<std::string>{"auc", "bacc", "rec", "prec", "coverage"}
            : std::vector<std::string>{"rho", "rmse", "coverage"};
    out << "metric      ";
    for (Family fam : r.config.models) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%-14s", to_string(fam));
        out << buf;
    }
    out << '\n';
    for (const auto& metric : metric_names) {
        char name[32];
        std::snprintf(name, sizeof name, "%-12s", metric.c_str());
        out << name;
        for (Family fam : r.config.models) {
            std::string cell = "n/a";
            for (const auto& m : r.metrics)
                if (m.model == to_string(fam) && m.support_size == "t67" && m.metric == metric &&
                    m.n > 0)
                    cell = fmt_ms(m.mean, m.stddev, metric == "rmse" ? 2 : 3);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%-14s", cell.c_str());
            out << buf;
        }
        out << '\n';
    }
}

void write_curve_csv(const ProtocolResult& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "support_size,model,metric,mean,std,ci95,n_iterations\n";
    for (const auto& m : r.metrics) {
        if (m.support_size == "t67" || m.support_size == "all") continue;
        double ci = m.n >= 2 ? 1.96 * m.stddev / std::sqrt(double(m.n)) : 0.0;
        out << m.support_size << ',' << m.model << ',' << m.metric << ',' << fmt(m.mean) << ','
            << fmt(m.stddev) << ',' << fmt(ci) << ',' << m.n << '\n';
    }
}

void write_null_csv(const NullResult& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "train_regime,test_regime,auc_mean,auc_std,n_reps\n";
    for (const auto& c : r.cells)
        out << to_string(c.train_regime) << ',' << to_string(c.test_regime) << ','
            << fmt(c.auc.mean) << ',' << fmt(c.auc.stddev) << ',' << c.auc.n << '\n';
}

void write_null_text(const NullResult& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "Null model average AUC by sequence regime, mean[std]\n\n";
    std::vector<Regime> tests;
    for (const auto& c : r.cells)
        if (std::find(tests.begin(), tests.end(), c.test_regime) == tests.end())
            tests.push_back(c.test_regime);
    out << "trained on  ";
    for (Regime te : tests) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%-15s", to_string(te));
        out << buf;
    }
    out << '\n';
    std::vector<Regime> trains;
    for (const auto& c : r.cells)
        if (std::find(trains.begin(), trains.end(), c.train_regime) == trains.end())
            trains.push_back(c.train_regime);
    for (Regime tr : trains) {
        char name[32];
        std::snprintf(name, sizeof name, "%-12s", to_string(tr));
        out << name;
        for (Regime te : tests) {
            const NullCell* c = r.cell(tr, te);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%-15s",
                          c && c->auc.n > 0 ? fmt_ms(c->auc.mean, c->auc.stddev).c_str() : "n/a");
            out << buf;
        }
        out << '\n';
    }
}

void write_fairness_csv(const FairnessReport& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "model,field,group,auc_mean,auc_std,n_iterations,avg_points,low_n\n";
    for (const auto& block : r.models)
        for (const auto& g : block.groups)
            out << to_string(block.model) << ',' << g.field << ',' << g.group << ','
                << (g.undefined ? "" : fmt(g.auc.mean)) << ','
                << (g.undefined ? "" : fmt(g.auc.stddev)) << ',' << g.auc.n << ','
                << fmt(g.avg_points, 1) << ',' << (g.low_n ? 1 : 0) << '\n';
}

void write_fairness_text(const FairnessReport& r, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "Per-group AUC on points with up to 7 previous observations, mean[std]\n";
    out << "Note: the overall AUC need not lie between group AUCs unless group base\n"
           "rates match (Simpson-style aggregation caveat).\n";
    for (const auto& block : r.models) {
        out << "\nmodel: " << to_string(block.model) << '\n';
        for (const auto& g : block.groups) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "  %-10s %-10s %-14s avg_points=%-8.1f%s%s\n",
                          g.field.c_str(), g.group.c_str(),
                          g.undefined ? "n/a" : fmt_ms(g.auc.mean, g.auc.stddev).c_str(),
                          g.avg_points, g.low_n ? " low-n" : "",
                          g.undefined ? " undefined" : "");
            out << buf;
        }
        for (const auto& [field, gap] : block.gap)
            out << "  gap(" << field << ") = " << fmt(gap, 3) << "  lowest: "
                << block.lowest_group.at(field) << '\n';
    }
    out << "\nConfound audit (AUC of demographics alone vs label; ~0.5 = uninformative)\n";
    for (const auto& [field, aucv] : r.confound_auc)
        out << "  " << field << ": " << fmt(aucv, 3) << '\n';
}

}  // namespace fatbench::harness
