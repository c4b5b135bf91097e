#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fatbench/artifact.hpp"
#include "fatbench/config.hpp"
#include "fatbench/core.hpp"
#include "fatbench/harness.hpp"
#include "fatbench/kernels.hpp"
#include "fatbench/synthgen.hpp"

namespace fs = std::filesystem;
using namespace fatbench;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

fs::path resolve_out(const fs::path& p) {
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("FATBENCH_OUT_ROOT")) return fs::path(root) / p;
    return p;
}

struct GlobalOpts {
    std::string config_path;
    int jobs = -1;          // -1 = not set
    long long seed = -1;    // overrides plan/cohort/train seeds when >= 0
};

config::AppConfig load_config(const GlobalOpts& g) {
    config::AppConfig cfg;
    if (!g.config_path.empty()) {
        fs::path p(g.config_path);
        cfg = config::load_app_config(&p);
    } else {
        cfg = config::load_app_config(nullptr);
    }
    if (g.jobs >= 0) cfg.jobs = g.jobs;
    if (g.seed >= 0) {
        cfg.cohort.seed = uint64_t(g.seed);
        cfg.plan_seed = seed_of({uint64_t(g.seed), 0x91a7});
        cfg.train_seed = seed_of({uint64_t(g.seed), 0x77a1});
        cfg.null_seed = seed_of({uint64_t(g.seed), 0x4011});
    }
    return cfg;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const config::AppConfig& cfg, const std::vector<fs::path>& files) {
    ordered_json m;
    m["tool"] = "fatbench";
    m["version"] = kVersion;
    m["command"] = command;
    m["kernel_backend"] = kern::active_name();
    m["seeds"] = {{"cohort", cfg.cohort.seed},
                  {"plan", cfg.plan_seed},
                  {"train", cfg.train_seed},
                  {"null", cfg.null_seed}};
    std::ostringstream cfg_text;
    config::print_config(cfg, cfg_text);
    m["config"] = cfg_text.str();
    ordered_json fj = ordered_json::object();
    for (const auto& f : files)
        if (fs::exists(f)) fj[f.filename().string()] = artifact::file_digest(f);
    m["files"] = std::move(fj);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    out << m.dump(2) << '\n';
}

int cmd_gen(const GlobalOpts& g, const std::string& spec_arg, const std::string& out_arg) {
    auto cfg = load_config(g);
    synthgen::CohortSpec spec = cfg.cohort;
    if (spec_arg != "default") {
        fs::path spath(spec_arg);
        std::ifstream in(spath);
        if (!in) throw DataError("cohort spec file not found: " + spath.string());
        std::stringstream ss;
        ss << in.rdbuf();
        spec = synthgen::spec_from_json(ss.str());
        if (g.seed >= 0) spec.seed = uint64_t(g.seed);
    }
    fs::path out = resolve_out(out_arg);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    core::Dataset ds = synthgen::generate_cohort(spec);
    core::save_dataset(ds, out);
    synthgen::save_spec_sidecar(spec, out);
    std::cout << "wrote " << out.string() << ": " << ds.speakers.size() << " speakers, "
              << ds.n_observations() << " observations (d=" << ds.embedding_dim << ")\n";
    return 0;
}

// Internal split used by standalone training: fold 0 of a fresh plan
// supplies train/val for tuning, calibration, and early stopping.
int cmd_train(const GlobalOpts& g, const std::string& data, const std::string& model,
              const std::string& task_s, const std::string& out_arg) {
    auto cfg = load_config(g);
    auto fam = harness::parse_family(model);
    if (!fam) {
        std::cerr << "error: unknown model family '" << model << "' (cs|me|dist|proto|tr)\n";
        return kExitUsage;
    }
    auto task = harness::parse_task(task_s);
    if (!task) {
        std::cerr << "error: unknown task '" << task_s << "' (regression|classification)\n";
        return kExitUsage;
    }
    if (*fam == harness::Family::Proto && *task == harness::Task::Regression) {
        std::cerr << "error: proto is classification-only; it has no regression form\n";
        return kExitUsage;
    }

    core::Dataset ds = core::load_dataset(data);
    auto plan = core::make_eval_plan(ds, 1, 1, cfg.plan_seed);
    const core::Fold& fold = plan.folds[0];

    harness::RunConfig rc;
    rc.task = *task;
    rc.models = {*fam};
    rc.plan_seed = cfg.plan_seed;
    rc.train_seed = cfg.train_seed;
    rc.dist_pair_cap = cfg.dist_pair_cap;
    rc.me_alpha = cfg.me_alpha;
    rc.proto = cfg.proto;
    rc.tr = cfg.tr;

    const std::string task_name = harness::to_string(*task);
    artifact::Artifact art;
    harness::FoldModels fm;
    harness::IterationModels im;

    auto calibrate = [&](harness::Family f, const harness::FoldModels& shared,
                         const harness::IterationModels& iter) {
        double th = 0.5;
        std::vector<double> scores;
        std::vector<int> labels;
        for (int si : fold.val) {
            const auto& seq = ds.speakers[size_t(si)];
            auto ordering = plan.ordering_for(seq, 0);
            (void)shared;
            for (int t = 0; t < seq.length(); ++t) {
                auto [sup, query] = core::support_set_at(seq, ordering, t);
                std::optional<double> s;
                switch (f) {
                    case harness::Family::CS:
                        s = *task == harness::Task::Classification
                                ? std::optional<double>(fm.cs_clf->score(query->embedding))
                                : std::optional<double>(fm.cs_reg->predict(query->embedding));
                        break;
                    case harness::Family::Dist:
                        s = fm.dist->predict(sup, query->embedding);
                        break;
                    case harness::Family::Proto:
                        s = protonet::predict(*iter.proto, sup, query->embedding);
                        break;
                    case harness::Family::Tr: {
                        Rng rng(seed_of({cfg.train_seed, fnv1a64(seq.speaker_id), uint64_t(t)}));
                        s = iter.tr->predict_score(sup, query->embedding, rng);
                        break;
                    }
                    case harness::Family::ME:
                        s = *task == harness::Task::Classification
                                ? linmod::me_predict_label_score(sup, query->embedding, cfg.me_alpha)
                                : linmod::me_predict_hours(sup, query->embedding, cfg.me_alpha);
                        break;
                }
                if (!s) continue;
                scores.push_back(*s);
                labels.push_back(query->target.label);
            }
        }
        if (*task == harness::Task::Classification)
            th = metrics::calibrate_threshold(scores, labels).threshold;
        return th;
    };

    switch (*fam) {
        case harness::Family::ME:
            art = artifact::pack_me(cfg.me_alpha, task_name, ds.embedding_dim, cfg.train_seed);
            break;
        case harness::Family::CS: {
            fm = harness::train_fold_models(ds, fold, rc, 0);
            if (*task == harness::Task::Regression) {
                art = artifact::pack_cs_regression(*fm.cs_reg, ds.embedding_dim, cfg.train_seed);
            } else {
                fm.cs_clf->threshold = calibrate(harness::Family::CS, fm, im);
                art = artifact::pack_cs_classifier(*fm.cs_clf, ds.embedding_dim, cfg.train_seed);
            }
            break;
        }
        case harness::Family::Dist: {
            fm = harness::train_fold_models(ds, fold, rc, 0);
            double th = calibrate(harness::Family::Dist, fm, im);
            art = artifact::pack_dist(*fm.dist, task_name, ds.embedding_dim, cfg.train_seed, th);
            break;
        }
        case harness::Family::Proto: {
            im = harness::train_iteration_models(ds, fold, plan, rc, fm, 0, 0);
            double th = calibrate(harness::Family::Proto, fm, im);
            art = artifact::pack_proto(*im.proto, ds.embedding_dim, cfg.train_seed, th);
            break;
        }
        case harness::Family::Tr: {
            im = harness::train_iteration_models(ds, fold, plan, rc, fm, 0, 0);
            double th = *task == harness::Task::Classification
                            ? calibrate(harness::Family::Tr, fm, im)
                            : 0.5;
            art = artifact::pack_tr(*im.tr, task_name, cfg.train_seed, th);
            break;
        }
    }

    fs::path out = resolve_out(out_arg);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    artifact::save_artifact(art, out);
    std::cout << "wrote " << out.string() << " (family=" << art.family << ", task=" << art.task
              << ")\n";
    return 0;
}

int run_eval_into(const config::AppConfig& cfg, const core::Dataset& ds, const fs::path& dir,
                  harness::ProtocolResult& result) {
    fs::create_directories(dir);
    harness::RunConfig rc = config::to_run_config(cfg);
    result = harness::run_protocol(ds, rc);
    core::save_eval_plan(result.plan, ds, dir / "plan.json");
    harness::write_metrics_csv(result, dir / "metrics.csv");
    harness::write_predictions_csv(result, ds, dir / "predictions.csv");
    harness::write_summary_text(result, dir / "summary_t67.txt");
    harness::write_curve_csv(result, dir / "curve.csv");
    int failures = 0;
    for (const auto& it : result.iterations)
        if (it.failed) {
            ++failures;
            std::cerr << "iteration fold=" << it.fold << " ordering=" << it.ordering
                      << " failed: " << it.error << "\n";
        }
    return failures;
}

int cmd_eval(const GlobalOpts& g, const std::string& data, const std::string& out_dir,
             const std::string& summary) {
    auto cfg = load_config(g);
    core::Dataset ds = core::load_dataset(data);
    fs::path dir = resolve_out(out_dir);
    harness::ProtocolResult result;
    int failures = run_eval_into(cfg, ds, dir, result);
    write_manifest(dir, "eval", cfg,
                   {dir / "metrics.csv", dir / "predictions.csv", dir / "summary_t67.txt",
                    dir / "curve.csv", dir / "plan.json"});
    if (summary == "t67") {
        std::ifstream in(dir / "summary_t67.txt");
        std::cout << in.rdbuf();
    }
    std::cout << "eval outputs in " << dir.string() << "\n";
    return failures == 0 ? 0 : kExitRuntime;
}

int cmd_curve(const GlobalOpts& g, const std::string& data, const std::string& from,
              const std::string& out_arg) {
    fs::path out = resolve_out(out_arg);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    if (!from.empty()) {
        // Re-derive the curve file from a completed run directory.
        fs::path src = fs::path(from) / "curve.csv";
        if (!fs::exists(src)) throw DataError("no curve.csv under " + from);
        fs::copy_file(src, out, fs::copy_options::overwrite_existing);
        std::cout << "wrote " << out.string() << "\n";
        return 0;
    }
    auto cfg = load_config(g);
    core::Dataset ds = core::load_dataset(data);
    harness::RunConfig rc = config::to_run_config(cfg);
    auto result = harness::run_protocol(ds, rc);
    harness::write_curve_csv(result, out);
    std::cout << "wrote " << out.string() << "\n";
    for (const auto& it : result.iterations)
        if (it.failed) return kExitRuntime;
    return 0;
}

int cmd_nullcheck(const GlobalOpts& g, const std::string& data, const std::string& out_dir) {
    auto cfg = load_config(g);
    core::Dataset ds = core::load_dataset(data);
    fs::path dir = resolve_out(out_dir);
    fs::create_directories(dir);
    harness::NullConfig nc = config::to_null_config(cfg);
    auto result = harness::null_model_experiment(ds, nc);
    harness::write_null_csv(result, dir / "null_table.csv");
    harness::write_null_text(result, dir / "null_table.txt");
    write_manifest(dir, "nullcheck", cfg, {dir / "null_table.csv", dir / "null_table.txt"});
    std::ifstream in(dir / "null_table.txt");
    std::cout << in.rdbuf();
    return 0;
}

int cmd_fairness(const GlobalOpts& g, const std::string& data, const std::string& out_dir) {
    auto cfg = load_config(g);
    core::Dataset ds = core::load_dataset(data);
    fs::path dir = resolve_out(out_dir);
    harness::ProtocolResult result;
    int failures = run_eval_into(cfg, ds, dir, result);
    auto report = harness::fairness_report(result, ds, config::to_fairness_config(cfg));
    harness::write_fairness_csv(report, dir / "fairness.csv");
    harness::write_fairness_text(report, dir / "fairness.txt");
    write_manifest(dir, "fairness", cfg, {dir / "fairness.csv", dir / "fairness.txt"});
    std::ifstream in(dir / "fairness.txt");
    std::cout << in.rdbuf();
    return failures == 0 ? 0 : kExitRuntime;
}

void apply_preset(config::AppConfig& cfg, const std::string& preset) {
    if (preset == "desk") {
        cfg.cohort.n_speakers = 500;
        cfg.n_folds = 2;
        cfg.n_orderings = 3;
        cfg.tr.steps = 1500;
        cfg.proto.episodes = 3000;
        cfg.null_reps = 2;
    } else if (preset == "smoke") {
        cfg.cohort.n_speakers = 150;
        cfg.n_folds = 2;
        cfg.n_orderings = 2;
        cfg.tr.steps = 300;
        cfg.tr.eval_every = 100;
        cfg.proto.episodes = 600;
        cfg.null_reps = 1;
    } else if (preset != "config") {
        throw DataError("unknown preset '" + preset + "' (config|desk|smoke)");
    }
}

int cmd_reproduce(const GlobalOpts& g, const std::string& out_dir, const std::string& preset) {
    auto cfg = load_config(g);
    apply_preset(cfg, preset);
    fs::path dir = resolve_out(out_dir);
    fs::create_directories(dir);

    std::string stage = "gen";
    std::vector<fs::path> files;
    try {
        // gen
        core::Dataset ds = synthgen::generate_cohort(cfg.cohort);
        fs::path data = dir / "dataset.jsonl";
        core::save_dataset(ds, data);
        synthgen::save_spec_sidecar(cfg.cohort, data);
        files.push_back(data);

        // train one artifact per family
        stage = "train";
        fs::path art_dir = dir / "artifacts";
        fs::create_directories(art_dir);
        auto plan1 = core::make_eval_plan(ds, 1, 1, cfg.plan_seed);
        harness::RunConfig rc_all = config::to_run_config(cfg);
        harness::FoldModels fm = harness::train_fold_models(ds, plan1.folds[0], rc_all, 0);
        harness::IterationModels im =
            harness::train_iteration_models(ds, plan1.folds[0], plan1, rc_all, fm, 0, 0);
        auto save = [&](const artifact::Artifact& a, const std::string& name) {
            fs::path p = art_dir / name;
            artifact::save_artifact(a, p);
            files.push_back(p);
        };
        save(artifact::pack_cs_regression(*fm.cs_reg, ds.embedding_dim, cfg.train_seed),
             "cs_regression.fba");
        if (fm.cs_clf)
            save(artifact::pack_cs_classifier(*fm.cs_clf, ds.embedding_dim, cfg.train_seed),
                 "cs_classifier.fba");
        save(artifact::pack_me(cfg.me_alpha, "regression", ds.embedding_dim, cfg.train_seed),
             "me.fba");
        if (fm.dist)
            save(artifact::pack_dist(*fm.dist, "classification", ds.embedding_dim, cfg.train_seed,
                                     0.5),
                 "dist.fba");
        if (im.proto)
            save(artifact::pack_proto(*im.proto, ds.embedding_dim, cfg.train_seed, 0.5),
                 "proto.fba");
        if (im.tr) save(artifact::pack_tr(*im.tr, cfg.task, cfg.train_seed, 0.5), "tr.fba");

        // eval: classification and regression protocols
        stage = "eval";
        config::AppConfig clf_cfg = cfg;
        clf_cfg.task = "classification";
        harness::ProtocolResult clf_result;
        int fail1 = run_eval_into(clf_cfg, ds, dir / "eval_classification", clf_result);
        config::AppConfig reg_cfg = cfg;
        reg_cfg.task = "regression";
        reg_cfg.models = "cs,me,dist,tr";
        harness::ProtocolResult reg_result;
        int fail2 = run_eval_into(reg_cfg, ds, dir / "eval_regression", reg_result);
        if (fail1 || fail2) throw std::runtime_error("evaluation iterations failed");
        for (const char* f : {"metrics.csv", "predictions.csv", "summary_t67.txt", "curve.csv"}) {
            files.push_back(dir / "eval_classification" / f);
            files.push_back(dir / "eval_regression" / f);
        }

        // curve files already written by eval; nullcheck next
        stage = "nullcheck";
        harness::NullConfig nc = config::to_null_config(cfg);
        auto null_result = harness::null_model_experiment(ds, nc);
        harness::write_null_csv(null_result, dir / "null_table.csv");
        harness::write_null_text(null_result, dir / "null_table.txt");
        files.push_back(dir / "null_table.csv");

        stage = "fairness";
        auto report =
            harness::fairness_report(clf_result, ds, config::to_fairness_config(cfg));
        harness::write_fairness_csv(report, dir / "fairness.csv");
        harness::write_fairness_text(report, dir / "fairness.txt");
        files.push_back(dir / "fairness.csv");

        stage = "manifest";
        write_manifest(dir, "reproduce", cfg, files);
    } catch (const std::exception& e) {
        std::cerr << "reproduce failed at stage '" << stage << "': " << e.what() << "\n";
        throw;
    }
    std::cout << "reproduce outputs in " << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speaker-adaptive fatigue prediction benchmark"};
    app.set_version_flag("--version", kVersion);
    app.fallthrough();  // global flags remain valid after a subcommand name

    GlobalOpts g;
    bool print_cfg = false;
    app.add_option("--config", g.config_path, "key=value config file");
    app.add_option("--jobs", g.jobs, "worker pool size (0 = all cores)");
    app.add_option("--seed", g.seed, "master seed override");
    app.add_flag("--print-config", print_cfg, "print the effective configuration and exit");

    std::string spec_arg = "default", out_arg, data_arg, model_arg, task_arg = "classification";
    std::string from_arg, summary_arg, preset_arg = "config";

    auto* gen = app.add_subcommand("gen", "generate a synthetic cohort");
    gen->add_option("--spec", spec_arg, "cohort spec JSON file, or 'default'");
    gen->add_option("--out", out_arg, "output JSONL path")->required();

    auto* train = app.add_subcommand("train", "train one model family");
    train->add_option("--data", data_arg, "dataset JSONL")->required();
    train->add_option("--model", model_arg, "cs|me|dist|proto|tr")->required();
    train->add_option("--task", task_arg, "regression|classification");
    train->add_option("--out", out_arg, "artifact output path")->required();

    auto* eval = app.add_subcommand("eval", "run the full evaluation protocol");
    eval->add_option("--data", data_arg, "dataset JSONL")->required();
    eval->add_option("--out-dir", out_arg, "output directory")->required();
    eval->add_option("--summary", summary_arg, "print a summary block (t67)");

    auto* curve = app.add_subcommand("curve", "emit per-support-size metric curves");
    curve->add_option("--data", data_arg, "dataset JSONL (ignored with --from)");
    curve->add_option("--from", from_arg, "reuse a completed eval output directory");
    curve->add_option("--out", out_arg, "output CSV path")->required();

    auto* nullcheck = app.add_subcommand("nullcheck", "null-model sequence-effect control");
    nullcheck->add_option("--data", data_arg, "dataset JSONL")->required();
    nullcheck->add_option("--out-dir", out_arg, "output directory")->required();

    auto* fairness = app.add_subcommand("fairness", "per-group report and confound audit");
    fairness->add_option("--data", data_arg, "dataset JSONL")->required();
    fairness->add_option("--out-dir", out_arg, "output directory")->required();

    auto* reproduce = app.add_subcommand("reproduce", "full pipeline with pinned seeds");
    reproduce->add_option("--out-dir", out_arg, "output directory")->required();
    reproduce->add_option("--preset", preset_arg, "config|desk|smoke");

    app.require_subcommand(0, 1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (print_cfg) {
            config::print_config(load_config(g), std::cout);
            return 0;
        }
        if (gen->parsed()) return cmd_gen(g, spec_arg, out_arg);
        if (train->parsed()) return cmd_train(g, data_arg, model_arg, task_arg, out_arg);
        if (eval->parsed()) return cmd_eval(g, data_arg, out_arg, summary_arg);
        if (curve->parsed()) return cmd_curve(g, data_arg, from_arg, out_arg);
        if (nullcheck->parsed()) return cmd_nullcheck(g, data_arg, out_arg);
        if (fairness->parsed()) return cmd_fairness(g, data_arg, out_arg);
        if (reproduce->parsed()) return cmd_reproduce(g, out_arg, preset_arg);
        std::cout << app.help();
        return 0;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
