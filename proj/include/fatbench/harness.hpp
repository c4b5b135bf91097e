#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fatbench/core.hpp"
#include "fatbench/distmodel.hpp"
#include "fatbench/ictransformer.hpp"
#include "fatbench/linmodels.hpp"
#include "fatbench/metrics.hpp"
#include "fatbench/protonet.hpp"

namespace fatbench::harness {

enum class Task { Regression, Classification };
enum class Family { CS, ME, Dist, Proto, Tr };

const char* to_string(Task t);
const char* to_string(Family f);
std::optional<Task> parse_task(const std::string& s);
std::optional<Family> parse_family(const std::string& s);

struct RunConfig {
    Task task = Task::Classification;
    std::vector<Family> models{Family::CS, Family::ME, Family::Dist, Family::Proto, Family::Tr};
    int n_folds = 5;
    int n_orderings = 5;
    uint64_t plan_seed = 7;
    uint64_t train_seed = 11;
    int bucket_max = 10;  // t >= bucket_max pools into one final bucket
    int dist_pair_cap = 200;
    double me_alpha = linmod::kMeAlpha;
    protonet::ProtoConfig proto;
    ictr::TransformerConfig tr;
    int jobs = 0;  // 0 = hardware concurrency

    bool has(Family f) const;
};

// Proto is classification-only; a regression config including it is invalid.
void validate_run_config(const RunConfig& cfg);

struct PredictionRow {
    int fold = 0;
    int ordering = 0;
    Family model = Family::CS;
    int speaker = 0;  // index into Dataset::speakers
    int t = 0;
    bool skipped = false;
    double score = 0.0;
    double hours = 0.0;
    int label = 0;
};

struct IterationOutput {
    int fold = 0;
    int ordering = 0;
    bool failed = false;
    std::string error;
    std::map<Family, double> thresholds;  // classification only
    std::vector<PredictionRow> rows;      // test rows, one per (model, query)
};

struct MetricRow {
    std::string model;
    std::string task;
    std::string support_size;  // "0".."9", "<max>+", "t67", "all"
    std::string metric;
    std::string group;
    double mean = 0.0;
    double stddev = 0.0;
    int n = 0;
};

struct ProtocolResult {
    RunConfig config;
    core::EvalPlan plan;
    std::vector<IterationOutput> iterations;
    std::vector<MetricRow> metrics;
};

// Cross-sectional and distance models depend only on the fold, so they are
// trained once per fold; proto/transformer retrain per (fold, ordering).
struct FoldModels {
    std::optional<linmod::RidgeModel> cs_reg;
    std::optional<linmod::LogisticModel> cs_clf;
    std::optional<distmod::DistanceModel> dist;
};

FoldModels train_fold_models(const core::Dataset& ds, const core::Fold& fold,
                             const RunConfig& cfg, int fold_idx);

struct IterationModels {
    const FoldModels* shared = nullptr;
    std::optional<protonet::ProjectionNet> proto;
    std::optional<ictr::TransformerModel> tr;
};

IterationModels train_iteration_models(const core::Dataset& ds, const core::Fold& fold,
                                       const core::EvalPlan& plan, const RunConfig& cfg,
                                       const FoldModels& shared, int fold_idx, int ordering_idx);

// Transformer scores for every prefix length t = 0..len-1 of one speaker
// under an ordering (single causal forward when the sequence fits).
std::vector<double> tr_prefix_scores(const ictr::TransformerModel& model,
                                     const core::SpeakerSequence& seq,
                                     const std::vector<int>& ordering, Rng& rng);

// Full protocol: per (fold, ordering) iteration train/tune/calibrate, then
// score every test query at every support size; metrics are bucketed by t
// and aggregated across iterations.
ProtocolResult run_protocol(const core::Dataset& ds, const RunConfig& cfg);

// ---- Null-model sequence-effect control ----

enum class Regime { Periodic, Balanced, Random };
const char* to_string(Regime r);

struct NullConfig {
    ictr::TransformerConfig tr;
    std::vector<Regime> train_regimes{Regime::Periodic, Regime::Balanced, Regime::Random};
    std::vector<Regime> test_regimes{Regime::Periodic, Regime::Balanced, Regime::Random};
    int n_reps = 2;        // independent split/seed replicates per cell
    int balanced_len = 8;  // fixed length of Balanced sequences (half per class)
    uint64_t seed = 313;
    int jobs = 0;
};

struct NullCell {
    Regime train_regime;
    Regime test_regime;
    metrics::Aggregate auc;
};

struct NullResult {
    std::vector<NullCell> cells;
    const NullCell* cell(Regime tr, Regime te) const;
};

// Reorders one speaker's observations per the regime; may drop observations
// (strict alternation stops when a class runs out; Balanced needs len/2 of
// each class). Returns an empty list when the speaker cannot form a usable
// sequence under the regime.
std::vector<const core::Observation*> regime_sequence(const core::SpeakerSequence& seq,
                                                      Regime regime, int balanced_len, Rng& rng);

// Trains the transformer with every embedding replaced by the train-split
// mean vector, once per (rep, train regime), and scores test-regime
// sequences; AUC pools query points with t >= 1.
NullResult null_model_experiment(const core::Dataset& ds, const NullConfig& cfg);

// ---- Fairness ----

struct FairnessConfig {
    int max_t = 7;  // pool points with up to this many previous observations
    double min_group_points = 100;  // per-iteration average below this flags low-n
};

struct GroupAuc {
    std::string field;
    std::string group;
    metrics::Aggregate auc;
    double avg_points = 0.0;
    bool low_n = false;
    bool undefined = false;
};

struct FairnessReport {
    struct ModelBlock {
        Family model;
        std::vector<GroupAuc> groups;
        // field -> max-min AUC gap over well-populated groups, and the group
        // at the low end.
        std::map<std::string, double> gap;
        std::map<std::string, std::string> lowest_group;
    };
    std::vector<ModelBlock> models;
    std::vector<std::pair<std::string, double>> confound_auc;  // per field, dataset-wide
};

FairnessReport fairness_report(const ProtocolResult& result, const core::Dataset& ds,
                               const FairnessConfig& cfg = {});

// ---- Report writers ----

void write_metrics_csv(const ProtocolResult& r, const std::filesystem::path& path);
void write_predictions_csv(const ProtocolResult& r, const core::Dataset& ds,
                           const std::filesystem::path& path);
void write_summary_text(const ProtocolResult& r, const std::filesystem::path& path);
void write_curve_csv(const ProtocolResult& r, const std::filesystem::path& path);
void write_null_csv(const NullResult& r, const std::filesystem::path& path);
void write_null_text(const NullResult& r, const std::filesystem::path& path);
void write_fairness_csv(const FairnessReport& r, const std::filesystem::path& path);
void write_fairness_text(const FairnessReport& r, const std::filesystem::path& path);

// Bounded worker pool; job i runs exactly once, results must be written to
// preallocated slots so ordering stays deterministic.
void parallel_for(int n_jobs, int n_workers, const std::function<void(int)>& fn);

}  // namespace fatbench::harness
