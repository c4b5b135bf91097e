#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>

#include "fatbench/harness.hpp"
#include "fatbench/synthgen.hpp"

namespace fatbench::config {

// Flat `key = value` file, '#' comments. Unknown keys are rejected so typos
// fail loudly.
struct KeyValues {
    std::map<std::string, std::string> values;

    static KeyValues parse_file(const std::filesystem::path& path);
    static KeyValues parse_text(const std::string& text);

    bool contains(const std::string& key) const { return values.count(key) > 0; }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
};

struct AppConfig {
    synthgen::CohortSpec cohort;
    int n_folds = 5;
    int n_orderings = 5;
    uint64_t plan_seed = 7;
    uint64_t train_seed = 11;
    std::string task = "classification";
    std::string models = "cs,me,dist,proto,tr";
    int bucket_max = 10;
    int dist_pair_cap = 200;
    double me_alpha = 1000.0;
    protonet::ProtoConfig proto;
    ictr::TransformerConfig tr;
    std::string tr_preset = "desk";  // desk | full
    int null_reps = 2;
    int null_balanced_len = 8;
    uint64_t null_seed = 313;
    int fairness_max_t = 7;
    double fairness_min_group_points = 100;
    int jobs = 0;
};

// Defaults overridden by an optional config file; unknown keys throw.
AppConfig load_app_config(const std::filesystem::path* path);
AppConfig app_config_from(const KeyValues& kv);

void print_config(const AppConfig& cfg, std::ostream& out);

// Materializes the harness run config (validated); regression drops proto
// from a default model list but rejects an explicit proto selection.
harness::RunConfig to_run_config(const AppConfig& cfg);
harness::NullConfig to_null_config(const AppConfig& cfg);
harness::FairnessConfig to_fairness_config(const AppConfig& cfg);

}  // namespace fatbench::config
