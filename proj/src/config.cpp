#include "fatbench/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fatbench::config {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "cohort.n_speakers", "cohort.avg_samples", "cohort.embedding_dim",
        "cohort.speaker_offset_scale", "cohort.fatigue_direction_count",
        "cohort.fatigue_signal_scale", "cohort.fatigue_scale_sigma", "cohort.noise_scale",
        "cohort.noise_outlier_frac", "cohort.noise_outlier_factor",
        "cohort.tss_low_mode", "cohort.tss_low_sigma", "cohort.tss_high_mode",
        "cohort.tss_high_sigma", "cohort.tss_high_weight", "cohort.seed",
        "cohort.attenuate_field", "cohort.attenuate_value", "cohort.attenuate_factor",
        "plan.n_folds", "plan.n_orderings", "plan.seed",
        "eval.task", "eval.models", "eval.bucket_max", "eval.train_seed",
        "me.alpha", "dist.pair_cap",
        "proto.hidden_dim", "proto.out_dim", "proto.episodes", "proto.lr",
        "proto.support_min", "proto.support_max", "proto.eval_every", "proto.patience",
        "proto.val_episodes",
        "tr.preset", "tr.n_layers", "tr.n_heads", "tr.model_dim", "tr.max_seq_tokens",
        "tr.aug_noise_std", "tr.lr", "tr.steps", "tr.grad_clip", "tr.eval_every", "tr.patience",
        "null.n_reps", "null.balanced_len", "null.seed",
        "fairness.max_t", "fairness.min_group_points",
        "jobs",
    };
    return keys;
}

}  // namespace

KeyValues KeyValues::parse_text(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw DataError("config line " + std::to_string(line_no) + ": empty key");
        if (!known_keys().count(key))
            throw DataError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
        kv.values[key] = value;
    }
    return kv;
}

KeyValues KeyValues::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
}

int KeyValues::get_int(const std::string& key, int fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': expected an integer, got '" + it->second + "'");
    }
}

uint64_t KeyValues::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': expected an integer, got '" + it->second + "'");
    }
}

AppConfig app_config_from(const KeyValues& kv) {
    AppConfig c;
    c.cohort.n_speakers = kv.get_int("cohort.n_speakers", c.cohort.n_speakers);
    c.cohort.avg_samples = kv.get_double("cohort.avg_samples", c.cohort.avg_samples);
    c.cohort.embedding_dim = kv.get_int("cohort.embedding_dim", c.cohort.embedding_dim);
    c.cohort.speaker_offset_scale =
        kv.get_double("cohort.speaker_offset_scale", c.cohort.speaker_offset_scale);
    c.cohort.fatigue_direction_count = kv.get_int(
        "cohort.fatigue_direction_count",
        std::min(c.cohort.fatigue_direction_count, c.cohort.embedding_dim));
    c.cohort.fatigue_signal_scale =
        kv.get_double("cohort.fatigue_signal_scale", c.cohort.fatigue_signal_scale);
    c.cohort.fatigue_scale_sigma =
        kv.get_double("cohort.fatigue_scale_sigma", c.cohort.fatigue_scale_sigma);
    c.cohort.noise_scale = kv.get_double("cohort.noise_scale", c.cohort.noise_scale);
    c.cohort.noise_outlier_frac =
        kv.get_double("cohort.noise_outlier_frac", c.cohort.noise_outlier_frac);
    c.cohort.noise_outlier_factor =
        kv.get_double("cohort.noise_outlier_factor", c.cohort.noise_outlier_factor);
    c.cohort.tss.low_mode = kv.get_double("cohort.tss_low_mode", c.cohort.tss.low_mode);
    c.cohort.tss.low_sigma = kv.get_double("cohort.tss_low_sigma", c.cohort.tss.low_sigma);
    c.cohort.tss.high_mode = kv.get_double("cohort.tss_high_mode", c.cohort.tss.high_mode);
    c.cohort.tss.high_sigma = kv.get_double("cohort.tss_high_sigma", c.cohort.tss.high_sigma);
    c.cohort.tss.high_weight = kv.get_double("cohort.tss_high_weight", c.cohort.tss.high_weight);
    c.cohort.seed = kv.get_u64("cohort.seed", c.cohort.seed);
    c.cohort.attenuation.field = kv.get_string("cohort.attenuate_field", "");
    c.cohort.attenuation.value = kv.get_string("cohort.attenuate_value", "");
    c.cohort.attenuation.factor = kv.get_double("cohort.attenuate_factor", 1.0);

    c.n_folds = kv.get_int("plan.n_folds", c.n_folds);
    c.n_orderings = kv.get_int("plan.n_orderings", c.n_orderings);
    c.plan_seed = kv.get_u64("plan.seed", c.plan_seed);
    c.train_seed = kv.get_u64("eval.train_seed", c.train_seed);
    c.task = kv.get_string("eval.task", c.task);
    c.models = kv.get_string("eval.models", c.models);
    c.bucket_max = kv.get_int("eval.bucket_max", c.bucket_max);
    c.dist_pair_cap = kv.get_int("dist.pair_cap", c.dist_pair_cap);
    c.me_alpha = kv.get_double("me.alpha", c.me_alpha);

    c.proto.hidden_dim = kv.get_int("proto.hidden_dim", c.proto.hidden_dim);
    c.proto.out_dim = kv.get_int("proto.out_dim", c.proto.out_dim);
    c.proto.episodes = kv.get_int("proto.episodes", c.proto.episodes);
    c.proto.lr = kv.get_double("proto.lr", c.proto.lr);
    c.proto.support_min = kv.get_int("proto.support_min", c.proto.support_min);
    c.proto.support_max = kv.get_int("proto.support_max", c.proto.support_max);
    c.proto.eval_every = kv.get_int("proto.eval_every", c.proto.eval_every);
    c.proto.patience = kv.get_int("proto.patience", c.proto.patience);
    c.proto.val_episodes = kv.get_int("proto.val_episodes", c.proto.val_episodes);

    c.tr_preset = kv.get_string("tr.preset", c.tr_preset);
    if (c.tr_preset == "full") c.tr = ictr::full_config(c.cohort.embedding_dim);
    else if (c.tr_preset == "desk") c.tr = ictr::desk_config(c.cohort.embedding_dim);
    else throw DataError("config key 'tr.preset': expected desk or full");
    c.tr.n_layers = kv.get_int("tr.n_layers", c.tr.n_layers);
    c.tr.n_heads = kv.get_int("tr.n_heads", c.tr.n_heads);
    c.tr.model_dim = kv.get_int("tr.model_dim", c.tr.model_dim);
    c.tr.max_seq_tokens = kv.get_int("tr.max_seq_tokens", c.tr.max_seq_tokens);
    c.tr.aug_noise_std = kv.get_double("tr.aug_noise_std", c.tr.aug_noise_std);
    c.tr.lr = kv.get_double("tr.lr", c.tr.lr);
    c.tr.steps = kv.get_int("tr.steps", c.tr.steps);
    c.tr.grad_clip = kv.get_double("tr.grad_clip", c.tr.grad_clip);
    c.tr.eval_every = kv.get_int("tr.eval_every", c.tr.eval_every);
    c.tr.patience = kv.get_int("tr.patience", c.tr.patience);

    c.null_reps = kv.get_int("null.n_reps", c.null_reps);
    c.null_balanced_len = kv.get_int("null.balanced_len", c.null_balanced_len);
    c.null_seed = kv.get_u64("null.seed", c.null_seed);
    c.fairness_max_t = kv.get_int("fairness.max_t", c.fairness_max_t);
    c.fairness_min_group_points =
        kv.get_double("fairness.min_group_points", c.fairness_min_group_points);
    c.jobs = kv.get_int("jobs", c.jobs);

    synthgen::validate_spec(c.cohort);
    return c;
}

AppConfig load_app_config(const std::filesystem::path* path) {
    if (!path) return app_config_from(KeyValues{});
    return app_config_from(KeyValues::parse_file(*path));
}

void print_config(const AppConfig& c, std::ostream& out) {
    out << "# effective configuration\n";
    out << "cohort.n_speakers = " << c.cohort.n_speakers << '\n';
    out << "cohort.avg_samples = " << c.cohort.avg_samples << '\n';
    out << "cohort.embedding_dim = " << c.cohort.embedding_dim << '\n';
    out << "cohort.speaker_offset_scale = " << c.cohort.speaker_offset_scale << '\n';
    out << "cohort.fatigue_direction_count = " << c.cohort.fatigue_direction_count << '\n';
    out << "cohort.fatigue_signal_scale = " << c.cohort.fatigue_signal_scale << '\n';
    out << "cohort.fatigue_scale_sigma = " << c.cohort.fatigue_scale_sigma << '\n';
    out << "cohort.noise_scale = " << c.cohort.noise_scale << '\n';
    out << "cohort.noise_outlier_frac = " << c.cohort.noise_outlier_frac << '\n';
    out << "cohort.noise_outlier_factor = " << c.cohort.noise_outlier_factor << '\n';
    out << "cohort.tss_low_mode = " << c.cohort.tss.low_mode << '\n';
    out << "cohort.tss_low_sigma = " << c.cohort.tss.low_sigma << '\n';
    out << "cohort.tss_high_mode = " << c.cohort.tss.high_mode << '\n';
    out << "cohort.tss_high_sigma = " << c.cohort.tss.high_sigma << '\n';
    out << "cohort.tss_high_weight = " << c.cohort.tss.high_weight << '\n';
    out << "cohort.seed = " << c.cohort.seed << '\n';
    out << "cohort.attenuate_field = " << c.cohort.attenuation.field << '\n';
    out << "cohort.attenuate_value = " << c.cohort.attenuation.value << '\n';
    out << "cohort.attenuate_factor = " << c.cohort.attenuation.factor << '\n';
    out << "plan.n_folds = " << c.n_folds << '\n';
    out << "plan.n_orderings = " << c.n_orderings << '\n';
    out << "plan.seed = " << c.plan_seed << '\n';
    out << "eval.train_seed = " << c.train_seed << '\n';
    out << "eval.task = " << c.task << '\n';
    out << "eval.models = " << c.models << '\n';
    out << "eval.bucket_max = " << c.bucket_max << '\n';
    out << "me.alpha = " << c.me_alpha << '\n';
    out << "dist.pair_cap = " << c.dist_pair_cap << '\n';
    out << "proto.hidden_dim = " << c.proto.hidden_dim << '\n';
    out << "proto.out_dim = " << c.proto.out_dim << '\n';
    out << "proto.episodes = " << c.proto.episodes << '\n';
    out << "proto.lr = " << c.proto.lr << '\n';
    out << "proto.support_min = " << c.proto.support_min << '\n';
    out << "proto.support_max = " << c.proto.support_max << '\n';
    out << "proto.eval_every = " << c.proto.eval_every << '\n';
    out << "proto.patience = " << c.proto.patience << '\n';
    out << "proto.val_episodes = " << c.proto.val_episodes << '\n';
    out << "tr.preset = " << c.tr_preset << '\n';
    out << "tr.n_layers = " << c.tr.n_layers << '\n';
    out << "tr.n_heads = " << c.tr.n_heads << '\n';
    out << "tr.model_dim = " << c.tr.model_dim << '\n';
    out << "tr.max_seq_tokens = " << c.tr.max_seq_tokens << '\n';
    out << "tr.aug_noise_std = " << c.tr.aug_noise_std << '\n';
    out << "tr.lr = " << c.tr.lr << '\n';
    out << "tr.steps = " << c.tr.steps << '\n';
    out << "tr.grad_clip = " << c.tr.grad_clip << '\n';
    out << "tr.eval_every = " << c.tr.eval_every << '\n';
    out << "tr.patience = " << c.tr.patience << '\n';
    out << "null.n_reps = " << c.null_reps << '\n';
    out << "null.balanced_len = " << c.null_balanced_len << '\n';
    out << "null.seed = " << c.null_seed << '\n';
    out << "fairness.max_t = " << c.fairness_max_t << '\n';
    out << "fairness.min_group_points = " << c.fairness_min_group_points << '\n';
    out << "jobs = " << c.jobs << '\n';
}

harness::RunConfig to_run_config(const AppConfig& c) {
    harness::RunConfig rc;
    auto task = harness::parse_task(c.task);
    if (!task) throw DataError("eval.task: expected regression or classification, got '" + c.task + "'");
    rc.task = *task;

    rc.models.clear();
    std::stringstream ss(c.models);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        auto fam = harness::parse_family(tok);
        if (!fam) throw DataError("eval.models: unknown model '" + tok + "'");
        if (std::find(rc.models.begin(), rc.models.end(), *fam) == rc.models.end())
            rc.models.push_back(*fam);
    }
    // The default model list includes proto; silently drop it for regression
    // runs (it has no regression form). Explicit single-model selections
    // still fail validation below.
    if (rc.task == harness::Task::Regression && c.models == "cs,me,dist,proto,tr")
        rc.models.erase(std::remove(rc.models.begin(), rc.models.end(), harness::Family::Proto),
                        rc.models.end());

    rc.n_folds = c.n_folds;
    rc.n_orderings = c.n_orderings;
    rc.plan_seed = c.plan_seed;
    rc.train_seed = c.train_seed;
    rc.bucket_max = c.bucket_max;
    rc.dist_pair_cap = c.dist_pair_cap;
    rc.me_alpha = c.me_alpha;
    rc.proto = c.proto;
    rc.tr = c.tr;
    rc.jobs = c.jobs;
    harness::validate_run_config(rc);
    return rc;
}

harness::NullConfig to_null_config(const AppConfig& c) {
    harness::NullConfig nc;
    nc.tr = c.tr;
    nc.n_reps = c.null_reps;
    nc.balanced_len = c.null_balanced_len;
    nc.seed = c.null_seed;
    nc.jobs = c.jobs;
    return nc;
}

harness::FairnessConfig to_fairness_config(const AppConfig& c) {
    harness::FairnessConfig fc;
    fc.max_t = c.fairness_max_t;
    fc.min_group_points = c.fairness_min_group_points;
    return fc;
}

}  // namespace fatbench::config
