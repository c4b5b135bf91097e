#include "fatbench/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace fatbench::core {

using ordered_json = nlohmann::ordered_json;

const char* to_string(Sex s) {
    switch (s) {
        case Sex::Female: return "Female";
        case Sex::Male: return "Male";
        case Sex::Other: return "Other";
    }
    return "?";
}

const char* to_string(AgeGroup a) {
    return a == AgeGroup::Under40 ? "Under40" : "Over40";
}

const char* to_string(Language l) {
    switch (l) {
        case Language::GB: return "GB";
        case Language::US: return "US";
        case Language::Es: return "es";
        case Language::EngOther: return "eng-other";
    }
    return "?";
}

std::optional<Sex> parse_sex(const std::string& s) {
    if (s == "Female") return Sex::Female;
    if (s == "Male") return Sex::Male;
    if (s == "Other") return Sex::Other;
    return std::nullopt;
}

std::optional<AgeGroup> parse_age_group(const std::string& s) {
    if (s == "Under40") return AgeGroup::Under40;
    if (s == "Over40") return AgeGroup::Over40;
    return std::nullopt;
}

std::optional<Language> parse_language(const std::string& s) {
    if (s == "GB") return Language::GB;
    if (s == "US") return Language::US;
    if (s == "es") return Language::Es;
    if (s == "eng-other") return Language::EngOther;
    return std::nullopt;
}

int binarize(double hours) {
    if (!(hours >= 0.0 && hours <= 24.0)) throw ContractError("binarize: hours outside [0,24]");
    return hours >= 10.0 ? 1 : 0;
}

size_t Dataset::n_observations() const {
    size_t n = 0;
    for (const auto& s : speakers) n += s.observations.size();
    return n;
}

const SpeakerSequence* Dataset::find_speaker(const std::string& id) const {
    for (const auto& s : speakers)
        if (s.speaker_id == id) return &s;
    return nullptr;
}

namespace {

[[noreturn]] void malformed(size_t line_no, const std::string& why) {
    throw DataError("dataset line " + std::to_string(line_no) + ": " + why);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, LoadStats* stats) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path.string());

    Dataset ds;
    LoadStats st;
    std::vector<std::string> speaker_order;
    std::unordered_map<std::string, std::vector<Observation>> by_speaker;
    std::unordered_map<std::string, std::unordered_set<int>> seen_idx;

    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            malformed(line_no, std::string("JSON parse error: ") + e.what());
        }
        if (!j.is_object()) malformed(line_no, "expected a JSON object");
        for (const char* key : {"speaker_id", "seq_index", "embedding", "hours", "sex",
                                "age_group", "language"})
            if (!j.contains(key)) malformed(line_no, std::string("missing field ") + key);

        Observation obs;
        try {
            obs.speaker_id = j.at("speaker_id").get<std::string>();
            obs.seq_index = j.at("seq_index").get<int>();
            obs.embedding = j.at("embedding").get<std::vector<double>>();
            double hours = j.at("hours").get<double>();
            if (!std::isfinite(hours)) malformed(line_no, "non-finite hours");
            auto sex = parse_sex(j.at("sex").get<std::string>());
            auto age = parse_age_group(j.at("age_group").get<std::string>());
            auto lang = parse_language(j.at("language").get<std::string>());
            if (!sex || !age || !lang) malformed(line_no, "unknown demographic value");
            obs.demographics = Demographics{*sex, *age, *lang};
            if (hours < 0.0 || hours > 24.0) {
                // Mirrors the cleaning rule: out-of-range targets are dropped.
                ++st.n_dropped_out_of_range;
                continue;
            }
            obs.target = Target::from_hours(hours);
        } catch (const DataError&) {
            throw;
        } catch (const std::exception& e) {
            malformed(line_no, std::string("bad field: ") + e.what());
        }

        if (obs.seq_index < 0) malformed(line_no, "negative seq_index");
        for (double x : obs.embedding)
            if (!std::isfinite(x)) malformed(line_no, "non-finite embedding entry");
        if (ds.embedding_dim == 0) {
            ds.embedding_dim = int(obs.embedding.size());
            if (ds.embedding_dim == 0) malformed(line_no, "empty embedding");
        } else if (int(obs.embedding.size()) != ds.embedding_dim) {
            malformed(line_no, "embedding dimension " + std::to_string(obs.embedding.size()) +
                                   " != dataset dimension " + std::to_string(ds.embedding_dim));
        }
        if (!seen_idx[obs.speaker_id].insert(obs.seq_index).second)
            malformed(line_no, "duplicate (speaker_id, seq_index)");
        if (by_speaker.find(obs.speaker_id) == by_speaker.end())
            speaker_order.push_back(obs.speaker_id);
        by_speaker[obs.speaker_id].push_back(std::move(obs));
        ++st.n_loaded;
    }

    if (st.n_loaded == 0) throw DataError("empty dataset: " + path.string());

    for (const auto& id : speaker_order) {
        SpeakerSequence seq;
        seq.speaker_id = id;
        seq.observations = std::move(by_speaker[id]);
        std::sort(seq.observations.begin(), seq.observations.end(),
                  [](const Observation& a, const Observation& b) { return a.seq_index < b.seq_index; });
        // Renumber contiguously; gaps may exist after dropping records.
        for (size_t i = 0; i < seq.observations.size(); ++i) seq.observations[i].seq_index = int(i);
        ds.speakers.push_back(std::move(seq));
    }
    if (stats) *stats = st;
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    for (const auto& spk : ds.speakers) {
        for (const auto& obs : spk.observations) {
            ordered_json j;
            j["speaker_id"] = obs.speaker_id;
            j["seq_index"] = obs.seq_index;
            j["embedding"] = obs.embedding;
            j["hours"] = obs.target.hours;
            j["sex"] = to_string(obs.demographics.sex);
            j["age_group"] = to_string(obs.demographics.age_group);
            j["language"] = to_string(obs.demographics.language);
            out << j.dump() << '\n';
        }
    }
    if (!out) throw DataError("write failed: " + path.string());
}

uint64_t EvalPlan::ordering_seed(const std::string& speaker_id, int ordering_idx) const {
    return seed_of({ordering_base_seeds.at(size_t(ordering_idx)), fnv1a64(speaker_id)});
}

std::vector<int> EvalPlan::ordering_for(const SpeakerSequence& seq, int ordering_idx) const {
    Rng rng(ordering_seed(seq.speaker_id, ordering_idx));
    return rng.permutation(seq.length());
}

namespace {

// Exact split counts for ratios 70/10/20 by largest remainder; ties resolved
// in train, val, test order.
std::array<int, 3> split_counts(int n) {
    const double ratios[3] = {0.7, 0.1, 0.2};
    std::array<int, 3> counts{};
    double fracs[3];
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = ratios[i] * n;
        counts[size_t(i)] = int(std::floor(exact));
        fracs[i] = exact - counts[size_t(i)];
        assigned += counts[size_t(i)];
    }
    int leftover = n - assigned;
    while (leftover > 0) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (fracs[i] > fracs[best]) best = i;
        counts[size_t(best)] += 1;
        fracs[best] = -1.0;
        --leftover;
    }
    return counts;
}

}  // namespace

EvalPlan make_eval_plan(const Dataset& ds, int n_folds, int n_orderings, uint64_t seed) {
    const int n = int(ds.speakers.size());
    if (n_folds < 1 || n_orderings < 1) throw ContractError("make_eval_plan: bad fold/ordering count");
    if (n < n_folds * 10)
        throw ContractError("make_eval_plan: need at least " + std::to_string(n_folds * 10) +
                            " speakers, have " + std::to_string(n));

    EvalPlan plan;
    plan.seed = seed;
    plan.n_folds = n_folds;
    plan.n_orderings = n_orderings;
    for (int o = 0; o < n_orderings; ++o)
        plan.ordering_base_seeds.push_back(seed_of({seed, 0x0d5e, uint64_t(o)}));

    for (int f = 0; f < n_folds; ++f) {
        // Strata keyed by (sex, age_group); map order makes iteration stable.
        std::map<std::pair<int, int>, std::vector<int>> strata;
        for (int i = 0; i < n; ++i) {
            const auto& d = ds.speakers[size_t(i)].demographics();
            strata[{int(d.sex), int(d.age_group)}].push_back(i);
        }
        Rng rng(seed_of({seed, 0xf01d, uint64_t(f)}));
        std::vector<int> order;
        order.reserve(size_t(n));
        for (auto& [key, members] : strata) {
            rng.shuffle(members);
            order.insert(order.end(), members.begin(), members.end());
        }

        // Interleave split labels through the stratified order so each
        // stratum lands near-proportionally in every split while the global
        // counts stay exact.
        auto counts = split_counts(n);
        std::array<int, 3> assigned{};
        Fold fold;
        for (int pos = 0; pos < n; ++pos) {
            int best = -1;
            double best_deficit = -1e300;
            for (int s = 0; s < 3; ++s) {
                if (assigned[size_t(s)] >= counts[size_t(s)]) continue;
                double deficit = double(counts[size_t(s)]) * double(pos + 1) / double(n) -
                                 double(assigned[size_t(s)]);
                if (deficit > best_deficit) {
                    best_deficit = deficit;
                    best = s;
                }
            }
            int spk = order[size_t(pos)];
            if (best == 0) fold.train.push_back(spk);
            else if (best == 1) fold.val.push_back(spk);
            else fold.test.push_back(spk);
            assigned[size_t(best)] += 1;
        }
        std::sort(fold.train.begin(), fold.train.end());
        std::sort(fold.val.begin(), fold.val.end());
        std::sort(fold.test.begin(), fold.test.end());
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

void save_eval_plan(const EvalPlan& plan, const Dataset& ds, const std::filesystem::path& path) {
    ordered_json j;
    j["seed"] = plan.seed;
    j["n_folds"] = plan.n_folds;
    j["n_orderings"] = plan.n_orderings;
    j["ordering_base_seeds"] = plan.ordering_base_seeds;
    j["ordering_scheme"] = "xoshiro256++ Fisher-Yates, seed = mix(base_seed, fnv1a64(speaker_id))";
    ordered_json folds = ordered_json::array();
    auto ids = [&](const std::vector<int>& idxs) {
        std::vector<std::string> out;
        for (int i : idxs) out.push_back(ds.speakers[size_t(i)].speaker_id);
        return out;
    };
    for (const auto& f : plan.folds) {
        ordered_json fj;
        fj["train"] = ids(f.train);
        fj["val"] = ids(f.val);
        fj["test"] = ids(f.test);
        folds.push_back(std::move(fj));
    }
    j["folds"] = std::move(folds);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
}

std::pair<SupportSet, const Observation*> support_set_at(const SpeakerSequence& seq,
                                                         const std::vector<int>& ordering, int t) {
    if (int(ordering.size()) != seq.length())
        throw ContractError("support_set_at: ordering length mismatch");
    if (t < 0 || t >= seq.length()) throw ContractError("support_set_at: t out of range");
    SupportSet s;
    s.items.reserve(size_t(t));
    for (int i = 0; i < t; ++i) s.items.push_back(&seq.observations[size_t(ordering[size_t(i)])]);
    return {std::move(s), &seq.observations[size_t(ordering[size_t(t)])]};
}

}  // namespace fatbench::core
