#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fatbench/errors.hpp"
#include "fatbench/rng.hpp"

namespace fatbench::core {

using EmbeddingVec = std::vector<double>;

enum class Sex { Female, Male, Other };
enum class AgeGroup { Under40, Over40 };
enum class Language { GB, US, Es, EngOther };

const char* to_string(Sex s);
const char* to_string(AgeGroup a);
const char* to_string(Language l);
std::optional<Sex> parse_sex(const std::string& s);
std::optional<AgeGroup> parse_age_group(const std::string& s);
std::optional<Language> parse_language(const std::string& s);

struct Demographics {
    Sex sex = Sex::Female;
    AgeGroup age_group = AgeGroup::Under40;
    Language language = Language::GB;

    bool operator==(const Demographics&) const = default;
};

// Fatigued means >= 10 hours since sleep.
int binarize(double hours);

struct Target {
    double hours = 0.0;
    int label = 0;

    static Target from_hours(double h) { return Target{h, binarize(h)}; }
    bool operator==(const Target&) const = default;
};

struct Observation {
    std::string speaker_id;
    int seq_index = 0;
    EmbeddingVec embedding;
    Target target;
    Demographics demographics;
};

struct SpeakerSequence {
    std::string speaker_id;
    std::vector<Observation> observations;  // seq_index contiguous from 0

    int length() const { return int(observations.size()); }
    const Demographics& demographics() const { return observations.front().demographics; }
};

// Prefix view over one speaker's ordered history; items point into the
// owning Dataset and stay valid as long as it does.
struct SupportSet {
    std::vector<const Observation*> items;

    size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

struct Dataset {
    std::vector<SpeakerSequence> speakers;
    int embedding_dim = 0;

    size_t n_observations() const;
    const SpeakerSequence* find_speaker(const std::string& id) const;
};

struct LoadStats {
    size_t n_loaded = 0;
    size_t n_dropped_out_of_range = 0;
};

// JSONL, one observation per line. Records with hours outside [0,24] are
// dropped and counted; per-speaker sequences are sorted by their original
// seq_index and renumbered contiguously from 0.
Dataset load_dataset(const std::filesystem::path& path, LoadStats* stats = nullptr);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

struct Fold {
    std::vector<int> train, val, test;  // indices into Dataset::speakers
};

struct EvalPlan {
    uint64_t seed = 0;
    int n_folds = 0;
    int n_orderings = 0;
    std::vector<Fold> folds;
    std::vector<uint64_t> ordering_base_seeds;

    int n_iterations() const { return n_folds * n_orderings; }
    uint64_t ordering_seed(const std::string& speaker_id, int ordering_idx) const;
    // Permutation of 0..len-1 for the given speaker under one ordering.
    std::vector<int> ordering_for(const SpeakerSequence& seq, int ordering_idx) const;
};

// Speaker-stratified train/val/test splits (70/10/20, exact via largest
// remainder, stratified by sex x age_group) with per-speaker orderings.
// Deterministic given seed.
EvalPlan make_eval_plan(const Dataset& ds, int n_folds, int n_orderings, uint64_t seed);

void save_eval_plan(const EvalPlan& plan, const Dataset& ds, const std::filesystem::path& path);

// Support set = first t observations under the ordering; query = the
// (t+1)-th. Requires 0 <= t < sequence length.
std::pair<SupportSet, const Observation*> support_set_at(const SpeakerSequence& seq,
                                                         const std::vector<int>& ordering, int t);

}  // namespace fatbench::core
