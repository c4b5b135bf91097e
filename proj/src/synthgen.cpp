#include "fatbench/synthgen.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace fatbench::synthgen {

using ordered_json = nlohmann::ordered_json;

namespace {

double truncated_normal(double mu, double sigma, double lo, double hi, Rng& rng) {
    if (sigma == 0.0) return std::min(hi, std::max(lo, mu));
    for (;;) {
        double x = rng.normal(mu, sigma);
        if (x >= lo && x <= hi) return x;
    }
}

// Exact largest-remainder quota per category, shuffled: the cohort hits the
// target proportions within one speaker for every seed.
template <size_t N>
std::vector<int> quota_assignment(const std::array<double, N>& props, int n, Rng& rng) {
    std::array<int, N> counts{};
    std::array<double, N> fracs{};
    int assigned = 0;
    for (size_t i = 0; i < N; ++i) {
        double exact = props[i] * n;
        counts[i] = int(std::floor(exact));
        fracs[i] = exact - counts[i];
        assigned += counts[i];
    }
    while (assigned < n) {
        size_t best = 0;
        for (size_t i = 1; i < N; ++i)
            if (fracs[i] > fracs[best]) best = i;
        ++counts[best];
        fracs[best] = -1.0;
        ++assigned;
    }
    std::vector<int> labels;
    labels.reserve(size_t(n));
    for (size_t i = 0; i < N; ++i) labels.insert(labels.end(), size_t(counts[i]), int(i));
    rng.shuffle(labels);
    return labels;
}

template <size_t N>
void check_props(const std::array<double, N>& props, const char* what) {
    double sum = 0.0;
    for (double p : props) {
        if (p < 0.0) throw ContractError(std::string(what) + ": negative proportion");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ContractError(std::string(what) + ": proportions must sum to 1");
}

}  // namespace

double sample_tss(const TssMixture& dist, Rng& rng) {
    bool high = rng.uniform01() < dist.high_weight;
    return high ? truncated_normal(dist.high_mode, dist.high_sigma, 0.0, 24.0, rng)
                : truncated_normal(dist.low_mode, dist.low_sigma, 0.0, 24.0, rng);
}

bool GroupAttenuation::matches(const core::Demographics& d) const {
    if (field == "sex") return value == core::to_string(d.sex);
    if (field == "age_group") return value == core::to_string(d.age_group);
    if (field == "language") return value == core::to_string(d.language);
    return false;
}

void validate_spec(const CohortSpec& spec) {
    if (spec.n_speakers < 1) throw ContractError("CohortSpec: n_speakers < 1");
    if (spec.avg_samples < 1.0) throw ContractError("CohortSpec: avg_samples < 1");
    if (spec.embedding_dim < 1) throw ContractError("CohortSpec: embedding_dim < 1");
    if (spec.fatigue_direction_count < 1 || spec.fatigue_direction_count > spec.embedding_dim)
        throw ContractError("CohortSpec: fatigue_direction_count out of range");
    for (double s : {spec.speaker_offset_scale, spec.fatigue_signal_scale, spec.noise_scale,
                     spec.fatigue_scale_sigma, spec.noise_outlier_factor, spec.tss.low_sigma,
                     spec.tss.high_sigma})
        if (s < 0.0) throw ContractError("CohortSpec: negative scale");
    if (spec.noise_outlier_frac < 0.0 || spec.noise_outlier_frac > 1.0)
        throw ContractError("CohortSpec: noise_outlier_frac outside [0,1]");
    if (spec.tss.high_weight < 0.0 || spec.tss.high_weight > 1.0)
        throw ContractError("CohortSpec: tss.high_weight outside [0,1]");
    if (spec.attenuation.enabled() && spec.attenuation.factor < 0.0)
        throw ContractError("CohortSpec: negative attenuation factor");
    check_props(spec.sex_props, "sex_props");
    check_props(spec.age_props, "age_props");
    check_props(spec.lang_props, "lang_props");
}

core::EmbeddingVec embed_observation(const core::EmbeddingVec& speaker_offset, double hours,
                                     const CohortSpec& spec, Rng& rng, double slope_scale) {
    const int d = spec.embedding_dim;
    if (int(speaker_offset.size()) != d)
        throw ContractError("embed_observation: offset dimension mismatch");
    core::EmbeddingVec x = speaker_offset;
    const int k = spec.fatigue_direction_count;
    const double u = 1.0 / std::sqrt(double(k));
    const double signal = spec.fatigue_signal_scale * slope_scale * (hours - 8.0) / 6.0;
    for (int i = 0; i < k; ++i) x[size_t(i)] += signal * u;
    if (spec.noise_scale > 0.0) {
        double scale = spec.noise_scale;
        if (spec.noise_outlier_frac > 0.0 && rng.uniform01() < spec.noise_outlier_frac)
            scale *= spec.noise_outlier_factor;
        for (int i = 0; i < d; ++i) x[size_t(i)] += rng.normal(0.0, scale);
    }
    return x;
}

double speaker_slope_scale(const CohortSpec& spec, const core::Demographics& d, Rng& rng) {
    double sig = spec.fatigue_scale_sigma;
    double scale = sig > 0.0 ? std::exp(sig * rng.normal() - 0.5 * sig * sig) : 1.0;
    if (spec.attenuation.enabled() && spec.attenuation.matches(d)) scale *= spec.attenuation.factor;
    return scale;
}

core::Dataset generate_cohort(const CohortSpec& spec) {
    validate_spec(spec);
    core::Dataset ds;
    ds.embedding_dim = spec.embedding_dim;
    Rng rng(seed_of({spec.seed, 0xc0407}));

    auto sexes = quota_assignment(spec.sex_props, spec.n_speakers, rng);
    auto ages = quota_assignment(spec.age_props, spec.n_speakers, rng);
    auto langs = quota_assignment(spec.lang_props, spec.n_speakers, rng);

    int id_width = int(std::to_string(spec.n_speakers).size());
    for (int s = 0; s < spec.n_speakers; ++s) {
        core::SpeakerSequence seq;
        std::string num = std::to_string(s + 1);
        seq.speaker_id = "spk" + std::string(size_t(id_width) - num.size(), '0') + num;

        core::Demographics demo;
        demo.sex = core::Sex(sexes[size_t(s)]);
        demo.age_group = core::AgeGroup(ages[size_t(s)]);
        demo.language = core::Language(langs[size_t(s)]);

        int n_obs = 1 + rng.poisson(spec.avg_samples - 1.0);

        core::EmbeddingVec offset(size_t(spec.embedding_dim), 0.0);
        for (auto& o : offset) o = rng.normal(0.0, spec.speaker_offset_scale);
        double slope_scale = speaker_slope_scale(spec, demo, rng);

        for (int j = 0; j < n_obs; ++j) {
            core::Observation obs;
            obs.speaker_id = seq.speaker_id;
            obs.seq_index = j;
            double hours = sample_tss(spec.tss, rng);
            obs.target = core::Target::from_hours(hours);
            obs.embedding = embed_observation(offset, hours, spec, rng, slope_scale);
            obs.demographics = demo;
            seq.observations.push_back(std::move(obs));
        }
        ds.speakers.push_back(std::move(seq));
    }
    return ds;
}

std::string spec_to_json(const CohortSpec& spec) {
    ordered_json j;
    j["n_speakers"] = spec.n_speakers;
    j["avg_samples"] = spec.avg_samples;
    j["embedding_dim"] = spec.embedding_dim;
    j["speaker_offset_scale"] = spec.speaker_offset_scale;
    j["fatigue_direction_count"] = spec.fatigue_direction_count;
    j["fatigue_signal_scale"] = spec.fatigue_signal_scale;
    j["fatigue_scale_sigma"] = spec.fatigue_scale_sigma;
    j["noise_scale"] = spec.noise_scale;
    j["noise_outlier_frac"] = spec.noise_outlier_frac;
    j["noise_outlier_factor"] = spec.noise_outlier_factor;
    j["tss"] = {{"low_mode", spec.tss.low_mode},
                {"low_sigma", spec.tss.low_sigma},
                {"high_mode", spec.tss.high_mode},
                {"high_sigma", spec.tss.high_sigma},
                {"high_weight", spec.tss.high_weight}};
    j["sex_props"] = spec.sex_props;
    j["age_props"] = spec.age_props;
    j["lang_props"] = spec.lang_props;
    if (spec.attenuation.enabled()) {
        j["attenuation"] = {{"field", spec.attenuation.field},
                            {"value", spec.attenuation.value},
                            {"factor", spec.attenuation.factor}};
    }
    j["seed"] = spec.seed;
    return j.dump(2);
}

CohortSpec spec_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("cohort spec parse error: ") + e.what());
    }
    CohortSpec spec;
    try {
        if (j.contains("n_speakers")) spec.n_speakers = j["n_speakers"].get<int>();
        if (j.contains("avg_samples")) spec.avg_samples = j["avg_samples"].get<double>();
        if (j.contains("embedding_dim")) spec.embedding_dim = j["embedding_dim"].get<int>();
        if (j.contains("speaker_offset_scale"))
            spec.speaker_offset_scale = j["speaker_offset_scale"].get<double>();
        if (j.contains("fatigue_direction_count"))
            spec.fatigue_direction_count = j["fatigue_direction_count"].get<int>();
        if (j.contains("fatigue_signal_scale"))
            spec.fatigue_signal_scale = j["fatigue_signal_scale"].get<double>();
        if (j.contains("fatigue_scale_sigma"))
            spec.fatigue_scale_sigma = j["fatigue_scale_sigma"].get<double>();
        if (j.contains("noise_scale")) spec.noise_scale = j["noise_scale"].get<double>();
        if (j.contains("noise_outlier_frac"))
            spec.noise_outlier_frac = j["noise_outlier_frac"].get<double>();
        if (j.contains("noise_outlier_factor"))
            spec.noise_outlier_factor = j["noise_outlier_factor"].get<double>();
        if (j.contains("tss")) {
            const auto& t = j["tss"];
            if (t.contains("low_mode")) spec.tss.low_mode = t["low_mode"].get<double>();
            if (t.contains("low_sigma")) spec.tss.low_sigma = t["low_sigma"].get<double>();
            if (t.contains("high_mode")) spec.tss.high_mode = t["high_mode"].get<double>();
            if (t.contains("high_sigma")) spec.tss.high_sigma = t["high_sigma"].get<double>();
            if (t.contains("high_weight")) spec.tss.high_weight = t["high_weight"].get<double>();
        }
        if (j.contains("sex_props")) spec.sex_props = j["sex_props"].get<std::array<double, 3>>();
        if (j.contains("age_props")) spec.age_props = j["age_props"].get<std::array<double, 2>>();
        if (j.contains("lang_props")) spec.lang_props = j["lang_props"].get<std::array<double, 4>>();
        if (j.contains("attenuation")) {
            const auto& a = j["attenuation"];
            spec.attenuation.field = a.at("field").get<std::string>();
            spec.attenuation.value = a.at("value").get<std::string>();
            spec.attenuation.factor = a.at("factor").get<double>();
        }
        if (j.contains("seed")) spec.seed = j["seed"].get<uint64_t>();
    } catch (const std::exception& e) {
        throw DataError(std::string("cohort spec: bad field: ") + e.what());
    }
    validate_spec(spec);
    return spec;
}

void save_spec_sidecar(const CohortSpec& spec, const std::filesystem::path& dataset_path) {
    std::filesystem::path side = dataset_path;
    side += ".spec.json";
    std::ofstream out(side);
    if (!out) throw DataError("cannot open for writing: " + side.string());
    out << spec_to_json(spec) << '\n';
}

}  // namespace fatbench::synthgen
