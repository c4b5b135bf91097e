#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "fatbench/core.hpp"
#include "fatbench/rng.hpp"

namespace fatbench::synthgen {

// Two-component truncated-normal mixture on [0,24] with modes at the pre-
// and post-shift peaks. Defaults are calibrated so large samples land on the
// published marginals: ~45.4% of draws >= 10h, mean ~8h, std ~6h.
struct TssMixture {
    double low_mode = 1.0;
    double low_sigma = 3.0;
    double high_mode = 15.0;
    double high_sigma = 2.0;
    double high_weight = 0.4557;
};

double sample_tss(const TssMixture& dist, Rng& rng);

// Optional per-group attenuation of the fatigue response, used to inject a
// known bias for the fairness machinery. Empty field = no attenuation.
struct GroupAttenuation {
    std::string field;  // "sex" | "age_group" | "language"
    std::string value;  // e.g. "Female"
    double factor = 1.0;

    bool enabled() const { return !field.empty(); }
    bool matches(const core::Demographics& d) const;
};

struct CohortSpec {
    int n_speakers = 1185;
    double avg_samples = 8.7;
    int embedding_dim = 32;
    double speaker_offset_scale = 2.5;  // per-speaker embedding offset scale
    int fatigue_direction_count = 8;    // coordinates spanned by the fatigue direction
    double fatigue_signal_scale = 1.0;  // population-level response slope
    double fatigue_scale_sigma = 0.5;   // lognormal sigma of per-speaker slope scaling
    double noise_scale = 0.9;           // isotropic observation noise (base scale)
    // Contaminated-normal noise: a fraction of observations (think corrupted
    // recordings) get noise_outlier_factor times the base scale.
    double noise_outlier_frac = 0.15;
    double noise_outlier_factor = 4.0;
    TssMixture tss;
    std::array<double, 3> sex_props{0.551, 0.446, 0.003};   // Female/Male/Other
    std::array<double, 2> age_props{0.789, 0.211};          // Under40/Over40
    std::array<double, 4> lang_props{0.592, 0.226, 0.143, 0.039};  // GB/US/es/eng-other
    GroupAttenuation attenuation;
    uint64_t seed = 20240501;
};

void validate_spec(const CohortSpec& spec);

// x = offset + slope * (hours - 8)/6 * u + noise, where u is the unit vector
// spread over the first fatigue_direction_count coordinates and slope =
// fatigue_signal_scale * slope_scale.
core::EmbeddingVec embed_observation(const core::EmbeddingVec& speaker_offset, double hours,
                                     const CohortSpec& spec, Rng& rng, double slope_scale = 1.0);

// Mean-one lognormal per-speaker slope multiplier, times any group attenuation.
double speaker_slope_scale(const CohortSpec& spec, const core::Demographics& d, Rng& rng);

core::Dataset generate_cohort(const CohortSpec& spec);

std::string spec_to_json(const CohortSpec& spec);
CohortSpec spec_from_json(const std::string& text);
void save_spec_sidecar(const CohortSpec& spec, const std::filesystem::path& dataset_path);

}  // namespace fatbench::synthgen
