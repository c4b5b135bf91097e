#pragma once

#include <cstdint>
#include <vector>

#include "fatbench/core.hpp"
#include "fatbench/linmodels.hpp"

namespace fatbench::distmod {

// Within-speaker difference pairs: feature x_t - x_j, target y_t - y_j.
struct PairSet {
    nk::Tensor X;
    std::vector<double> dy;
};

// All ordered within-speaker pairs (j != t), capped per speaker by a uniform
// random subset. Never pairs across speakers.
PairSet build_pairs(const std::vector<const core::SpeakerSequence*>& speakers,
                    int cap_per_speaker, Rng& rng);

struct DistanceModel {
    linmod::RidgeModel f_d;       // difference model, alpha=1000, no intercept
    linmod::RidgeModel fallback;  // cross-sectional hours model, used at t=0
    int pair_cap = 200;
    uint64_t pair_seed = 0;

    // t=0 -> fallback(x_t); otherwise mean over j of y_j + f_d(x_t - x_j),
    // clamped to [0,24].
    double predict(const core::SupportSet& support, std::span<const double> x_t) const;
};

inline constexpr double kDistAlpha = 1000.0;

linmod::RidgeModel fit_distance(const PairSet& pairs, double alpha = kDistAlpha);

DistanceModel train_distance_model(const std::vector<const core::SpeakerSequence*>& train_speakers,
                                   linmod::RidgeModel fallback, int cap_per_speaker,
                                   uint64_t seed);

}  // namespace fatbench::distmod
