#include "fatbench/distmodel.hpp"

#include <algorithm>

#include "fatbench/kernels.hpp"

namespace fatbench::distmod {

PairSet build_pairs(const std::vector<const core::SpeakerSequence*>& speakers,
                    int cap_per_speaker, Rng& rng) {
    if (speakers.empty()) throw ContractError("build_pairs: no speakers");
    int dim = 0;
    for (const auto* s : speakers)
        if (s->length() > 0) {
            dim = int(s->observations.front().embedding.size());
            break;
        }

    std::vector<std::pair<const core::Observation*, const core::Observation*>> kept;  // (t, j)
    std::vector<std::pair<int, int>> idx;
    for (const auto* spk : speakers) {
        const int n = spk->length();
        if (n < 2) continue;
        idx.clear();
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < n; ++j)
                if (j != t) idx.emplace_back(t, j);
        if (cap_per_speaker > 0 && int(idx.size()) > cap_per_speaker) {
            rng.shuffle(idx);
            idx.resize(size_t(cap_per_speaker));
        }
        for (auto [t, j] : idx)
            kept.emplace_back(&spk->observations[size_t(t)], &spk->observations[size_t(j)]);
    }

    PairSet ps;
    ps.X = nk::Tensor(int(kept.size()), dim);
    ps.dy.resize(kept.size());
    for (size_t r = 0; r < kept.size(); ++r) {
        const auto& xt = kept[r].first->embedding;
        const auto& xj = kept[r].second->embedding;
        double* row = ps.X.row(int(r));
        for (int c = 0; c < dim; ++c) row[c] = xt[size_t(c)] - xj[size_t(c)];
        ps.dy[r] = kept[r].first->target.hours - kept[r].second->target.hours;
    }
    return ps;
}

linmod::RidgeModel fit_distance(const PairSet& pairs, double alpha) {
    if (pairs.X.rows == 0) throw ContractError("fit_distance: no pairs");
    // No intercept: identical embeddings must predict a zero difference.
    return linmod::ridge_fit(pairs.X, pairs.dy, alpha, false);
}

double DistanceModel::predict(const core::SupportSet& support, std::span<const double> x_t) const {
    if (support.empty()) return fallback.predict(x_t);
    const size_t d = x_t.size();
    std::vector<double> diff(d);
    double acc = 0.0;
    for (const auto* obs : support.items) {
        for (size_t c = 0; c < d; ++c) diff[c] = x_t[c] - obs->embedding[c];
        acc += obs->target.hours + f_d.predict(diff);
    }
    double pred = acc / double(support.size());
    return std::clamp(pred, 0.0, 24.0);
}

DistanceModel train_distance_model(const std::vector<const core::SpeakerSequence*>& train_speakers,
                                   linmod::RidgeModel fallback, int cap_per_speaker,
                                   uint64_t seed) {
    Rng rng(seed_of({seed, 0xd157}));
    PairSet pairs = build_pairs(train_speakers, cap_per_speaker, rng);
    DistanceModel m;
    m.f_d = fit_distance(pairs);
    m.fallback = std::move(fallback);
    m.pair_cap = cap_per_speaker;
    m.pair_seed = seed;
    return m;
}

}  // namespace fatbench::distmod
