#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fatbench/core.hpp"
#include "fatbench/graph.hpp"
#include "fatbench/optim.hpp"

namespace fatbench::ictr {

struct TransformerConfig {
    int n_layers = 4;
    int n_heads = 4;
    int model_dim = 64;
    int max_seq_tokens = 64;
    int embedding_dim = 32;       // d; token width before input projection
    bool label_targets = false;   // feed {0,1} labels instead of hours as y
    double aug_noise_std = 0.1;   // target augmentation noise
    double lr = 1e-3;
    int steps = 3000;
    double grad_clip = 1.0;
    int eval_every = 150;
    int patience = 10;
    uint64_t seed = 1;

    int head_dim() const { return model_dim / n_heads; }
    // Longest usable speaker prefix: 2k+1 tokens fit max_seq_tokens.
    int max_support() const { return (max_seq_tokens - 1) / 2; }
};

TransformerConfig desk_config(int embedding_dim);
// Full-scale named preset (15 layers, 8 heads).
TransformerConfig full_config(int embedding_dim);

void validate_config(const TransformerConfig& cfg);

// Interleaved [x0, y0', x1, y1', ..., xt] token matrix; odd rows are
// augmented targets, scored rows are the x-token rows (one prediction per x).
struct TokenSequence {
    nk::Tensor tokens;          // (2t+1) x d
    std::vector<int> positions;  // 0..2t
    std::vector<int> scored;     // row indices of x tokens
};

// d independent draws from N(y, noise_std^2).
core::EmbeddingVec augment_target(double y, int d, double noise_std, Rng& rng);

// Sequence for a support set plus query embedding; support targets are the
// hours, or the {0,1} labels when label_targets is set. Throws when the
// token count would exceed max_tokens; truncation policy lives in predict().
TokenSequence build_sequence(const core::SupportSet& support, std::span<const double> x_t,
                             double noise_std, int max_tokens, Rng& rng,
                             bool label_targets = false);

struct TransformerModel {
    TransformerConfig cfg;
    std::vector<nk::Tensor> params;
    std::vector<std::pair<int, double>> training_log;  // (step, val loss)

    // Per-position predicted target vectors, causal attention throughout.
    nk::Tensor forward(const TokenSequence& seq) const;

    // Readout at the final position: mean over the d predicted components.
    // Support targets are re-noised from rng (matches the training
    // distribution); oversized supports are truncated to the most recent
    // pairs that fit.
    double predict_score(const core::SupportSet& support, std::span<const double> x_t,
                         Rng& rng) const;
    // predict_score clamped to the [0,24] target range.
    double predict_hours(const core::SupportSet& support, std::span<const double> x_t,
                         Rng& rng) const;
};

TransformerModel init_model(const TransformerConfig& cfg, Rng& rng);

// Graph forward over already-built tokens; exposed for gradient checks.
nk::Graph::Id forward_graph(nk::Graph& g, const std::vector<nk::Graph::Id>& params,
                            const TransformerConfig& cfg, const nk::Tensor& tokens,
                            const std::vector<int>& positions);

// Loss over scored rows only: mean over scored positions of the mean per-
// dimension squared error against the augmented targets.
nk::Graph::Id sequence_loss_graph(nk::Graph& g, const std::vector<nk::Graph::Id>& params,
                                  const TransformerConfig& cfg, const TokenSequence& seq,
                                  const nk::Tensor& targets);

// One speaker sequence plus the ordering it is consumed under. The target
// encoding (hours vs labels) comes from TransformerConfig::label_targets.
struct SeqView {
    const core::SpeakerSequence* speaker = nullptr;
    std::vector<int> ordering;
};

// Adam on per-speaker sequences with fresh target augmentation each step and
// early stopping on a fixed-augmentation validation loss.
TransformerModel train(const std::vector<SeqView>& train_seqs,
                       const std::vector<SeqView>& val_seqs, const TransformerConfig& cfg);

}  // namespace fatbench::ictr
