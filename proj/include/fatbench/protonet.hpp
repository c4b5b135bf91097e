#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <optional>
#include <vector>

#include "fatbench/core.hpp"
#include "fatbench/graph.hpp"
#include "fatbench/optim.hpp"

namespace fatbench::protonet {

struct ProtoConfig {
    int in_dim = 32;
    int hidden_dim = 32;
    int out_dim = 64;
    int episodes = 5000;
    double lr = 1e-3;
    int support_min = 2;
    int support_max = 8;
    int eval_every = 250;
    int patience = 10;
    int val_episodes = 200;
    uint64_t seed = 1;
};

// Projection g: three linear layers, ReLU after the first two,
// in_dim -> hidden -> hidden -> out_dim.
struct ProjectionNet {
    ProtoConfig cfg;
    std::vector<nk::Tensor> params;  // W1,b1,W2,b2,W3,b3

    // Rows of X projected to out_dim.
    nk::Tensor project(const nk::Tensor& X) const;
    std::vector<double> project_one(std::span<const double> x) const;
};

ProjectionNet init_projection(const ProtoConfig& cfg, Rng& rng);

struct Prototypes {
    std::array<bool, 2> present{false, false};
    std::array<std::vector<double>, 2> c;  // class means in projection space
    bool both() const { return present[0] && present[1]; }
};

// Class means of projected support members; classes absent from the support
// yield no prototype.
Prototypes compute_prototypes(const ProjectionNet& net, const core::SupportSet& support);

// p(fatigued) from softmax over negative squared Euclidean distances.
// Requires both prototypes.
double classify(const ProjectionNet& net, const Prototypes& protos, std::span<const double> x);

// Support-set wrapper used by the harness: nullopt when a class prototype is
// missing (recorded as a skip).
std::optional<double> predict(const ProjectionNet& net, const core::SupportSet& support,
                              std::span<const double> x);

// Episode loss as a graph, with parameters registered in net order; exposed
// for the finite-difference gradient check.
nk::Graph::Id episode_loss_graph(nk::Graph& g, const std::vector<nk::Graph::Id>& params,
                                 const nk::Tensor& support0, const nk::Tensor& support1,
                                 const nk::Tensor& queries, const std::vector<int>& labels);

// Episodic training with early stopping on validation episode AUC. Eligible
// speakers need >= 4 observations covering both classes.
ProjectionNet train_episodic(const std::vector<const core::SpeakerSequence*>& train_speakers,
                             const std::vector<const core::SpeakerSequence*>& val_speakers,
                             const ProtoConfig& cfg);

}  // namespace fatbench::protonet
