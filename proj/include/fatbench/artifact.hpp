#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fatbench/distmodel.hpp"
#include "fatbench/ictransformer.hpp"
#include "fatbench/linmodels.hpp"
#include "fatbench/protonet.hpp"
#include "fatbench/tensor.hpp"

namespace fatbench::artifact {

inline constexpr int kFormatVersion = 1;

// On disk: one JSON header line (format, version, family, config + digest,
// parameter layout), then the raw little-endian f64 parameter payload.
// Round-trips are bit-exact.
struct Artifact {
    int version = kFormatVersion;
    std::string family;  // cs | me | dist | proto | tr
    std::string task;    // regression | classification
    int embedding_dim = 0;
    uint64_t seed = 0;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
    std::vector<std::pair<std::string, nk::Tensor>> params;

    const nk::Tensor& param(const std::string& name) const;
};

std::string config_digest(const nlohmann::ordered_json& config);

void save_artifact(const Artifact& a, const std::filesystem::path& path);
// Rejects unknown format versions and headers whose digest does not match
// the embedded config.
Artifact load_artifact(const std::filesystem::path& path);

// FNV-1a over a file's bytes, hex-encoded; used by run manifests.
std::string file_digest(const std::filesystem::path& path);

Artifact pack_cs_regression(const linmod::RidgeModel& m, int embedding_dim, uint64_t seed);
Artifact pack_cs_classifier(const linmod::LogisticModel& m, int embedding_dim, uint64_t seed);
Artifact pack_me(double alpha, const std::string& task, int embedding_dim, uint64_t seed);
Artifact pack_dist(const distmod::DistanceModel& m, const std::string& task, int embedding_dim,
                   uint64_t seed, double threshold);
Artifact pack_proto(const protonet::ProjectionNet& net, int embedding_dim, uint64_t seed,
                    double threshold);
Artifact pack_tr(const ictr::TransformerModel& m, const std::string& task, uint64_t seed,
                 double threshold);

linmod::RidgeModel unpack_cs_regression(const Artifact& a);
linmod::LogisticModel unpack_cs_classifier(const Artifact& a);
distmod::DistanceModel unpack_dist(const Artifact& a);
protonet::ProjectionNet unpack_proto(const Artifact& a);
ictr::TransformerModel unpack_tr(const Artifact& a);

}  // namespace fatbench::artifact
