#include "fatbench/artifact.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fatbench/rng.hpp"

namespace fatbench::artifact {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_doubles_le(std::ofstream& out, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
    } else {
        for (double x : v) {
            uint64_t bits;
            std::memcpy(&bits, &x, 8);
            char b[8];
            for (int i = 0; i < 8; ++i) b[i] = char((bits >> (8 * i)) & 0xff);
            out.write(b, 8);
        }
    }
}

void read_doubles_le(std::ifstream& in, std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * 8));
    } else {
        for (auto& x : v) {
            char b[8];
            in.read(b, 8);
            uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= uint64_t(uint8_t(b[i])) << (8 * i);
            std::memcpy(&x, &bits, 8);
        }
    }
}

void require_family(const Artifact& a, const char* family) {
    if (a.family != family)
        throw DataError("artifact: expected family '" + std::string(family) + "', found '" +
                        a.family + "'");
}

}  // namespace

const nk::Tensor& Artifact::param(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    throw DataError("artifact: missing parameter '" + name + "'");
}

std::string config_digest(const ordered_json& config) { return hex64(fnv1a64(config.dump())); }

void save_artifact(const Artifact& a, const std::filesystem::path& path) {
    ordered_json header;
    header["format"] = "fatbench-artifact";
    header["version"] = a.version;
    header["family"] = a.family;
    header["task"] = a.task;
    header["embedding_dim"] = a.embedding_dim;
    header["seed"] = a.seed;
    header["config"] = a.config;
    header["config_digest"] = config_digest(a.config);
    header["extra"] = a.extra;
    ordered_json plist = ordered_json::array();
    for (const auto& [name, t] : a.params)
        plist.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
    header["params"] = std::move(plist);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << header.dump() << '\n';
    for (const auto& [name, t] : a.params) write_doubles_le(out, t.v);
    if (!out) throw DataError("write failed: " + path.string());
}

Artifact load_artifact(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open artifact: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("artifact: empty file: " + path.string());
    ordered_json header;
    try {
        header = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw DataError(std::string("artifact: bad header: ") + e.what());
    }
    if (header.value("format", "") != "fatbench-artifact")
        throw DataError("artifact: not a fatbench artifact: " + path.string());
    int version = header.value("version", -1);
    if (version != kFormatVersion)
        throw DataError("artifact: unsupported format version " + std::to_string(version) +
                        " (this build reads version " + std::to_string(kFormatVersion) + ")");

    Artifact a;
    a.version = version;
    a.family = header.at("family").get<std::string>();
    a.task = header.value("task", "");
    a.embedding_dim = header.value("embedding_dim", 0);
    a.seed = header.value("seed", uint64_t(0));
    a.config = header.value("config", ordered_json::object());
    a.extra = header.value("extra", ordered_json::object());
    std::string digest = header.value("config_digest", "");
    if (digest != config_digest(a.config))
        throw DataError("artifact: config digest mismatch in " + path.string());

    for (const auto& p : header.at("params")) {
        int rows = p.at("rows").get<int>();
        int cols = p.at("cols").get<int>();
        nk::Tensor t(rows, cols);
        read_doubles_le(in, t.v);
        if (!in) throw DataError("artifact: truncated parameter payload in " + path.string());
        a.params.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
    return a;
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for digest: " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= uint8_t(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    return hex64(h);
}

namespace {

nk::Tensor row_tensor(const std::vector<double>& v) {
    nk::Tensor t(1, int(v.size()));
    t.v = v;
    return t;
}

void pack_ridge_into(Artifact& a, const std::string& prefix, const linmod::RidgeModel& m) {
    a.params.emplace_back(prefix + "weights", row_tensor(m.weights));
    a.params.emplace_back(prefix + "intercept", row_tensor({m.intercept}));
    a.config[prefix + "alpha"] = m.alpha;
    a.config[prefix + "with_intercept"] = m.with_intercept;
}

linmod::RidgeModel unpack_ridge_from(const Artifact& a, const std::string& prefix) {
    linmod::RidgeModel m;
    m.weights = a.param(prefix + "weights").v;
    m.intercept = a.param(prefix + "intercept").v.at(0);
    m.alpha = a.config.at(prefix + "alpha").get<double>();
    m.with_intercept = a.config.at(prefix + "with_intercept").get<bool>();
    return m;
}

}  // namespace

Artifact pack_cs_regression(const linmod::RidgeModel& m, int embedding_dim, uint64_t seed) {
    Artifact a;
    a.family = "cs";
    a.task = "regression";
    a.embedding_dim = embedding_dim;
    a.seed = seed;
    pack_ridge_into(a, "", m);
    return a;
}

linmod::RidgeModel unpack_cs_regression(const Artifact& a) {
    require_family(a, "cs");
    if (a.task != "regression") throw DataError("artifact: cs task mismatch");
    return unpack_ridge_from(a, "");
}

Artifact pack_cs_classifier(const linmod::LogisticModel& m, int embedding_dim, uint64_t seed) {
    Artifact a;
    a.family = "cs";
    a.task = "classification";
    a.embedding_dim = embedding_dim;
    a.seed = seed;
    a.params.emplace_back("weights", row_tensor(m.weights));
    a.params.emplace_back("intercept", row_tensor({m.intercept}));
    a.config["inv_reg"] = m.inv_reg;
    a.extra["threshold"] = m.threshold;
    return a;
}

linmod::LogisticModel unpack_cs_classifier(const Artifact& a) {
    require_family(a, "cs");
    if (a.task != "classification") throw DataError("artifact: cs task mismatch");
    linmod::LogisticModel m;
    m.weights = a.param("weights").v;
    m.intercept = a.param("intercept").v.at(0);
    m.inv_reg = a.config.at("inv_reg").get<double>();
    m.threshold = a.extra.value("threshold", 0.5);
    return m;
}

Artifact pack_me(double alpha, const std::string& task, int embedding_dim, uint64_t seed) {
    Artifact a;
    a.family = "me";
    a.task = task;
    a.embedding_dim = embedding_dim;
    a.seed = seed;
    a.config["alpha"] = alpha;
    return a;
}

Artifact pack_dist(const distmod::DistanceModel& m, const std::string& task, int embedding_dim,
                   uint64_t seed, double threshold) {
    Artifact a;
    a.family = "dist";
    a.task = task;
    a.embedding_dim = embedding_dim;
    a.seed = seed;
    pack_ridge_into(a, "fd_", m.f_d);
    pack_ridge_into(a, "cs_", m.fallback);
    a.config["pair_cap"] = m.pair_cap;
    a.config["pair_seed"] = m.pair_seed;
    a.extra["threshold"] = threshold;
    return a;
}

distmod::DistanceModel unpack_dist(const Artifact& a) {
    require_family(a, "dist");
    distmod::DistanceModel m;
    m.f_d = unpack_ridge_from(a, "fd_");
    m.fallback = unpack_ridge_from(a, "cs_");
    m.pair_cap = a.config.at("pair_cap").get<int>();
    m.pair_seed = a.config.at("pair_seed").get<uint64_t>();
    return m;
}

namespace {

const char* kProtoParamNames[6] = {"W1", "b1", "W2", "b2", "W3", "b3"};

ordered_json proto_config_json(const protonet::ProtoConfig& c) {
    return {{"in_dim", c.in_dim},       {"hidden_dim", c.hidden_dim},
            {"out_dim", c.out_dim},     {"episodes", c.episodes},
            {"lr", c.lr},               {"support_min", c.support_min},
            {"support_max", c.support_max}, {"eval_every", c.eval_every},
            {"patience", c.patience},   {"val_episodes", c.val_episodes},
            {"seed", c.seed}};
}

protonet::ProtoConfig proto_config_from(const ordered_json& j) {
    protonet::ProtoConfig c;
    c.in_dim = j.at("in_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.out_dim = j.at("out_dim").get<int>();
    c.episodes = j.at("episodes").get<int>();
    c.lr = j.at("lr").get<double>();
    c.support_min = j.at("support_min").get<int>();
    c.support_max = j.at("support_max").get<int>();
    c.eval_every = j.at("eval_every").get<int>();
    c.patience = j.at("patience").get<int>();
    c.val_episodes = j.at("val_episodes").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

ordered_json tr_config_json(const ictr::TransformerConfig& c) {
    return {{"n_layers", c.n_layers},       {"n_heads", c.n_heads},
            {"model_dim", c.model_dim},     {"max_seq_tokens", c.max_seq_tokens},
            {"embedding_dim", c.embedding_dim}, {"label_targets", c.label_targets},
            {"aug_noise_std", c.aug_noise_std},
            {"lr", c.lr},                   {"steps", c.steps},
            {"grad_clip", c.grad_clip},     {"eval_every", c.eval_every},
            {"patience", c.patience},       {"seed", c.seed}};
}

ictr::TransformerConfig tr_config_from(const ordered_json& j) {
    ictr::TransformerConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.max_seq_tokens = j.at("max_seq_tokens").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.label_targets = j.value("label_targets", false);
    c.aug_noise_std = j.at("aug_noise_std").get<double>();
    c.lr = j.at("lr").get<double>();
    c.steps = j.at("steps").get<int>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.eval_every = j.at("eval_every").get<int>();
    c.patience = j.at("patience").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

Artifact pack_proto(const protonet::ProjectionNet& net, int embedding_dim, uint64_t seed,
                    double threshold) {
    Artifact a;
    a.family = "proto";
    a.task = "classification";
    a.embedding_dim = embedding_dim;
    a.seed = seed;
    a.config["proto"] = proto_config_json(net.cfg);
    a.extra["threshold"] = threshold;
    for (size_t i = 0; i < net.params.size(); ++i)
        a.params.emplace_back(kProtoParamNames[i], net.params[i]);
    return a;
}

protonet::ProjectionNet unpack_proto(const Artifact& a) {
    require_family(a, "proto");
    protonet::ProjectionNet net;
    net.cfg = proto_config_from(a.config.at("proto"));
    for (const char* name : kProtoParamNames) net.params.push_back(a.param(name));
    return net;
}

Artifact pack_tr(const ictr::TransformerModel& m, const std::string& task, uint64_t seed,
                 double threshold) {
    Artifact a;
    a.family = "tr";
    a.task = task;
    a.embedding_dim = m.cfg.embedding_dim;
    a.seed = seed;
    a.config["tr"] = tr_config_json(m.cfg);
    a.extra["threshold"] = threshold;
    ordered_json log = ordered_json::array();
    for (const auto& [step, loss] : m.training_log) log.push_back({{"step", step}, {"val_loss", loss}});
    a.extra["training_log"] = std::move(log);
    for (size_t i = 0; i < m.params.size(); ++i)
        a.params.emplace_back("p" + std::to_string(i), m.params[i]);
    return a;
}

ictr::TransformerModel unpack_tr(const Artifact& a) {
    require_family(a, "tr");
    ictr::TransformerModel m;
    m.cfg = tr_config_from(a.config.at("tr"));
    for (size_t i = 0; i < a.params.size(); ++i) {
        const auto& [name, t] = a.params[i];
        if (name != "p" + std::to_string(i)) throw DataError("artifact: tr parameter order");
        m.params.push_back(t);
    }
    if (a.extra.contains("training_log"))
        for (const auto& e : a.extra.at("training_log"))
            m.training_log.emplace_back(e.at("step").get<int>(), e.at("val_loss").get<double>());
    return m;
}

}  // namespace fatbench::artifact
