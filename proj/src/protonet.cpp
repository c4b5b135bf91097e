#include "fatbench/protonet.hpp"

#include <algorithm>
#include <cmath>

#include "fatbench/kernels.hpp"
#include "fatbench/metrics.hpp"

namespace fatbench::protonet {

namespace {

nk::Tensor linear_init(int in, int out, Rng& rng) {
    nk::Tensor w(in, out);
    double s = std::sqrt(2.0 / double(in));
    for (auto& e : w.v) e = rng.normal(0.0, s);
    return w;
}

nk::Tensor rows_tensor(const std::vector<const core::Observation*>& obs) {
    if (obs.empty()) return nk::Tensor(0, 0);
    nk::Tensor t(int(obs.size()), int(obs.front()->embedding.size()));
    for (size_t i = 0; i < obs.size(); ++i)
        std::copy(obs[i]->embedding.begin(), obs[i]->embedding.end(), t.row(int(i)));
    return t;
}

}  // namespace

ProjectionNet init_projection(const ProtoConfig& cfg, Rng& rng) {
    ProjectionNet net;
    net.cfg = cfg;
    net.params.push_back(linear_init(cfg.in_dim, cfg.hidden_dim, rng));
    net.params.push_back(nk::Tensor(1, cfg.hidden_dim));
    net.params.push_back(linear_init(cfg.hidden_dim, cfg.hidden_dim, rng));
    net.params.push_back(nk::Tensor(1, cfg.hidden_dim));
    net.params.push_back(linear_init(cfg.hidden_dim, cfg.out_dim, rng));
    net.params.push_back(nk::Tensor(1, cfg.out_dim));
    return net;
}

nk::Tensor ProjectionNet::project(const nk::Tensor& X) const {
    auto dense = [&](const nk::Tensor& in, const nk::Tensor& w, const nk::Tensor& b) {
        nk::Tensor out(in.rows, w.cols);
        kern::matmul_nn(in.data(), w.data(), out.data(), size_t(in.rows), size_t(in.cols),
                        size_t(w.cols));
        for (int i = 0; i < out.rows; ++i) {
            double* oi = out.row(i);
            for (int j = 0; j < out.cols; ++j) oi[j] += b.v[size_t(j)];
        }
        return out;
    };
    nk::Tensor h = dense(X, params[0], params[1]);
    for (auto& e : h.v) e = e > 0.0 ? e : 0.0;
    h = dense(h, params[2], params[3]);
    for (auto& e : h.v) e = e > 0.0 ? e : 0.0;
    return dense(h, params[4], params[5]);
}

std::vector<double> ProjectionNet::project_one(std::span<const double> x) const {
    nk::Tensor in(1, int(x.size()));
    std::copy(x.begin(), x.end(), in.row(0));
    nk::Tensor out = project(in);
    return out.v;
}

Prototypes compute_prototypes(const ProjectionNet& net, const core::SupportSet& support) {
    if (support.empty()) return {};
    nk::Tensor proj = net.project(rows_tensor(support.items));
    Prototypes p;
    std::array<int, 2> counts{0, 0};
    for (auto& c : p.c) c.assign(size_t(proj.cols), 0.0);
    for (size_t i = 0; i < support.items.size(); ++i) {
        int k = support.items[i]->target.label;
        ++counts[size_t(k)];
        const double* row = proj.row(int(i));
        for (int j = 0; j < proj.cols; ++j) p.c[size_t(k)][size_t(j)] += row[j];
    }
    for (int k = 0; k < 2; ++k) {
        if (counts[size_t(k)] > 0) {
            p.present[size_t(k)] = true;
            for (auto& e : p.c[size_t(k)]) e /= counts[size_t(k)];
        } else {
            p.c[size_t(k)].clear();
        }
    }
    return p;
}

double classify(const ProjectionNet& net, const Prototypes& protos, std::span<const double> x) {
    if (!protos.both()) throw ContractError("classify: missing class prototype");
    std::vector<double> z = net.project_one(x);
    double d2[2];
    for (int k = 0; k < 2; ++k) {
        double s = 0.0;
        for (size_t j = 0; j < z.size(); ++j) {
            double d = z[j] - protos.c[size_t(k)][j];
            s += d * d;
        }
        d2[k] = s;
    }
    // softmax over negative squared distances, stable two-class form
    return 1.0 / (1.0 + std::exp(d2[1] - d2[0]));
}

std::optional<double> predict(const ProjectionNet& net, const core::SupportSet& support,
                              std::span<const double> x) {
    Prototypes p = compute_prototypes(net, support);
    if (!p.both()) return std::nullopt;
    return classify(net, p, x);
}

nk::Graph::Id episode_loss_graph(nk::Graph& g, const std::vector<nk::Graph::Id>& params,
                                 const nk::Tensor& support0, const nk::Tensor& support1,
                                 const nk::Tensor& queries, const std::vector<int>& labels) {
    auto forward = [&](nk::Graph::Id x) {
        auto h = g.add_rowvec(g.matmul(x, params[0]), params[1]);
        h = g.relu(h);
        h = g.add_rowvec(g.matmul(h, params[2]), params[3]);
        h = g.relu(h);
        return g.add_rowvec(g.matmul(h, params[4]), params[5]);
    };
    auto c0 = g.col_mean(forward(g.input(support0)));
    auto c1 = g.col_mean(forward(g.input(support1)));
    auto q = forward(g.input(queries));

    auto sqdist_to = [&](nk::Graph::Id proto) {
        auto diff = g.add_rowvec(q, g.scale(proto, -1.0));
        return g.row_sum(g.mul(diff, diff));
    };
    auto logits = g.concat_cols(g.scale(sqdist_to(c0), -1.0), g.scale(sqdist_to(c1), -1.0));
    return g.cross_entropy_logits(logits, labels);
}

namespace {

struct Episode {
    std::vector<const core::Observation*> support0, support1, queries;
    std::vector<int> labels;
};

bool eligible(const core::SpeakerSequence& s) {
    if (s.length() < 4) return false;
    bool pos = false, neg = false;
    for (const auto& o : s.observations) (o.target.label ? pos : neg) = true;
    return pos && neg;
}

// Support of size s with both classes present, queries = the rest.
std::optional<Episode> sample_episode(const core::SpeakerSequence& spk, const ProtoConfig& cfg,
                                      Rng& rng) {
    const int n = spk.length();
    int smax = std::min(cfg.support_max, n - 1);
    if (smax < cfg.support_min) return std::nullopt;
    int s = rng.uniform_int(cfg.support_min, smax);
    std::vector<int> idx = rng.permutation(n);
    for (int attempt = 0; attempt < 40; ++attempt) {
        bool pos = false, neg = false;
        for (int i = 0; i < s; ++i)
            (spk.observations[size_t(idx[size_t(i)])].target.label ? pos : neg) = true;
        if (pos && neg) break;
        rng.shuffle(idx);
        if (attempt == 39) return std::nullopt;
    }
    Episode ep;
    for (int i = 0; i < n; ++i) {
        const auto* obs = &spk.observations[size_t(idx[size_t(i)])];
        if (i < s) (obs->target.label ? ep.support1 : ep.support0).push_back(obs);
        else {
            ep.queries.push_back(obs);
            ep.labels.push_back(obs->target.label);
        }
    }
    return ep;
}

double val_auc(const ProjectionNet& net, const std::vector<Episode>& episodes) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& ep : episodes) {
        core::SupportSet sup;
        for (const auto* o : ep.support0) sup.items.push_back(o);
        for (const auto* o : ep.support1) sup.items.push_back(o);
        Prototypes p = compute_prototypes(net, sup);
        if (!p.both()) continue;
        for (size_t i = 0; i < ep.queries.size(); ++i) {
            scores.push_back(classify(net, p, ep.queries[i]->embedding));
            labels.push_back(ep.labels[i]);
        }
    }
    return metrics::auc(scores, labels).value_or(0.5);
}

}  // namespace

ProjectionNet train_episodic(const std::vector<const core::SpeakerSequence*>& train_speakers,
                             const std::vector<const core::SpeakerSequence*>& val_speakers,
                             const ProtoConfig& cfg) {
    std::vector<const core::SpeakerSequence*> pool;
    for (const auto* s : train_speakers)
        if (eligible(*s)) pool.push_back(s);
    if (pool.empty()) throw ContractError("train_episodic: no eligible training speakers");

    Rng rng(seed_of({cfg.seed, 0x9707}));
    ProjectionNet net = init_projection(cfg, rng);
    nk::Adam adam({cfg.lr, 0.9, 0.999, 1e-8}, net.params);

    // Fixed validation episodes for deterministic early stopping.
    std::vector<Episode> val_eps;
    {
        std::vector<const core::SpeakerSequence*> vpool;
        for (const auto* s : val_speakers)
            if (eligible(*s)) vpool.push_back(s);
        Rng vrng(seed_of({cfg.seed, 0x9a1}));
        for (int i = 0; i < cfg.val_episodes && !vpool.empty(); ++i) {
            const auto* spk = vpool[size_t(vrng.below(vpool.size()))];
            if (auto ep = sample_episode(*spk, cfg, vrng)) val_eps.push_back(std::move(*ep));
        }
    }

    std::vector<nk::Tensor> best_params = net.params;
    double best_auc = -1.0;
    int checks_since_best = 0;

    for (int episode = 1; episode <= cfg.episodes; ++episode) {
        const auto* spk = pool[size_t(rng.below(pool.size()))];
        auto ep = sample_episode(*spk, cfg, rng);
        if (!ep) continue;

        nk::Graph g;
        std::vector<nk::Graph::Id> pids;
        for (const auto& p : net.params) pids.push_back(g.param(p));
        auto loss = episode_loss_graph(g, pids, rows_tensor(ep->support0),
                                       rows_tensor(ep->support1), rows_tensor(ep->queries),
                                       ep->labels);
        g.backward(loss);
        auto grads = nk::collect_param_grads(g);
        adam.step(net.params, grads);

        if (!val_eps.empty() && episode % cfg.eval_every == 0) {
            double a = val_auc(net, val_eps);
            if (a > best_auc) {
                best_auc = a;
                best_params = net.params;
                checks_since_best = 0;
            } else if (++checks_since_best >= cfg.patience) {
                break;
            }
        }
    }
    if (best_auc >= 0.0) net.params = std::move(best_params);
    return net;
}

}  // namespace fatbench::protonet
