#include "fatbench/ictransformer.hpp"

#include <algorithm>
#include <cmath>

namespace fatbench::ictr {

TransformerConfig desk_config(int embedding_dim) {
    TransformerConfig cfg;
    cfg.embedding_dim = embedding_dim;
    return cfg;
}

TransformerConfig full_config(int embedding_dim) {
    TransformerConfig cfg;
    cfg.n_layers = 15;
    cfg.n_heads = 8;
    cfg.model_dim = 256;
    cfg.max_seq_tokens = 128;
    cfg.embedding_dim = embedding_dim;
    cfg.steps = 20000;
    return cfg;
}

void validate_config(const TransformerConfig& cfg) {
    if (cfg.n_layers < 1 || cfg.n_heads < 1 || cfg.model_dim < 1)
        throw ContractError("TransformerConfig: bad architecture sizes");
    if (cfg.model_dim % cfg.n_heads != 0)
        throw ContractError("TransformerConfig: model_dim must divide by n_heads");
    if (cfg.max_seq_tokens < 3) throw ContractError("TransformerConfig: max_seq_tokens < 3");
    if (cfg.embedding_dim < 1) throw ContractError("TransformerConfig: embedding_dim < 1");
    if (cfg.aug_noise_std < 0.0) throw ContractError("TransformerConfig: negative noise std");
}

core::EmbeddingVec augment_target(double y, int d, double noise_std, Rng& rng) {
    if (!std::isfinite(y)) throw ContractError("augment_target: non-finite target");
    core::EmbeddingVec v(static_cast<size_t>(d));
    for (auto& e : v) e = noise_std > 0.0 ? rng.normal(y, noise_std) : y;
    return v;
}

TokenSequence build_sequence(const core::SupportSet& support, std::span<const double> x_t,
                             double noise_std, int max_tokens, Rng& rng, bool label_targets) {
    const int t = int(support.size());
    const int n_tokens = 2 * t + 1;
    if (n_tokens > max_tokens)
        throw ContractError("build_sequence: sequence of " + std::to_string(n_tokens) +
                            " tokens exceeds limit " + std::to_string(max_tokens));
    const int d = int(x_t.size());
    TokenSequence seq;
    seq.tokens = nk::Tensor(n_tokens, d);
    for (int j = 0; j < t; ++j) {
        const auto& e = support.items[size_t(j)]->embedding;
        if (int(e.size()) != d) throw ContractError("build_sequence: dimension mismatch");
        std::copy(e.begin(), e.end(), seq.tokens.row(2 * j));
        double y = label_targets ? double(support.items[size_t(j)]->target.label)
                                 : support.items[size_t(j)]->target.hours;
        auto aug = augment_target(y, d, noise_std, rng);
        std::copy(aug.begin(), aug.end(), seq.tokens.row(2 * j + 1));
        seq.scored.push_back(2 * j);
    }
    std::copy(x_t.begin(), x_t.end(), seq.tokens.row(n_tokens - 1));
    seq.scored.push_back(n_tokens - 1);
    seq.positions.resize(size_t(n_tokens));
    for (int i = 0; i < n_tokens; ++i) seq.positions[size_t(i)] = i;
    return seq;
}

namespace {

constexpr int kLayerStride = 16;

nk::Tensor gauss_init(int r, int c, Rng& rng, double std = 0.02) {
    nk::Tensor t(r, c);
    for (auto& e : t.v) e = rng.normal(0.0, std);
    return t;
}

nk::Tensor ones(int r, int c) { return nk::Tensor::full(r, c, 1.0); }

nk::Tensor causal_mask(int n) {
    nk::Tensor m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
    return m;
}

}  // namespace

TransformerModel init_model(const TransformerConfig& cfg, Rng& rng) {
    validate_config(cfg);
    TransformerModel m;
    m.cfg = cfg;
    const int d = cfg.embedding_dim, dm = cfg.model_dim;
    m.params.push_back(gauss_init(d, dm, rng));          // input projection
    m.params.push_back(nk::Tensor(1, dm));               // input bias
    m.params.push_back(gauss_init(cfg.max_seq_tokens, dm, rng));  // positional table
    for (int l = 0; l < cfg.n_layers; ++l) {
        m.params.push_back(ones(1, dm));                 // ln1 gain
        m.params.push_back(nk::Tensor(1, dm));           // ln1 bias
        m.params.push_back(gauss_init(dm, dm, rng));     // Wq
        m.params.push_back(nk::Tensor(1, dm));           // bq
        m.params.push_back(gauss_init(dm, dm, rng));     // Wk
        m.params.push_back(nk::Tensor(1, dm));           // bk
        m.params.push_back(gauss_init(dm, dm, rng));     // Wv
        m.params.push_back(nk::Tensor(1, dm));           // bv
        m.params.push_back(gauss_init(dm, dm, rng));     // Wo
        m.params.push_back(nk::Tensor(1, dm));           // bo
        m.params.push_back(ones(1, dm));                 // ln2 gain
        m.params.push_back(nk::Tensor(1, dm));           // ln2 bias
        m.params.push_back(gauss_init(dm, 4 * dm, rng)); // mlp in
        m.params.push_back(nk::Tensor(1, 4 * dm));
        m.params.push_back(gauss_init(4 * dm, dm, rng)); // mlp out
        m.params.push_back(nk::Tensor(1, dm));
    }
    m.params.push_back(ones(1, dm));                     // final ln gain
    m.params.push_back(nk::Tensor(1, dm));               // final ln bias
    m.params.push_back(nk::Tensor(dm, d));               // output head, zero-initialized
    m.params.push_back(nk::Tensor(1, d));                // head bias
    return m;
}

nk::Graph::Id forward_graph(nk::Graph& g, const std::vector<nk::Graph::Id>& params,
                            const TransformerConfig& cfg, const nk::Tensor& tokens,
                            const std::vector<int>& positions) {
    const int n = tokens.rows;
    if (n > cfg.max_seq_tokens) throw ContractError("forward_graph: too many tokens");
    for (int p : positions)
        if (p < 0 || p >= cfg.max_seq_tokens) throw ContractError("forward_graph: bad position");
    const int dm = cfg.model_dim, hd = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(double(hd));

    auto tok = g.input(tokens);
    auto mask = g.input(causal_mask(n));
    auto h = g.add_rowvec(g.matmul(tok, params[0]), params[1]);
    h = g.add(h, g.gather_rows(params[2], positions));

    int p = 3;
    for (int l = 0; l < cfg.n_layers; ++l, p += kLayerStride) {
        auto a = g.layer_norm_rows(h, params[size_t(p)], params[size_t(p + 1)]);
        auto q = g.add_rowvec(g.matmul(a, params[size_t(p + 2)]), params[size_t(p + 3)]);
        auto k = g.add_rowvec(g.matmul(a, params[size_t(p + 4)]), params[size_t(p + 5)]);
        auto v = g.add_rowvec(g.matmul(a, params[size_t(p + 6)]), params[size_t(p + 7)]);
        nk::Graph::Id heads = -1;
        for (int hix = 0; hix < cfg.n_heads; ++hix) {
            int c0 = hix * hd, c1 = c0 + hd;
            auto qh = g.slice_cols(q, c0, c1);
            auto kh = g.slice_cols(k, c0, c1);
            auto vh = g.slice_cols(v, c0, c1);
            auto scores = g.scale(g.matmul(qh, g.transpose(kh)), att_scale);
            auto att = g.softmax_rows(g.add(scores, mask));
            auto oh = g.matmul(att, vh);
            heads = (hix == 0) ? oh : g.concat_cols(heads, oh);
        }
        auto attn = g.add_rowvec(g.matmul(heads, params[size_t(p + 8)]), params[size_t(p + 9)]);
        h = g.add(h, attn);
        auto mln = g.layer_norm_rows(h, params[size_t(p + 10)], params[size_t(p + 11)]);
        auto m1 = g.relu(g.add_rowvec(g.matmul(mln, params[size_t(p + 12)]), params[size_t(p + 13)]));
        auto m2 = g.add_rowvec(g.matmul(m1, params[size_t(p + 14)]), params[size_t(p + 15)]);
        h = g.add(h, m2);
    }
    auto hf = g.layer_norm_rows(h, params[size_t(p)], params[size_t(p + 1)]);
    (void)dm;
    return g.add_rowvec(g.matmul(hf, params[size_t(p + 2)]), params[size_t(p + 3)]);
}

nk::Graph::Id sequence_loss_graph(nk::Graph& g, const std::vector<nk::Graph::Id>& params,
                                  const TransformerConfig& cfg, const TokenSequence& seq,
                                  const nk::Tensor& targets) {
    if (int(seq.scored.size()) != targets.rows)
        throw ContractError("sequence_loss_graph: scored/target mismatch");
    auto out = forward_graph(g, params, cfg, seq.tokens, seq.positions);
    auto scored = g.gather_rows(out, seq.scored);
    return g.mse_loss(scored, g.input(targets));
}

nk::Tensor TransformerModel::forward(const TokenSequence& seq) const {
    nk::Graph g;
    std::vector<nk::Graph::Id> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(g.input(p));
    auto out = forward_graph(g, ids, cfg, seq.tokens, seq.positions);
    return g.value(out);
}

double TransformerModel::predict_score(const core::SupportSet& support,
                                       std::span<const double> x_t, Rng& rng) const {
    const core::SupportSet* sup = &support;
    core::SupportSet truncated;
    if (int(support.size()) > cfg.max_support()) {
        truncated.items.assign(support.items.end() - cfg.max_support(), support.items.end());
        sup = &truncated;
    }
    TokenSequence seq =
        build_sequence(*sup, x_t, cfg.aug_noise_std, cfg.max_seq_tokens, rng, cfg.label_targets);
    nk::Tensor out = forward(seq);
    const double* last = out.row(out.rows - 1);
    double acc = 0.0;
    for (int j = 0; j < out.cols; ++j) acc += last[j];
    return acc / double(out.cols);
}

double TransformerModel::predict_hours(const core::SupportSet& support,
                                       std::span<const double> x_t, Rng& rng) const {
    return std::clamp(predict_score(support, x_t, rng), 0.0, 24.0);
}

namespace {

struct TrainItem {
    std::vector<const core::Observation*> obs;  // ordered, truncated to window
};

TrainItem make_item(const SeqView& view, int max_support) {
    TrainItem item;
    const auto& seq = *view.speaker;
    int n = seq.length();
    if (int(view.ordering.size()) != n) throw ContractError("train: ordering length mismatch");
    int keep = std::min(n, max_support + 1);
    for (int i = n - keep; i < n; ++i)
        item.obs.push_back(&seq.observations[size_t(view.ordering[size_t(i)])]);
    return item;
}

double target_of(const core::Observation& o, bool use_labels) {
    return use_labels ? double(o.target.label) : o.target.hours;
}

// Token matrix + per-x-token augmented targets for one full speaker window.
// The same augmentation draw feeds both the y-token and its loss target.
std::pair<TokenSequence, nk::Tensor> make_training_sequence(const TrainItem& item,
                                                            const TransformerConfig& cfg,
                                                            Rng& rng) {
    const int d = cfg.embedding_dim;
    const double noise_std = cfg.aug_noise_std;
    const int n = int(item.obs.size());
    TokenSequence seq;
    seq.tokens = nk::Tensor(2 * n - 1, d);
    nk::Tensor targets(n, d);
    for (int j = 0; j < n; ++j) {
        const auto& e = item.obs[size_t(j)]->embedding;
        std::copy(e.begin(), e.end(), seq.tokens.row(2 * j));
        seq.scored.push_back(2 * j);
        auto aug =
            augment_target(target_of(*item.obs[size_t(j)], cfg.label_targets), d, noise_std, rng);
        std::copy(aug.begin(), aug.end(), targets.row(j));
        if (j < n - 1) std::copy(aug.begin(), aug.end(), seq.tokens.row(2 * j + 1));
    }
    seq.positions.resize(size_t(2 * n - 1));
    for (int i = 0; i < 2 * n - 1; ++i) seq.positions[size_t(i)] = i;
    return {std::move(seq), std::move(targets)};
}

}  // namespace

TransformerModel train(const std::vector<SeqView>& train_seqs,
                       const std::vector<SeqView>& val_seqs, const TransformerConfig& cfg) {
    validate_config(cfg);
    if (train_seqs.empty()) throw ContractError("train: no training sequences");

    std::vector<TrainItem> items;
    items.reserve(train_seqs.size());
    for (const auto& v : train_seqs) items.push_back(make_item(v, cfg.max_support()));

    Rng rng(seed_of({cfg.seed, 0x7a17}));
    TransformerModel model = init_model(cfg, rng);
    nk::Adam adam({cfg.lr, 0.9, 0.999, 1e-8}, model.params);

    // Frozen-augmentation validation sequences keep early stopping comparable
    // across checks.
    std::vector<std::pair<TokenSequence, nk::Tensor>> val_items;
    {
        Rng vrng(seed_of({cfg.seed, 0x7a1d}));
        for (const auto& v : val_seqs) {
            TrainItem it = make_item(v, cfg.max_support());
            val_items.push_back(make_training_sequence(it, cfg, vrng));
        }
    }
    auto val_loss = [&]() {
        double se = 0.0;
        size_t cnt = 0;
        for (const auto& [seq, targets] : val_items) {
            nk::Tensor out = model.forward(seq);
            for (size_t r = 0; r < seq.scored.size(); ++r) {
                const double* o = out.row(seq.scored[r]);
                const double* t = targets.row(int(r));
                for (int j = 0; j < targets.cols; ++j) {
                    double diff = o[j] - t[j];
                    se += diff * diff;
                }
            }
            cnt += seq.scored.size() * size_t(targets.cols);
        }
        return cnt ? se / double(cnt) : 0.0;
    };

    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // trigger reshuffle on first step

    std::vector<nk::Tensor> best_params;
    double best_val = 0.0;
    bool have_best = false;
    int checks_since_best = 0;

    for (int step = 1; step <= cfg.steps; ++step) {
        // cosine decay to 10% of the base rate; the tail polishes convergence
        double progress = double(step - 1) / double(cfg.steps);
        adam.set_lr(cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress))));
        if (cursor >= order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        const TrainItem& item = items[order[cursor++]];

        auto [seq, targets] = make_training_sequence(item, cfg, rng);
        nk::Graph g;
        std::vector<nk::Graph::Id> pids;
        pids.reserve(model.params.size());
        for (const auto& p : model.params) pids.push_back(g.param(p));
        auto loss = sequence_loss_graph(g, pids, cfg, seq, targets);
        g.backward(loss);
        auto grads = nk::collect_param_grads(g);
        nk::clip_global_norm(grads, cfg.grad_clip);
        adam.step(model.params, grads);

        if (!val_items.empty() && step % cfg.eval_every == 0) {
            double vl = val_loss();
            model.training_log.emplace_back(step, vl);
            if (!have_best || vl < best_val) {
                have_best = true;
                best_val = vl;
                best_params = model.params;
                checks_since_best = 0;
            } else if (++checks_since_best >= cfg.patience) {
                break;
            }
        }
    }
    if (have_best) model.params = std::move(best_params);
    return model;
}

}  // namespace fatbench::ictr
