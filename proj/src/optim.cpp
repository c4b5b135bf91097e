#include "fatbench/optim.hpp"

#include <cmath>

#include "fatbench/errors.hpp"

namespace fatbench::nk {

Adam::Adam(AdamConfig cfg, const std::vector<Tensor>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p.rows, p.cols);
        v_.emplace_back(p.rows, p.cols);
    }
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ContractError("Adam::step: parameter count mismatch");
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& w = params[p];
        const Tensor& g = grads[p];
        if (!w.same_shape(g) || !w.same_shape(m_[p]))
            throw ContractError("Adam::step: shape mismatch");
        for (size_t i = 0; i < w.size(); ++i) {
            double gi = g.v[i];
            m_[p].v[i] = cfg_.beta1 * m_[p].v[i] + (1.0 - cfg_.beta1) * gi;
            v_[p].v[i] = cfg_.beta2 * v_[p].v[i] + (1.0 - cfg_.beta2) * gi * gi;
            double mhat = m_[p].v[i] / bc1;
            double vhat = v_[p].v[i] / bc2;
            w.v[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::vector<Tensor> collect_param_grads(const Graph& g) {
    std::vector<Tensor> out;
    out.reserve(size_t(g.n_params()));
    for (int i = 0; i < g.n_params(); ++i) out.push_back(g.param_grad(i));
    return out;
}

double global_grad_norm(const std::vector<Tensor>& grads) {
    double ss = 0.0;
    for (const auto& g : grads)
        for (double x : g.v) ss += x * x;
    return std::sqrt(ss);
}

void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    double norm = global_grad_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    double s = max_norm / norm;
    for (auto& g : grads)
        for (double& x : g.v) x *= s;
}

}  // namespace fatbench::nk
