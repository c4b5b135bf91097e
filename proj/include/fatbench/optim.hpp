#pragma once

#include <vector>

#include "fatbench/graph.hpp"
#include "fatbench/tensor.hpp"

namespace fatbench::nk {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias-corrected moments. Moment shapes are fixed by the parameter
// list given at construction.
class Adam {
public:
    Adam(AdamConfig cfg, const std::vector<Tensor>& params);

    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);

    void set_lr(double lr) { cfg_.lr = lr; }
    long step_count() const { return steps_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long steps_ = 0;
};

std::vector<Tensor> collect_param_grads(const Graph& g);
double global_grad_norm(const std::vector<Tensor>& grads);
// Scales grads in place so their global norm is at most max_norm.
void clip_global_norm(std::vector<Tensor>& grads, double max_norm);

}  // namespace fatbench::nk
