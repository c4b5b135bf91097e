#pragma once

#include <vector>

#include "fatbench/tensor.hpp"

namespace fatbench::nk {

// Define-by-run reverse-mode autodiff over 2-D tensors. Forward values are
// computed eagerly as nodes are appended; backward() walks the tape in
// reverse. A graph instance is confined to one execution stream; typical use
// is one graph per training step with parameters registered in a fixed order.
//
// Every op is pure: operands are never mutated. Every forward result is
// checked for NaN/Inf and trips a NumericFault if non-finite.
class Graph {
public:
    using Id = int;

    // Leaf without gradient tracking.
    Id input(Tensor t);
    // Leaf with gradient tracking; value is copied. Gradients are retrieved
    // by registration order via param_grad(slot).
    Id param(const Tensor& t);

    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);  // elementwise
    Id scale(Id a, double s);
    Id matmul(Id a, Id b);
    Id transpose(Id a);
    Id relu(Id a);
    Id softmax_rows(Id a);
    // Row-wise layer norm with learnable gain/bias (both 1 x cols).
    Id layer_norm_rows(Id x, Id gain, Id bias, double eps = 1e-5);
    // Broadcast-add a 1 x cols vector over every row.
    Id add_rowvec(Id x, Id v);
    Id gather_rows(Id x, std::vector<int> idx);
    Id concat_cols(Id a, Id b);
    Id slice_cols(Id x, int c0, int c1);  // half-open [c0, c1)
    Id row_sum(Id x);                     // n x c -> n x 1
    Id col_mean(Id x);                    // n x c -> 1 x c
    Id mean_all(Id x);                    // -> 1 x 1
    // Mean over all entries of squared difference.
    Id mse_loss(Id pred, Id target);
    // Mean over rows of -log softmax(logits)[label]; stable log-sum-exp.
    Id cross_entropy_logits(Id logits, std::vector<int> labels);

    const Tensor& value(Id id) const { return nodes_[size_t(id)].val; }
    // Gradient of the last backward() wrt any tracked node (tests use this).
    const Tensor& grad(Id id) const;

    // Accumulates gradients for every tracked node reachable from loss.
    // loss must be 1x1. May be called again after reset_grads().
    void backward(Id loss);
    void reset_grads();

    int n_params() const { return int(param_nodes_.size()); }
    const Tensor& param_grad(int slot) const;

    size_t n_nodes() const { return nodes_.size(); }

private:
    enum class Op {
        Input, Param, Add, Sub, Mul, Scale, MatMul, Transpose, Relu,
        SoftmaxRows, LayerNorm, AddRowVec, GatherRows, ConcatCols, SliceCols,
        RowSum, ColMean, MeanAll, MseLoss, CrossEntropy
    };

    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;
        double scalar = 0.0;
        std::vector<int> idx;
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
    };

    Id push(Node n);
    Node& at(Id id) { return nodes_[size_t(id)]; }
    const Node& at(Id id) const { return nodes_[size_t(id)]; }
    bool tracked(Id id) const { return id >= 0 && nodes_[size_t(id)].needs_grad; }
    Tensor& grad_buf(Id id);
    void check_finite(const Tensor& t, const char* what) const;

    std::vector<Node> nodes_;
    std::vector<Id> param_nodes_;
};

}  // namespace fatbench::nk
