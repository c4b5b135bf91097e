#include "fatbench/graph.hpp"

#include <algorithm>
#include <cmath>

#include "fatbench/kernels.hpp"

namespace fatbench::nk {

void Graph::check_finite(const Tensor& t, const char* what) const {
    if (!t.all_finite()) throw NumericFault(std::string("non-finite result in ") + what);
}

Graph::Id Graph::push(Node n) {
    check_finite(n.val, "graph op");
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
}

Graph::Id Graph::input(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(t);
    return push(std::move(n));
}

Graph::Id Graph::param(const Tensor& t) {
    Node n;
    n.op = Op::Param;
    n.val = t;
    n.needs_grad = true;
    Id id = push(std::move(n));
    param_nodes_.push_back(id);
    return id;
}

Graph::Id Graph::add(Id a, Id b) {
    const Tensor& x = at(a).val;
    const Tensor& y = at(b).val;
    if (!x.same_shape(y)) throw ContractError("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.needs_grad = tracked(a) || tracked(b);
    n.val = x;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] += y.v[i];
    return push(std::move(n));
}

Graph::Id Graph::sub(Id a, Id b) {
    const Tensor& x = at(a).val;
    const Tensor& y = at(b).val;
    if (!x.same_shape(y)) throw ContractError("sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.needs_grad = tracked(a) || tracked(b);
    n.val = x;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] -= y.v[i];
    return push(std::move(n));
}

Graph::Id Graph::mul(Id a, Id b) {
    const Tensor& x = at(a).val;
    const Tensor& y = at(b).val;
    if (!x.same_shape(y)) throw ContractError("mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.needs_grad = tracked(a) || tracked(b);
    n.val = x;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] *= y.v[i];
    return push(std::move(n));
}

Graph::Id Graph::scale(Id a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.scalar = s;
    n.needs_grad = tracked(a);
    n.val = at(a).val;
    for (auto& e : n.val.v) e *= s;
    return push(std::move(n));
}

Graph::Id Graph::matmul(Id a, Id b) {
    const Tensor& x = at(a).val;
    const Tensor& y = at(b).val;
    if (x.cols != y.rows) throw ContractError("matmul: inner dimension mismatch");
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.needs_grad = tracked(a) || tracked(b);
    n.val = Tensor(x.rows, y.cols);
    kern::matmul_nn(x.data(), y.data(), n.val.data(), size_t(x.rows), size_t(x.cols),
                    size_t(y.cols));
    return push(std::move(n));
}

Graph::Id Graph::transpose(Id a) {
    const Tensor& x = at(a).val;
    Node n;
    n.op = Op::Transpose;
    n.a = a;
    n.needs_grad = tracked(a);
    n.val = Tensor(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) n.val.at(j, i) = x.at(i, j);
    return push(std::move(n));
}

Graph::Id Graph::relu(Id a) {
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.needs_grad = tracked(a);
    n.val = at(a).val;
    for (auto& e : n.val.v) e = e > 0.0 ? e : 0.0;
    return push(std::move(n));
}

Graph::Id Graph::softmax_rows(Id a) {
    const Tensor& x = at(a).val;
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a;
    n.needs_grad = tracked(a);
    n.val = Tensor(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* oi = n.val.row(i);
        double mx = xi[0];
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, xi[j]);
        double denom = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            denom += oi[j];
        }
        for (int j = 0; j < x.cols; ++j) oi[j] /= denom;
    }
    return push(std::move(n));
}

Graph::Id Graph::layer_norm_rows(Id x, Id gain, Id bias, double eps) {
    const Tensor& xv = at(x).val;
    const Tensor& g = at(gain).val;
    const Tensor& b = at(bias).val;
    if (g.rows != 1 || b.rows != 1 || g.cols != xv.cols || b.cols != xv.cols)
        throw ContractError("layer_norm_rows: gain/bias must be 1 x cols");
    Node n;
    n.op = Op::LayerNorm;
    n.a = x;
    n.b = gain;
    n.c = bias;
    n.scalar = eps;
    n.needs_grad = tracked(x) || tracked(gain) || tracked(bias);
    n.val = Tensor(xv.rows, xv.cols);
    for (int i = 0; i < xv.rows; ++i) {
        const double* xi = xv.row(i);
        double* oi = n.val.row(i);
        double mu = 0.0;
        for (int j = 0; j < xv.cols; ++j) mu += xi[j];
        mu /= xv.cols;
        double var = 0.0;
        for (int j = 0; j < xv.cols; ++j) {
            double d = xi[j] - mu;
            var += d * d;
        }
        var /= xv.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < xv.cols; ++j) oi[j] = (xi[j] - mu) * inv * g.v[size_t(j)] + b.v[size_t(j)];
    }
    return push(std::move(n));
}

Graph::Id Graph::add_rowvec(Id x, Id v) {
    const Tensor& xv = at(x).val;
    const Tensor& vv = at(v).val;
    if (vv.rows != 1 || vv.cols != xv.cols) throw ContractError("add_rowvec: v must be 1 x cols");
    Node n;
    n.op = Op::AddRowVec;
    n.a = x;
    n.b = v;
    n.needs_grad = tracked(x) || tracked(v);
    n.val = xv;
    for (int i = 0; i < xv.rows; ++i) {
        double* oi = n.val.row(i);
        for (int j = 0; j < xv.cols; ++j) oi[j] += vv.v[size_t(j)];
    }
    return push(std::move(n));
}

Graph::Id Graph::gather_rows(Id x, std::vector<int> idx) {
    const Tensor& xv = at(x).val;
    for (int i : idx)
        if (i < 0 || i >= xv.rows) throw ContractError("gather_rows: index out of range");
    Node n;
    n.op = Op::GatherRows;
    n.a = x;
    n.needs_grad = tracked(x);
    n.val = Tensor(int(idx.size()), xv.cols);
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(xv.row(idx[r]), xv.row(idx[r]) + xv.cols, n.val.row(int(r)));
    n.idx = std::move(idx);
    return push(std::move(n));
}

Graph::Id Graph::concat_cols(Id a, Id b) {
    const Tensor& x = at(a).val;
    const Tensor& y = at(b).val;
    if (x.rows != y.rows) throw ContractError("concat_cols: row mismatch");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a;
    n.b = b;
    n.needs_grad = tracked(a) || tracked(b);
    n.val = Tensor(x.rows, x.cols + y.cols);
    for (int i = 0; i < x.rows; ++i) {
        std::copy(x.row(i), x.row(i) + x.cols, n.val.row(i));
        std::copy(y.row(i), y.row(i) + y.cols, n.val.row(i) + x.cols);
    }
    return push(std::move(n));
}

Graph::Id Graph::slice_cols(Id x, int c0, int c1) {
    const Tensor& xv = at(x).val;
    if (c0 < 0 || c1 <= c0 || c1 > xv.cols) throw ContractError("slice_cols: bad range");
    Node n;
    n.op = Op::SliceCols;
    n.a = x;
    n.idx = {c0, c1};
    n.needs_grad = tracked(x);
    n.val = Tensor(xv.rows, c1 - c0);
    for (int i = 0; i < xv.rows; ++i)
        std::copy(xv.row(i) + c0, xv.row(i) + c1, n.val.row(i));
    return push(std::move(n));
}

Graph::Id Graph::row_sum(Id x) {
    const Tensor& xv = at(x).val;
    Node n;
    n.op = Op::RowSum;
    n.a = x;
    n.needs_grad = tracked(x);
    n.val = Tensor(xv.rows, 1);
    for (int i = 0; i < xv.rows; ++i) {
        double s = 0.0;
        const double* xi = xv.row(i);
        for (int j = 0; j < xv.cols; ++j) s += xi[j];
        n.val.at(i, 0) = s;
    }
    return push(std::move(n));
}

Graph::Id Graph::col_mean(Id x) {
    const Tensor& xv = at(x).val;
    if (xv.rows == 0) throw ContractError("col_mean: empty tensor");
    Node n;
    n.op = Op::ColMean;
    n.a = x;
    n.needs_grad = tracked(x);
    n.val = Tensor(1, xv.cols);
    for (int i = 0; i < xv.rows; ++i) {
        const double* xi = xv.row(i);
        for (int j = 0; j < xv.cols; ++j) n.val.v[size_t(j)] += xi[j];
    }
    for (auto& e : n.val.v) e /= xv.rows;
    return push(std::move(n));
}

Graph::Id Graph::mean_all(Id x) {
    const Tensor& xv = at(x).val;
    if (xv.size() == 0) throw ContractError("mean_all: empty tensor");
    Node n;
    n.op = Op::MeanAll;
    n.a = x;
    n.needs_grad = tracked(x);
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (double e : xv.v) s += e;
    n.val.v[0] = s / double(xv.size());
    return push(std::move(n));
}

Graph::Id Graph::mse_loss(Id pred, Id target) {
    const Tensor& p = at(pred).val;
    const Tensor& t = at(target).val;
    if (!p.same_shape(t)) throw ContractError("mse_loss: shape mismatch");
    if (p.size() == 0) throw ContractError("mse_loss: empty tensors");
    Node n;
    n.op = Op::MseLoss;
    n.a = pred;
    n.b = target;
    n.needs_grad = tracked(pred) || tracked(target);
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        double d = p.v[i] - t.v[i];
        s += d * d;
    }
    n.val.v[0] = s / double(p.size());
    return push(std::move(n));
}

Graph::Id Graph::cross_entropy_logits(Id logits, std::vector<int> labels) {
    const Tensor& z = at(logits).val;
    if (int(labels.size()) != z.rows) throw ContractError("cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= z.cols) throw ContractError("cross_entropy: label out of range");
    Node n;
    n.op = Op::CrossEntropy;
    n.a = logits;
    n.needs_grad = tracked(logits);
    n.val = Tensor(1, 1);
    double total = 0.0;
    for (int i = 0; i < z.rows; ++i) {
        const double* zi = z.row(i);
        double mx = zi[0];
        for (int j = 1; j < z.cols; ++j) mx = std::max(mx, zi[j]);
        double lse = 0.0;
        for (int j = 0; j < z.cols; ++j) lse += std::exp(zi[j] - mx);
        lse = mx + std::log(lse);
        total += lse - zi[labels[size_t(i)]];
    }
    n.val.v[0] = total / double(z.rows);
    n.idx = std::move(labels);
    return push(std::move(n));
}

const Tensor& Graph::grad(Id id) const {
    const Node& n = at(id);
    if (!n.grad_alloc) throw ContractError("grad: node has no gradient (run backward first)");
    return n.grad;
}

const Tensor& Graph::param_grad(int slot) const {
    if (slot < 0 || slot >= int(param_nodes_.size())) throw ContractError("param_grad: bad slot");
    return grad(param_nodes_[size_t(slot)]);
}

Tensor& Graph::grad_buf(Id id) {
    Node& n = at(id);
    if (!n.grad_alloc) {
        n.grad = Tensor(n.val.rows, n.val.cols);
        n.grad_alloc = true;
    }
    return n.grad;
}

void Graph::reset_grads() {
    for (auto& n : nodes_) {
        n.grad = Tensor();
        n.grad_alloc = false;
    }
}

void Graph::backward(Id loss) {
    const Node& ln = at(loss);
    if (ln.val.rows != 1 || ln.val.cols != 1) throw ContractError("backward: loss must be scalar");
    if (!ln.needs_grad) {
        // Loss depends on no tracked node; nothing to do.
        for (Id p : param_nodes_) grad_buf(p);
        return;
    }
    grad_buf(loss).v[0] = 1.0;
    // Make sure params always expose a (possibly zero) gradient.
    for (Id p : param_nodes_) grad_buf(p);

    for (Id id = loss; id >= 0; --id) {
        Node& n = at(id);
        if (!n.needs_grad || !n.grad_alloc) continue;
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                break;
            case Op::Add: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
                }
                if (tracked(n.b)) {
                    Tensor& gb = grad_buf(n.b);
                    for (size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i];
                }
                break;
            }
            case Op::Sub: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
                }
                if (tracked(n.b)) {
                    Tensor& gb = grad_buf(n.b);
                    for (size_t i = 0; i < g.size(); ++i) gb.v[i] -= g.v[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& av = at(n.a).val;
                const Tensor& bv = at(n.b).val;
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * bv.v[i];
                }
                if (tracked(n.b)) {
                    Tensor& gb = grad_buf(n.b);
                    for (size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i] * av.v[i];
                }
                break;
            }
            case Op::Scale: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * n.scalar;
                }
                break;
            }
            case Op::MatMul: {
                const Tensor& av = at(n.a).val;
                const Tensor& bv = at(n.b).val;
                if (tracked(n.a)) {
                    // dA = g * B^T
                    Tensor da(av.rows, av.cols);
                    kern::matmul_nt(g.data(), bv.data(), da.data(), size_t(g.rows),
                                    size_t(g.cols), size_t(bv.rows));
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < da.size(); ++i) ga.v[i] += da.v[i];
                }
                if (tracked(n.b)) {
                    // dB = A^T * g
                    Tensor db(bv.rows, bv.cols);
                    kern::matmul_tn(av.data(), g.data(), db.data(), size_t(av.cols),
                                    size_t(av.rows), size_t(g.cols));
                    Tensor& gb = grad_buf(n.b);
                    for (size_t i = 0; i < db.size(); ++i) gb.v[i] += db.v[i];
                }
                break;
            }
            case Op::Transpose: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
                }
                break;
            }
            case Op::Relu: {
                if (tracked(n.a)) {
                    const Tensor& av = at(n.a).val;
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < g.size(); ++i)
                        if (av.v[i] > 0.0) ga.v[i] += g.v[i];
                }
                break;
            }
            case Op::SoftmaxRows: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    const Tensor& s = n.val;
                    for (int i = 0; i < s.rows; ++i) {
                        const double* si = s.row(i);
                        const double* gi = g.row(i);
                        double dotgs = 0.0;
                        for (int j = 0; j < s.cols; ++j) dotgs += gi[j] * si[j];
                        double* gai = ga.row(i);
                        for (int j = 0; j < s.cols; ++j) gai[j] += si[j] * (gi[j] - dotgs);
                    }
                }
                break;
            }
            case Op::LayerNorm: {
                const Tensor& xv = at(n.a).val;
                const Tensor& gv = at(n.b).val;
                const double eps = n.scalar;
                const int c = xv.cols;
                for (int i = 0; i < xv.rows; ++i) {
                    const double* xi = xv.row(i);
                    const double* gi = g.row(i);
                    double mu = 0.0;
                    for (int j = 0; j < c; ++j) mu += xi[j];
                    mu /= c;
                    double var = 0.0;
                    for (int j = 0; j < c; ++j) {
                        double d = xi[j] - mu;
                        var += d * d;
                    }
                    var /= c;
                    double inv = 1.0 / std::sqrt(var + eps);
                    if (tracked(n.b) || tracked(n.c)) {
                        Tensor* gg = tracked(n.b) ? &grad_buf(n.b) : nullptr;
                        Tensor* gb = tracked(n.c) ? &grad_buf(n.c) : nullptr;
                        for (int j = 0; j < c; ++j) {
                            double xhat = (xi[j] - mu) * inv;
                            if (gg) gg->v[size_t(j)] += gi[j] * xhat;
                            if (gb) gb->v[size_t(j)] += gi[j];
                        }
                    }
                    if (tracked(n.a)) {
                        Tensor& ga = grad_buf(n.a);
                        double mean_gh = 0.0, mean_ghx = 0.0;
                        for (int j = 0; j < c; ++j) {
                            double gh = gi[j] * gv.v[size_t(j)];
                            double xhat = (xi[j] - mu) * inv;
                            mean_gh += gh;
                            mean_ghx += gh * xhat;
                        }
                        mean_gh /= c;
                        mean_ghx /= c;
                        double* gai = ga.row(i);
                        for (int j = 0; j < c; ++j) {
                            double gh = gi[j] * gv.v[size_t(j)];
                            double xhat = (xi[j] - mu) * inv;
                            gai[j] += inv * (gh - mean_gh - xhat * mean_ghx);
                        }
                    }
                }
                break;
            }
            case Op::AddRowVec: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
                }
                if (tracked(n.b)) {
                    Tensor& gb = grad_buf(n.b);
                    for (int i = 0; i < g.rows; ++i) {
                        const double* gi = g.row(i);
                        for (int j = 0; j < g.cols; ++j) gb.v[size_t(j)] += gi[j];
                    }
                }
                break;
            }
            case Op::GatherRows: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t r = 0; r < n.idx.size(); ++r) {
                        double* dst = ga.row(n.idx[r]);
                        const double* src = g.row(int(r));
                        for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
                    }
                }
                break;
            }
            case Op::ConcatCols: {
                const Tensor& av = at(n.a).val;
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < av.cols; ++j) ga.at(i, j) += g.at(i, j);
                }
                if (tracked(n.b)) {
                    Tensor& gb = grad_buf(n.b);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < gb.cols; ++j) gb.at(i, j) += g.at(i, av.cols + j);
                }
                break;
            }
            case Op::SliceCols: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    int c0 = n.idx[0];
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) ga.at(i, c0 + j) += g.at(i, j);
                }
                break;
            }
            case Op::RowSum: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (int i = 0; i < ga.rows; ++i) {
                        double gi = g.at(i, 0);
                        double* gai = ga.row(i);
                        for (int j = 0; j < ga.cols; ++j) gai[j] += gi;
                    }
                }
                break;
            }
            case Op::ColMean: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    double invr = 1.0 / double(ga.rows);
                    for (int i = 0; i < ga.rows; ++i) {
                        double* gai = ga.row(i);
                        for (int j = 0; j < ga.cols; ++j) gai[j] += g.v[size_t(j)] * invr;
                    }
                }
                break;
            }
            case Op::MeanAll: {
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    double s = g.v[0] / double(ga.size());
                    for (auto& e : ga.v) e += s;
                }
                break;
            }
            case Op::MseLoss: {
                const Tensor& p = at(n.a).val;
                const Tensor& t = at(n.b).val;
                double s = 2.0 * g.v[0] / double(p.size());
                if (tracked(n.a)) {
                    Tensor& ga = grad_buf(n.a);
                    for (size_t i = 0; i < p.size(); ++i) ga.v[i] += s * (p.v[i] - t.v[i]);
                }
                if (tracked(n.b)) {
                    Tensor& gb = grad_buf(n.b);
                    for (size_t i = 0; i < p.size(); ++i) gb.v[i] -= s * (p.v[i] - t.v[i]);
                }
                break;
            }
            case Op::CrossEntropy: {
                if (tracked(n.a)) {
                    const Tensor& z = at(n.a).val;
                    Tensor& ga = grad_buf(n.a);
                    double s = g.v[0] / double(z.rows);
                    for (int i = 0; i < z.rows; ++i) {
                        const double* zi = z.row(i);
                        double mx = zi[0];
                        for (int j = 1; j < z.cols; ++j) mx = std::max(mx, zi[j]);
                        double denom = 0.0;
                        for (int j = 0; j < z.cols; ++j) denom += std::exp(zi[j] - mx);
                        double* gai = ga.row(i);
                        for (int j = 0; j < z.cols; ++j) {
                            double p = std::exp(zi[j] - mx) / denom;
                            gai[j] += s * (p - (j == n.idx[size_t(i)] ? 1.0 : 0.0));
                        }
                    }
                }
                break;
            }
        }
    }
}

}  // namespace fatbench::nk
