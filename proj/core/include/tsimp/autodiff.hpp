#pragma once

#include <functional>
#include <vector>

#include "tsimp/array.hpp"

namespace tsimp {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Tape-based reverse-mode autodiff over float32 arrays. One tape per
// forward pass; node ids increase in topological order, so a single
// reverse sweep propagates gradients.
class Tape {
public:
    Var leaf(Array value, bool requires_grad = false);
    Var constant(Array value) { return leaf(std::move(value), false); }

    const Array& value(Var v) const { return nodes_[v.id].value; }
    const Array& grad(Var v) const { return nodes_[v.id].grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    // Elementwise; shapes must match exactly.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var a);
    Var abs(Var a);
    Var square(Var a);

    Var sigmoid(Var a);
    Var tanh(Var a);
    Var relu(Var a);
    Var exp(Var a);

    Var scale(Var a, float c);
    Var add_scalar(Var a, float c);

    // [m,k] x [k,n] -> [m,n].
    Var matmul(Var a, Var b);
    // Bias row vector broadcast over the rows of a.
    Var add_rowvec(Var a, Var bias);
    // x[N,C] scaled per-row by s[N,1].
    Var scale_rows(Var x, Var s);
    // Column j of a [N,C] matrix as [N,1].
    Var col(Var a, int j);
    Var concat_cols(Var a, Var b);
    Var reshape(Var a, std::vector<int> shape);
    Var softmax_rows(Var a);

    Var sum(Var a);
    Var mean(Var a);

    // Elementwise product with a constant (e.g. observation mask).
    Var mul_const(Var a, const Array& c);

    // sum(|pred - target| * mask) / max(1, sum(mask)); constants carry no grad.
    Var masked_mae(Var pred, const Array& target, const Array& mask);
    // Numerically stable mean binary cross-entropy; labels in {0,1}.
    Var bce_with_logits(Var logits, const Array& labels);

    // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. Gradients
    // accumulate across calls; clear with zero_grad between steps.
    void backward(Var loss);
    void zero_grad();

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Array value;
        Array grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // empty for leaves
    };

    Var emplace(Array value, bool requires_grad, std::function<void(Tape&)> backprop);
    Array& grad_mut(Var v) { return nodes_[v.id].grad; }

    std::vector<Node> nodes_;
};

// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// where numeric is the central difference of f at x with step eps.
float grad_check(const std::function<Var(Tape&, Var)>& f, const Array& x, float eps);

}  // namespace tsimp
