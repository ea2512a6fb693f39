#include "tsimp/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>

namespace tsimp {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap as_mat(const Array& a) { return ConstMatMap(a.data(), a.rows(), a.cols()); }
MatMap as_mat(Array& a) { return MatMap(a.data(), a.rows(), a.cols()); }

}  // namespace

Var Tape::emplace(Array value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.grad = Array(value.shape());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Array value, bool requires_grad) {
    return emplace(std::move(value), requires_grad, {});
}

Var Tape::add(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require_same_shape(av, bv, "add");
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [a, b, self](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(a)) {
            Array& ga = t.grad_mut(a);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            Array& gb = t.grad_mut(b);
            for (int i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require_same_shape(av, bv, "sub");
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [a, b, self](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(a)) {
            Array& ga = t.grad_mut(a);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            Array& gb = t.grad_mut(b);
            for (int i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require_same_shape(av, bv, "mul");
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [a, b, self](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(a)) {
            const Array& bv2 = t.value(b);
            Array& ga = t.grad_mut(a);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (t.requires_grad(b)) {
            const Array& av2 = t.value(a);
            Array& gb = t.grad_mut(b);
            for (int i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
        }
    });
}

Var Tape::neg(Var a) { return scale(a, -1.0f); }

Var Tape::abs(Var a) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = std::fabs(av[i]);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        const Array& av2 = t.value(a);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (av2[i] > 0 ? 1.0f : (av2[i] < 0 ? -1.0f : 0.0f));
    });
}

Var Tape::square(Var a) { return mul(a, a); }

Var Tape::sigmoid(Var a) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) {
        float x = av[i];
        out[i] = x >= 0 ? 1.0f / (1.0f + std::exp(-x))
                        : std::exp(x) / (1.0f + std::exp(x));
    }
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        const Array& y = t.value(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0f - y[i]);
    });
}

Var Tape::tanh(Var a) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        const Array& y = t.value(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0f - y[i] * y[i]);
    });
}

Var Tape::relu(Var a) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] > 0 ? av[i] : 0.0f;
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        const Array& av2 = t.value(a);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += av2[i] > 0 ? g[i] : 0.0f;
    });
}

Var Tape::exp(Var a) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        const Array& y = t.value(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

Var Tape::scale(Var a, float c) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, c, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
}

Var Tape::add_scalar(Var a, float c) {
    const Array& av = value(a);
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var Tape::matmul(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    if (av.cols() != bv.rows())
        throw Error("matmul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Array out({av.rows(), bv.cols()});
    as_mat(out) = as_mat(av) * as_mat(bv);
    bool rg = requires_grad(a) || requires_grad(b);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [a, b, self](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(a)) {
            Array& ga = t.grad_mut(a);
            as_mat(ga) += as_mat(g) * as_mat(t.value(b)).transpose();
        }
        if (t.requires_grad(b)) {
            Array& gb = t.grad_mut(b);
            as_mat(gb) += as_mat(t.value(a)).transpose() * as_mat(g);
        }
    });
}

Var Tape::add_rowvec(Var a, Var bias) {
    const Array& av = value(a);
    const Array& bv = value(bias);
    if (bv.size() != av.cols())
        throw Error("add_rowvec: bias length " + bv.shape_str() + " vs matrix " + av.shape_str());
    Array out(av.shape());
    int R = av.rows(), C = av.cols();
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.at2(r, c) = av.at2(r, c) + bv[c];
    bool rg = requires_grad(a) || requires_grad(bias);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [a, bias, self, R, C](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(a)) {
            Array& ga = t.grad_mut(a);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(bias)) {
            Array& gb = t.grad_mut(bias);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) gb[c] += g.at2(r, c);
        }
    });
}

Var Tape::scale_rows(Var x, Var s) {
    const Array& xv = value(x);
    const Array& sv = value(s);
    if (sv.size() != xv.rows())
        throw Error("scale_rows: scale " + sv.shape_str() + " vs matrix " + xv.shape_str());
    Array out(xv.shape());
    int R = xv.rows(), C = xv.cols();
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.at2(r, c) = xv.at2(r, c) * sv[r];
    bool rg = requires_grad(x) || requires_grad(s);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [x, s, self, R, C](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(x)) {
            const Array& sv2 = t.value(s);
            Array& gx = t.grad_mut(x);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) gx.at2(r, c) += g.at2(r, c) * sv2[r];
        }
        if (t.requires_grad(s)) {
            const Array& xv2 = t.value(x);
            Array& gs = t.grad_mut(s);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) gs[r] += g.at2(r, c) * xv2.at2(r, c);
        }
    });
}

Var Tape::col(Var a, int j) {
    const Array& av = value(a);
    if (j < 0 || j >= av.cols())
        throw Error("col: index " + std::to_string(j) + " out of range for " + av.shape_str());
    int R = av.rows();
    Array out({R, 1});
    for (int r = 0; r < R; ++r) out[r] = av.at2(r, j);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, j, self, R](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        Array& ga = t.grad_mut(a);
        for (int r = 0; r < R; ++r) ga.at2(r, j) += g[r];
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    if (av.rows() != bv.rows())
        throw Error("concat_cols: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    int R = av.rows(), Ca = av.cols(), Cb = bv.cols();
    Array out({R, Ca + Cb});
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < Ca; ++c) out.at2(r, c) = av.at2(r, c);
        for (int c = 0; c < Cb; ++c) out.at2(r, Ca + c) = bv.at2(r, c);
    }
    bool rg = requires_grad(a) || requires_grad(b);
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), rg, [a, b, self, R, Ca, Cb](Tape& t) {
        const Array& g = t.grad(self);
        if (t.requires_grad(a)) {
            Array& ga = t.grad_mut(a);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < Ca; ++c) ga.at2(r, c) += g.at2(r, c);
        }
        if (t.requires_grad(b)) {
            Array& gb = t.grad_mut(b);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < Cb; ++c) gb.at2(r, c) += g.at2(r, Ca + c);
        }
    });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Array& av = value(a);
    Array out(std::move(shape));
    if (out.size() != av.size())
        throw Error("reshape: size mismatch " + av.shape_str() + " -> " + out.shape_str());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i];
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var Tape::softmax_rows(Var a) {
    const Array& av = value(a);
    Array out(av.shape());
    int R = av.rows(), C = av.cols();
    for (int r = 0; r < R; ++r) {
        float m = av.at2(r, 0);
        for (int c = 1; c < C; ++c) m = std::max(m, av.at2(r, c));
        float z = 0.0f;
        for (int c = 0; c < C; ++c) {
            float e = std::exp(av.at2(r, c) - m);
            out.at2(r, c) = e;
            z += e;
        }
        for (int c = 0; c < C; ++c) out.at2(r, c) /= z;
    }
    Var self{static_cast<int>(nodes_.size())};
    return emplace(std::move(out), requires_grad(a), [a, self, R, C](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        const Array& y = t.value(self);
        Array& ga = t.grad_mut(a);
        for (int r = 0; r < R; ++r) {
            float dot = 0.0f;
            for (int c = 0; c < C; ++c) dot += g.at2(r, c) * y.at2(r, c);
            for (int c = 0; c < C; ++c)
                ga.at2(r, c) += y.at2(r, c) * (g.at2(r, c) - dot);
        }
    });
}

Var Tape::sum(Var a) {
    const Array& av = value(a);
    double s = 0.0;
    for (int i = 0; i < av.size(); ++i) s += av[i];
    Var self{static_cast<int>(nodes_.size())};
    return emplace(Array::scalar(static_cast<float>(s)), requires_grad(a), [a, self](Tape& t) {
        if (!t.requires_grad(a)) return;
        float g = t.grad(self)[0];
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var Tape::mean(Var a) { return scale(sum(a), 1.0f / static_cast<float>(value(a).size())); }

Var Tape::mul_const(Var a, const Array& c) {
    const Array& av = value(a);
    require_same_shape(av, c, "mul_const");
    Array out(av.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = av[i] * c[i];
    Var self{static_cast<int>(nodes_.size())};
    Array cc = c;
    return emplace(std::move(out), requires_grad(a), [a, self, cc = std::move(cc)](Tape& t) {
        if (!t.requires_grad(a)) return;
        const Array& g = t.grad(self);
        Array& ga = t.grad_mut(a);
        for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * cc[i];
    });
}

Var Tape::masked_mae(Var pred, const Array& target, const Array& mask) {
    const Array& pv = value(pred);
    require_same_shape(pv, target, "masked_mae");
    require_same_shape(pv, mask, "masked_mae");
    double cnt = 0.0, s = 0.0;
    for (int i = 0; i < pv.size(); ++i) {
        cnt += mask[i];
        s += mask[i] * std::fabs(pv[i] - target[i]);
    }
    float denom = static_cast<float>(std::max(1.0, cnt));
    Var self{static_cast<int>(nodes_.size())};
    Array tgt = target, msk = mask;
    return emplace(Array::scalar(static_cast<float>(s) / denom), requires_grad(pred),
                   [pred, self, denom, tgt = std::move(tgt), msk = std::move(msk)](Tape& t) {
                       if (!t.requires_grad(pred)) return;
                       float g = t.grad(self)[0] / denom;
                       const Array& pv2 = t.value(pred);
                       Array& gp = t.grad_mut(pred);
                       for (int i = 0; i < pv2.size(); ++i) {
                           float d = pv2[i] - tgt[i];
                           gp[i] += g * msk[i] * (d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f));
                       }
                   });
}

Var Tape::bce_with_logits(Var logits, const Array& labels) {
    const Array& zv = value(logits);
    require_same_shape(zv, labels, "bce_with_logits");
    double s = 0.0;
    int n = zv.size();
    for (int i = 0; i < n; ++i) {
        float z = zv[i], y = labels[i];
        // log(1+e^z) - y*z, in the stable form max(z,0) - y*z + log(1+e^-|z|)
        s += std::max(z, 0.0f) - y * z + std::log1p(std::exp(-std::fabs(z)));
    }
    Var self{static_cast<int>(nodes_.size())};
    Array lab = labels;
    return emplace(Array::scalar(static_cast<float>(s / n)), requires_grad(logits),
                   [logits, self, n, lab = std::move(lab)](Tape& t) {
                       if (!t.requires_grad(logits)) return;
                       float g = t.grad(self)[0] / static_cast<float>(n);
                       const Array& zv2 = t.value(logits);
                       Array& gz = t.grad_mut(logits);
                       for (int i = 0; i < n; ++i) {
                           float z = zv2[i];
                           float p = z >= 0 ? 1.0f / (1.0f + std::exp(-z))
                                            : std::exp(z) / (1.0f + std::exp(z));
                           gz[i] += g * (p - lab[i]);
                       }
                   });
}

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
        throw Error("backward: invalid loss node");
    if (!value(loss).is_scalar())
        throw Error("backward: loss must be scalar, got " + value(loss).shape_str());
    grad_mut(loss)[0] += 1.0f;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.backprop && n.requires_grad) n.backprop(*this);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) n.grad.fill(0.0f);
}

float grad_check(const std::function<Var(Tape&, Var)>& f, const Array& x, float eps) {
    if (eps <= 0.0f) throw Error("grad_check: eps must be positive");
    Array analytic;
    {
        Tape t;
        Var vx = t.leaf(x, true);
        Var y = f(t, vx);
        if (!t.value(y).is_scalar()) throw Error("grad_check: f must return a scalar");
        t.backward(y);
        analytic = t.grad(vx);
    }
    auto eval = [&](const Array& xp) {
        Tape t;
        Var vx = t.leaf(xp, false);
        return t.value(f(t, vx))[0];
    };
    float max_rel = 0.0f;
    Array xp = x;
    for (int i = 0; i < x.size(); ++i) {
        float orig = xp[i];
        xp[i] = orig + eps;
        double fp = eval(xp);
        xp[i] = orig - eps;
        double fm = eval(xp);
        xp[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double a = analytic[i];
        double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
        max_rel = std::max(max_rel, static_cast<float>(rel));
    }
    return max_rel;
}

}  // namespace tsimp
