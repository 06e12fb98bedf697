#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ivfuse/core/graph.hpp"

// Differentiable primitives. Forward functions build graph nodes; each node's
// backward_op accumulates into its parents. Shapes are validated eagerly so a
// mismatch fails at the op that caused it.

namespace ivfuse::ad {

enum class Pad { Same, Valid };

namespace detail {

template <typename S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* what) {
    if (a->shape() != b->shape())
        throw ValidationError(std::string(what) + ": shape mismatch " + a->shape().str() +
                              " vs " + b->shape().str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out(a->shape());
    out.array() = a->value.array() + b->value.array();
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<S> out(a->shape());
    out.array() = a->value.array() - b->value.array();
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.array() -= n.grad.array();
        }
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> out(a->shape());
    out.array() = a->value.array() * b->value.array();
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.array() += n.grad.array() * n.parents[1]->value.array();
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.array() += n.grad.array() * n.parents[0]->value.array();
        }
    });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape(a, b, "div");
    Tensor<S> out(a->shape());
    out.array() = a->value.array() / b->value.array();
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
        const auto& bv = n.parents[1]->value.array();
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.array() += n.grad.array() / bv;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.array() -=
                n.grad.array() * n.parents[0]->value.array() / (bv * bv);
        }
    });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
    Tensor<S> out(a->shape());
    out.array() = a->value.array() + c;
    return make_op<S>(std::move(out), {a}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    });
}

template <typename S>
Var<S> mul_scalar(const Var<S>& a, S c) {
    Tensor<S> out(a->shape());
    out.array() = a->value.array() * c;
    return make_op<S>(std::move(out), {a}, [c](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.array() += n.grad.array() * c;
        }
    });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
    return mul_scalar(a, S(-1));
}

// y = x * s where s is a learned one-element tensor.
template <typename S>
Var<S> scale_by_scalar(const Var<S>& x, const Var<S>& s) {
    if (s->value.size() != 1) throw ValidationError("scale_by_scalar: scale must be scalar");
    Tensor<S> out(x->shape());
    out.array() = x->value.array() * s->value[0];
    return make_op<S>(std::move(out), {x, s}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.array() += n.grad.array() * n.parents[1]->value[0];
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad[0] += (n.grad.array() * n.parents[0]->value.array()).sum();
        }
    });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
    Tensor<S> out(a->shape());
    out.array() = a->value.array().max(S(0));
    return make_op<S>(std::move(out), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() +=
            n.grad.array() * (n.parents[0]->value.array() > S(0)).template cast<S>();
    });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out(a->shape());
    out.array() = S(1) / (S(1) + (-a->value.array()).exp());
    return make_op<S>(std::move(out), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        const auto& y = n.value.array();
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad.array() * y * (S(1) - y);
    });
}

template <typename S>
Var<S> sqrt_op(const Var<S>& a) {
    Tensor<S> out(a->shape());
    out.array() = a->value.array().sqrt();
    return make_op<S>(std::move(out), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad.array() / (S(2) * n.value.array());
    });
}

template <typename S>
Var<S> log_op(const Var<S>& a) {
    Tensor<S> out(a->shape());
    out.array() = a->value.array().log();
    return make_op<S>(std::move(out), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad.array() / n.parents[0]->value.array();
    });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
    if (shape.count() != a->value.size())
        throw ValidationError("reshape: count mismatch " + a->shape().str() + " -> " +
                              shape.str());
    Tensor<S> out(shape, a->value.array());
    Shape old = a->shape();
    return make_op<S>(std::move(out), {a}, [old](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->accumulate(Tensor<S>(old, n.grad.array()));
    });
}

// Index i along dim 0; result keeps ndim with leading dim 1.
template <typename S>
Var<S> slice_dim0(const Var<S>& a, std::int64_t i) {
    const Shape& s = a->shape();
    if (s.ndim < 1 || i < 0 || i >= s[0]) throw ValidationError("slice_dim0: index out of range");
    std::int64_t stride = s.count() / s[0];
    Shape os = s;
    os.d[0] = 1;
    Tensor<S> out(os);
    out.array() = a->value.array().segment(i * stride, stride);
    return make_op<S>(std::move(out), {a}, [i, stride](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array().segment(i * stride, stride) += n.grad.array();
    });
}

template <typename S>
Var<S> concat_dim0(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ValidationError("concat_dim0: empty");
    Shape s0 = parts[0]->shape();
    std::int64_t inner = s0.count() / s0[0];
    std::int64_t total0 = 0;
    for (const auto& p : parts) {
        const Shape& ps = p->shape();
        if (ps.ndim != s0.ndim || ps.count() / ps[0] != inner)
            throw ValidationError("concat_dim0: incompatible shapes");
        total0 += ps[0];
    }
    Shape os = s0;
    os.d[0] = total0;
    Tensor<S> out(os);
    std::int64_t off = 0;
    for (const auto& p : parts) {
        out.array().segment(off, p->value.size()) = p->value.array();
        off += p->value.size();
    }
    return make_op<S>(std::move(out), parts, [](Node<S>& n) {
        std::int64_t off = 0;
        for (auto& p : n.parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad.array() += n.grad.array().segment(off, p->value.size());
            }
            off += p->value.size();
        }
    });
}

// 2-D column slice [c0, c1).
template <typename S>
Var<S> slice_cols(const Var<S>& a, std::int64_t c0, std::int64_t c1) {
    const Shape& s = a->shape();
    if (s.ndim != 2 || c0 < 0 || c1 > s[1] || c0 >= c1)
        throw ValidationError("slice_cols: bad range");
    std::int64_t rows = s[0], cols = s[1], w = c1 - c0;
    Tensor<S> out(Shape{rows, w});
    for (std::int64_t r = 0; r < rows; ++r)
        out.array().segment(r * w, w) = a->value.array().segment(r * cols + c0, w);
    return make_op<S>(std::move(out), {a}, [rows, cols, c0, w](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
            n.parents[0]->grad.array().segment(r * cols + c0, w) +=
                n.grad.array().segment(r * w, w);
    });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: empty");
    std::int64_t rows = parts[0]->shape()[0];
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p->shape().ndim != 2 || p->shape()[0] != rows)
            throw ValidationError("concat_cols: incompatible shapes");
        total += p->shape()[1];
    }
    Tensor<S> out(Shape{rows, total});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::int64_t w = p->shape()[1];
        for (std::int64_t r = 0; r < rows; ++r)
            out.array().segment(r * total + off, w) = p->value.array().segment(r * w, w);
        off += w;
    }
    return make_op<S>(std::move(out), parts, [rows, total](Node<S>& n) {
        std::int64_t off = 0;
        for (auto& p : n.parents) {
            std::int64_t w = p->shape()[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    p->grad.array().segment(r * w, w) +=
                        n.grad.array().segment(r * total + off, w);
            }
            off += w;
        }
    });
}

// Rows of a 2-D tensor selected by index list.
template <typename S>
Var<S> take_rows(const Var<S>& a, std::vector<std::int64_t> idx) {
    const Shape& s = a->shape();
    if (s.ndim != 2) throw ValidationError("take_rows: need 2-D input");
    std::int64_t cols = s[1];
    for (auto i : idx)
        if (i < 0 || i >= s[0]) throw ValidationError("take_rows: index out of range");
    Tensor<S> out(Shape{static_cast<std::int64_t>(idx.size()), cols});
    for (std::size_t r = 0; r < idx.size(); ++r)
        out.array().segment(static_cast<std::int64_t>(r) * cols, cols) =
            a->value.array().segment(idx[r] * cols, cols);
    return make_op<S>(std::move(out), {a}, [idx, cols](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
            n.parents[0]->grad.array().segment(idx[r] * cols, cols) +=
                n.grad.array().segment(static_cast<std::int64_t>(r) * cols, cols);
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_all(const Var<S>& a) {
    Tensor<S> out = Tensor<S>::scalar(a->value.array().sum());
    return make_op<S>(std::move(out), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad[0];
    });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    if (a->value.size() == 0) throw ValidationError("mean_all: empty tensor");
    S inv = S(1) / static_cast<S>(a->value.size());
    Tensor<S> out = Tensor<S>::scalar(a->value.array().sum() * inv);
    return make_op<S>(std::move(out), {a}, [inv](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad[0] * inv;
    });
}

// Per-row max of a 2-D tensor -> 1-D tensor of length rows.
template <typename S>
Var<S> row_max(const Var<S>& a) {
    const Shape& s = a->shape();
    if (s.ndim != 2 || s.count() == 0) throw ValidationError("row_max: need non-empty 2-D");
    std::int64_t rows = s[0], cols = s[1];
    Tensor<S> out(Shape{rows});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t best = 0;
        S bv = a->value[r * cols];
        for (std::int64_t c = 1; c < cols; ++c) {
            S v = a->value[r * cols + c];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out[r] = bv;
        arg[static_cast<std::size_t>(r)] = best;
    }
    return make_op<S>(std::move(out), {a}, [arg, cols](Node<S>& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < arg.size(); ++r)
            n.parents[0]->grad[static_cast<std::int64_t>(r) * cols + arg[r]] +=
                n.grad[static_cast<std::int64_t>(r)];
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

// y = x * W^T + b with x: N x In, W: Out x In, b: Out (may be null).
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
    const Shape& xs = x->shape();
    const Shape& ws = w->shape();
    if (xs.ndim != 2 || ws.ndim != 2 || xs[1] != ws[1])
        throw ConfigError("linear: incompatible shapes " + xs.str() + " and " + ws.str());
    std::int64_t n = xs[0], in = xs[1], out_f = ws[0];
    if (b && b->shape().count() != out_f) throw ConfigError("linear: bias size mismatch");
    Tensor<S> out(Shape{n, out_f});
    out.mat(n, out_f).noalias() = x->value.mat(n, in) * w->value.mat(out_f, in).transpose();
    if (b)
        for (std::int64_t r = 0; r < n; ++r)
            out.array().segment(r * out_f, out_f) += b->value.array();
    std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
    return make_op<S>(std::move(out), std::move(parents), [n, in, out_f](Node<S>& n_) {
        auto g = n_.grad.mat(n, out_f);
        auto& xp = n_.parents[0];
        auto& wp = n_.parents[1];
        if (xp->requires_grad) {
            xp->ensure_grad();
            xp->grad.mat(n, in).noalias() += g * wp->value.mat(out_f, in);
        }
        if (wp->requires_grad) {
            wp->ensure_grad();
            wp->grad.mat(out_f, in).noalias() += g.transpose() * xp->value.mat(n, in);
        }
        if (n_.parents.size() > 2 && n_.parents[2]->requires_grad) {
            auto& bp = n_.parents[2];
            bp->ensure_grad();
            for (std::int64_t r = 0; r < n; ++r)
                bp->grad.array() += n_.grad.array().segment(r * out_f, out_f);
        }
    });
}

// ---------------------------------------------------------------------------
// convolution and pooling (NCHW, stride 1)
// ---------------------------------------------------------------------------

namespace detail {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, Pad pad) {
    return pad == Pad::Same ? in : in - k + 1;
}

// im2col for one sample: cols(ckk, ho*wo), zero padding outside.
template <typename S>
void im2col(const S* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
            Pad pad, Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& cols) {
    std::int64_t ho = conv_out_extent(h, k, pad);
    std::int64_t wo = conv_out_extent(w, k, pad);
    std::int64_t off = pad == Pad::Same ? -(k / 2) : 0;
    cols.setZero(cin * k * k, ho * wo);
    for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t ki = 0; ki < k; ++ki)
            for (std::int64_t kj = 0; kj < k; ++kj) {
                std::int64_t row = (c * k + ki) * k + kj;
                for (std::int64_t i = 0; i < ho; ++i) {
                    std::int64_t si = i + off + ki;
                    if (si < 0 || si >= h) continue;
                    for (std::int64_t j = 0; j < wo; ++j) {
                        std::int64_t sj = j + off + kj;
                        if (sj < 0 || sj >= w) continue;
                        cols(row, i * wo + j) = x[(c * h + si) * w + sj];
                    }
                }
            }
}

template <typename S>
void col2im_add(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& cols, std::int64_t cin,
                std::int64_t h, std::int64_t w, std::int64_t k, Pad pad, S* dx) {
    std::int64_t ho = conv_out_extent(h, k, pad);
    std::int64_t wo = conv_out_extent(w, k, pad);
    std::int64_t off = pad == Pad::Same ? -(k / 2) : 0;
    for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t ki = 0; ki < k; ++ki)
            for (std::int64_t kj = 0; kj < k; ++kj) {
                std::int64_t row = (c * k + ki) * k + kj;
                for (std::int64_t i = 0; i < ho; ++i) {
                    std::int64_t si = i + off + ki;
                    if (si < 0 || si >= h) continue;
                    for (std::int64_t j = 0; j < wo; ++j) {
                        std::int64_t sj = j + off + kj;
                        if (sj < 0 || sj >= w) continue;
                        dx[(c * h + si) * w + sj] += cols(row, i * wo + j);
                    }
                }
            }
}

}  // namespace detail

// 2-D convolution, stride 1, square kernel. x: N,Cin,H,W; w: Cout,Cin,k,k;
// b: Cout or null.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, Pad pad) {
    const Shape& xs = x->shape();
    const Shape& ws = w->shape();
    if (xs.ndim != 4 || ws.ndim != 4) throw ConfigError("conv2d: need 4-D tensors");
    if (xs[1] != ws[1])
        throw ConfigError("conv2d: channel mismatch input " + xs.str() + " kernel " + ws.str());
    if (ws[2] != ws[3]) throw ConfigError("conv2d: kernel must be square");
    std::int64_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    std::int64_t cout = ws[0], k = ws[2];
    if (pad == Pad::Same && k % 2 == 0) throw ConfigError("conv2d: same padding needs odd kernel");
    std::int64_t ho = detail::conv_out_extent(h, k, pad);
    std::int64_t wo = detail::conv_out_extent(wd, k, pad);
    if (ho <= 0 || wo <= 0) throw ConfigError("conv2d: kernel larger than input");
    if (b && b->shape().count() != cout) throw ConfigError("conv2d: bias size mismatch");

    Tensor<S> out(Shape::nchw(n, cout, ho, wo));
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> cols;
    auto wmat = w->value.mat(cout, cin * k * k);
    for (std::int64_t s = 0; s < n; ++s) {
        detail::im2col<S>(x->value.data() + s * cin * h * wd, cin, h, wd, k, pad, cols);
        out.mat(n * cout, ho * wo).middleRows(s * cout, cout).noalias() = wmat * cols;
    }
    if (b)
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t c = 0; c < cout; ++c)
                out.array().segment((s * cout + c) * ho * wo, ho * wo) += b->value[c];

    std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
    return make_op<S>(std::move(out), std::move(parents),
                      [n, cin, h, wd, cout, k, pad, ho, wo](Node<S>& nd) {
        auto& xp = nd.parents[0];
        auto& wp = nd.parents[1];
        Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> cols, dcols;
        auto wmat = wp->value.mat(cout, cin * k * k);
        if (xp->requires_grad) xp->ensure_grad();
        if (wp->requires_grad) wp->ensure_grad();
        for (std::int64_t s = 0; s < n; ++s) {
            auto g = nd.grad.mat(n * cout, ho * wo).middleRows(s * cout, cout);
            if (wp->requires_grad || xp->requires_grad)
                detail::im2col<S>(xp->value.data() + s * cin * h * wd, cin, h, wd, k, pad, cols);
            if (wp->requires_grad)
                wp->grad.mat(cout, cin * k * k).noalias() += g * cols.transpose();
            if (xp->requires_grad) {
                dcols.noalias() = wmat.transpose() * g;
                detail::col2im_add<S>(dcols, cin, h, wd, k, pad,
                                      xp->grad.data() + s * cin * h * wd);
            }
        }
        if (nd.parents.size() > 2 && nd.parents[2]->requires_grad) {
            auto& bp = nd.parents[2];
            bp->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t c = 0; c < cout; ++c)
                    bp->grad[c] += nd.grad.array().segment((s * cout + c) * ho * wo, ho * wo).sum();
        }
    });
}

// Average pooling, stride 1, same padding: mean over the k x k window
// intersected with the image (count includes only valid pixels).
template <typename S>
Var<S> avg_pool_same(const Var<S>& x, std::int64_t k) {
    const Shape& s = x->shape();
    if (s.ndim != 4) throw ConfigError("avg_pool_same: need NCHW");
    if (k % 2 == 0) throw ConfigError("avg_pool_same: kernel must be odd");
    std::int64_t n = s[0], c = s[1], h = s[2], w = s[3], r = k / 2;
    Tensor<S> out(s);
    for (std::int64_t p = 0; p < n * c; ++p) {
        const S* xin = x->value.data() + p * h * w;
        S* yout = out.data() + p * h * w;
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                std::int64_t i0 = std::max<std::int64_t>(0, i - r), i1 = std::min(h - 1, i + r);
                std::int64_t j0 = std::max<std::int64_t>(0, j - r), j1 = std::min(w - 1, j + r);
                S acc = 0;
                for (std::int64_t a = i0; a <= i1; ++a)
                    for (std::int64_t bcol = j0; bcol <= j1; ++bcol) acc += xin[a * w + bcol];
                yout[i * w + j] = acc / static_cast<S>((i1 - i0 + 1) * (j1 - j0 + 1));
            }
    }
    return make_op<S>(std::move(out), {x}, [n, c, h, w, r](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        for (std::int64_t p = 0; p < n * c; ++p) {
            const S* g = nd.grad.data() + p * h * w;
            S* dx = nd.parents[0]->grad.data() + p * h * w;
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    std::int64_t i0 = std::max<std::int64_t>(0, i - r), i1 = std::min(h - 1, i + r);
                    std::int64_t j0 = std::max<std::int64_t>(0, j - r), j1 = std::min(w - 1, j + r);
                    S gv = g[i * w + j] / static_cast<S>((i1 - i0 + 1) * (j1 - j0 + 1));
                    for (std::int64_t a = i0; a <= i1; ++a)
                        for (std::int64_t bcol = j0; bcol <= j1; ++bcol) dx[a * w + bcol] += gv;
                }
        }
    });
}

// Max pooling, stride 1, same padding; gradient routes to the first argmax.
template <typename S>
Var<S> max_pool_same(const Var<S>& x, std::int64_t k) {
    const Shape& s = x->shape();
    if (s.ndim != 4) throw ConfigError("max_pool_same: need NCHW");
    if (k % 2 == 0) throw ConfigError("max_pool_same: kernel must be odd");
    std::int64_t n = s[0], c = s[1], h = s[2], w = s[3], r = k / 2;
    Tensor<S> out(s);
    std::vector<std::int64_t> arg(static_cast<std::size_t>(s.count()));
    for (std::int64_t p = 0; p < n * c; ++p) {
        const S* xin = x->value.data() + p * h * w;
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                std::int64_t i0 = std::max<std::int64_t>(0, i - r), i1 = std::min(h - 1, i + r);
                std::int64_t j0 = std::max<std::int64_t>(0, j - r), j1 = std::min(w - 1, j + r);
                S best = xin[i0 * w + j0];
                std::int64_t bi = i0 * w + j0;
                for (std::int64_t a = i0; a <= i1; ++a)
                    for (std::int64_t bcol = j0; bcol <= j1; ++bcol)
                        if (xin[a * w + bcol] > best) {
                            best = xin[a * w + bcol];
                            bi = a * w + bcol;
                        }
                out[p * h * w + i * w + j] = best;
                arg[static_cast<std::size_t>(p * h * w + i * w + j)] = p * h * w + bi;
            }
    }
    return make_op<S>(std::move(out), {x}, [arg](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < arg.size(); ++i)
            nd.parents[0]->grad[arg[i]] += nd.grad[static_cast<std::int64_t>(i)];
    });
}

// N,C,H,W -> N,C spatial mean.
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
    const Shape& s = x->shape();
    if (s.ndim != 4) throw ConfigError("global_avg_pool: need NCHW");
    std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    Tensor<S> out(Shape{n, c});
    for (std::int64_t p = 0; p < n * c; ++p)
        out[p] = x->value.array().segment(p * hw, hw).sum() / static_cast<S>(hw);
    return make_op<S>(std::move(out), {x}, [hw](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        std::int64_t pc = nd.grad.size();
        for (std::int64_t p = 0; p < pc; ++p)
            nd.parents[0]->grad.array().segment(p * hw, hw) += nd.grad[p] / static_cast<S>(hw);
    });
}

// N,C -> N,C,H,W broadcast.
template <typename S>
Var<S> broadcast_spatial(const Var<S>& v, std::int64_t h, std::int64_t w) {
    const Shape& s = v->shape();
    if (s.ndim != 2) throw ConfigError("broadcast_spatial: need N x C");
    std::int64_t n = s[0], c = s[1], hw = h * w;
    Tensor<S> out(Shape::nchw(n, c, h, w));
    for (std::int64_t p = 0; p < n * c; ++p)
        out.array().segment(p * hw, hw).setConstant(v->value[p]);
    return make_op<S>(std::move(out), {v}, [hw](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        std::int64_t pc = nd.parents[0]->value.size();
        for (std::int64_t p = 0; p < pc; ++p)
            nd.parents[0]->grad[p] += nd.grad.array().segment(p * hw, hw).sum();
    });
}

// Broadcast a per-sample 1-channel map over C channels: N,1,H,W -> N,C,H,W.
template <typename S>
Var<S> broadcast_channels(const Var<S>& g, std::int64_t c) {
    const Shape& s = g->shape();
    if (s.ndim != 4 || s[1] != 1) throw ConfigError("broadcast_channels: need N,1,H,W");
    std::int64_t n = s[0], hw = s[2] * s[3];
    Tensor<S> out(Shape::nchw(n, c, s[2], s[3]));
    for (std::int64_t sn = 0; sn < n; ++sn)
        for (std::int64_t ch = 0; ch < c; ++ch)
            out.array().segment((sn * c + ch) * hw, hw) = g->value.array().segment(sn * hw, hw);
    return make_op<S>(std::move(out), {g}, [n, c, hw](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        for (std::int64_t sn = 0; sn < n; ++sn)
            for (std::int64_t ch = 0; ch < c; ++ch)
                nd.parents[0]->grad.array().segment(sn * hw, hw) +=
                    nd.grad.array().segment((sn * c + ch) * hw, hw);
    });
}

// Mean over a pixel rectangle [r0,r1) x [c0,c1): N,C,H,W -> N,C.
template <typename S>
Var<S> rect_mean(const Var<S>& x, std::int64_t r0, std::int64_t r1, std::int64_t c0,
                 std::int64_t c1) {
    const Shape& s = x->shape();
    if (s.ndim != 4) throw ConfigError("rect_mean: need NCHW");
    if (r0 < 0 || c0 < 0 || r1 > s[2] || c1 > s[3] || r0 >= r1 || c0 >= c1)
        throw ValidationError("rect_mean: empty or out-of-range rect");
    std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    S inv = S(1) / static_cast<S>((r1 - r0) * (c1 - c0));
    Tensor<S> out(Shape{n, c});
    for (std::int64_t p = 0; p < n * c; ++p) {
        S acc = 0;
        const S* xin = x->value.data() + p * h * w;
        for (std::int64_t i = r0; i < r1; ++i)
            for (std::int64_t j = c0; j < c1; ++j) acc += xin[i * w + j];
        out[p] = acc * inv;
    }
    return make_op<S>(std::move(out), {x}, [r0, r1, c0, c1, h, w, inv](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        std::int64_t pc = nd.grad.size();
        for (std::int64_t p = 0; p < pc; ++p) {
            S gv = nd.grad[p] * inv;
            S* dx = nd.parents[0]->grad.data() + p * h * w;
            for (std::int64_t i = r0; i < r1; ++i)
                for (std::int64_t j = c0; j < c1; ++j) dx[i * w + j] += gv;
        }
    });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

// Softmax across `groups` blocks of a N x (groups*C) tensor: entries
// x(n, g*C + c) compete over g for each (n, c).
template <typename S>
Var<S> group_softmax(const Var<S>& x, std::int64_t groups) {
    const Shape& s = x->shape();
    if (s.ndim != 2 || s[1] % groups != 0) throw ConfigError("group_softmax: bad shape");
    std::int64_t n = s[0], c = s[1] / groups;
    Tensor<S> out(s);
    for (std::int64_t sn = 0; sn < n; ++sn)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            S mx = x->value[sn * groups * c + ch];
            for (std::int64_t g = 1; g < groups; ++g)
                mx = std::max(mx, x->value[sn * groups * c + g * c + ch]);
            S z = 0;
            for (std::int64_t g = 0; g < groups; ++g) {
                S e = std::exp(x->value[sn * groups * c + g * c + ch] - mx);
                out[sn * groups * c + g * c + ch] = e;
                z += e;
            }
            for (std::int64_t g = 0; g < groups; ++g) out[sn * groups * c + g * c + ch] /= z;
        }
    return make_op<S>(std::move(out), {x}, [n, c, groups](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        for (std::int64_t sn = 0; sn < n; ++sn)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                S dot = 0;
                for (std::int64_t g = 0; g < groups; ++g) {
                    std::int64_t i = sn * groups * c + g * c + ch;
                    dot += nd.grad[i] * nd.value[i];
                }
                for (std::int64_t g = 0; g < groups; ++g) {
                    std::int64_t i = sn * groups * c + g * c + ch;
                    nd.parents[0]->grad[i] += nd.value[i] * (nd.grad[i] - dot);
                }
            }
    });
}

// Log-softmax over the channel dim of N,C,H,W (per pixel).
template <typename S>
Var<S> log_softmax_channels(const Var<S>& x) {
    const Shape& s = x->shape();
    if (s.ndim != 4) throw ConfigError("log_softmax_channels: need NCHW");
    std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    Tensor<S> out(s);
    for (std::int64_t sn = 0; sn < n; ++sn)
        for (std::int64_t p = 0; p < hw; ++p) {
            S mx = x->value[sn * c * hw + p];
            for (std::int64_t ch = 1; ch < c; ++ch)
                mx = std::max(mx, x->value[(sn * c + ch) * hw + p]);
            S z = 0;
            for (std::int64_t ch = 0; ch < c; ++ch)
                z += std::exp(x->value[(sn * c + ch) * hw + p] - mx);
            S lz = std::log(z) + mx;
            for (std::int64_t ch = 0; ch < c; ++ch)
                out[(sn * c + ch) * hw + p] = x->value[(sn * c + ch) * hw + p] - lz;
        }
    return make_op<S>(std::move(out), {x}, [n, c, hw](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        for (std::int64_t sn = 0; sn < n; ++sn)
            for (std::int64_t p = 0; p < hw; ++p) {
                S gsum = 0;
                for (std::int64_t ch = 0; ch < c; ++ch) gsum += nd.grad[(sn * c + ch) * hw + p];
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    std::int64_t i = (sn * c + ch) * hw + p;
                    nd.parents[0]->grad[i] += nd.grad[i] - std::exp(nd.value[i]) * gsum;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// losses helpers
// ---------------------------------------------------------------------------

// Sum over all entries of smooth-L1(pred - target): 0.5 d^2 for |d| < 1,
// |d| - 0.5 otherwise. Target is a plain tensor (never differentiated).
template <typename S>
Var<S> smooth_l1_sum(const Var<S>& pred, const Tensor<S>& target) {
    if (pred->shape() != target.shape())
        throw ValidationError("smooth_l1_sum: shape mismatch " + pred->shape().str() + " vs " +
                              target.shape().str());
    S acc = 0;
    for (std::int64_t i = 0; i < pred->value.size(); ++i) {
        S d = pred->value[i] - target[i];
        S a = std::abs(d);
        acc += a < S(1) ? S(0.5) * d * d : a - S(0.5);
    }
    Tensor<S> tgt = target;
    return make_op<S>(Tensor<S>::scalar(acc), {pred}, [tgt](Node<S>& nd) {
        if (!nd.parents[0]->requires_grad) return;
        nd.parents[0]->ensure_grad();
        S g = nd.grad[0];
        for (std::int64_t i = 0; i < nd.parents[0]->value.size(); ++i) {
            S d = nd.parents[0]->value[i] - tgt[i];
            nd.parents[0]->grad[i] += g * (std::abs(d) < S(1) ? d : (d > 0 ? S(1) : S(-1)));
        }
    });
}

}  // namespace ivfuse::ad
