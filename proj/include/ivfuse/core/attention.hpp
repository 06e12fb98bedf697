#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "ivfuse/core/ops.hpp"

namespace ivfuse::ad {

namespace detail {

// Shared forward core for neighborhood attention. Each query pixel attends to
// the k x k window clamped to lie fully inside the image, so every query sees
// exactly k*k keys. weights layout: ((n*heads + hd)*H*W + i*W + j)*k*k + t.
template <typename S>
void nat_forward_core(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>* v,
                      std::int64_t window, std::int64_t heads, std::vector<S>& weights,
                      Tensor<S>* out) {
    const Shape& s = q.shape();
    std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    std::int64_t hd = c / heads, kk = window * window, r = window / 2;
    S scale = S(1) / std::sqrt(static_cast<S>(hd));
    weights.assign(static_cast<std::size_t>(n * heads * h * w * kk), S(0));
    std::vector<S> scores(static_cast<std::size_t>(kk));
    for (std::int64_t sn = 0; sn < n; ++sn)
        for (std::int64_t hh = 0; hh < heads; ++hh) {
            std::int64_t cbase = hh * hd;
            for (std::int64_t i = 0; i < h; ++i) {
                std::int64_t ri = std::clamp<std::int64_t>(i - r, 0, h - window);
                for (std::int64_t j = 0; j < w; ++j) {
                    std::int64_t rj = std::clamp<std::int64_t>(j - r, 0, w - window);
                    const S* qp = q.data() + ((sn * c + cbase) * h + i) * w + j;
                    S mx = -std::numeric_limits<S>::infinity();
                    for (std::int64_t a = 0; a < window; ++a)
                        for (std::int64_t b = 0; b < window; ++b) {
                            const S* kp = k.data() + ((sn * c + cbase) * h + ri + a) * w + rj + b;
                            S dot = 0;
                            for (std::int64_t d = 0; d < hd; ++d)
                                dot += qp[d * h * w] * kp[d * h * w];
                            S sc = dot * scale;
                            scores[static_cast<std::size_t>(a * window + b)] = sc;
                            mx = std::max(mx, sc);
                        }
                    S z = 0;
                    for (std::int64_t t = 0; t < kk; ++t) {
                        S e = std::exp(scores[static_cast<std::size_t>(t)] - mx);
                        scores[static_cast<std::size_t>(t)] = e;
                        z += e;
                    }
                    std::int64_t wbase = ((sn * heads + hh) * h * w + i * w + j) * kk;
                    for (std::int64_t t = 0; t < kk; ++t)
                        weights[static_cast<std::size_t>(wbase + t)] =
                            scores[static_cast<std::size_t>(t)] / z;
                    if (v && out) {
                        S* op = out->data() + ((sn * c + cbase) * h + i) * w + j;
                        for (std::int64_t d = 0; d < hd; ++d) {
                            S acc = 0;
                            for (std::int64_t a = 0; a < window; ++a)
                                for (std::int64_t b = 0; b < window; ++b) {
                                    std::int64_t t = a * window + b;
                                    acc += weights[static_cast<std::size_t>(wbase + t)] *
                                           v->data()[((sn * c + cbase + d) * h + ri + a) * w + rj +
                                                     b];
                                }
                            op[d * h * w] = acc;
                        }
                    }
                }
            }
        }
}

template <typename S>
void nat_validate(const Shape& s, std::int64_t window, std::int64_t heads) {
    if (s.ndim != 4) throw ConfigError("neighborhood_attention: need NCHW");
    if (window % 2 == 0) throw ConfigError("neighborhood_attention: window must be odd");
    if (window > s[2] || window > s[3])
        throw ConfigError("neighborhood_attention: window " + std::to_string(window) +
                          " exceeds spatial extent " + s.str());
    if (heads <= 0 || s[1] % heads != 0)
        throw ConfigError("neighborhood_attention: channels not divisible by heads");
}

}  // namespace detail

// Fused neighborhood attention over projected q/k/v maps (all N,C,H,W with
// C = heads * head_dim). Softmax rows are exactly window^2 wide everywhere.
template <typename S>
Var<S> neighborhood_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                              std::int64_t window, std::int64_t heads) {
    detail::check_same_shape(q, k, "neighborhood_attention");
    detail::check_same_shape(q, v, "neighborhood_attention");
    detail::nat_validate<S>(q->shape(), window, heads);
    const Shape& s = q->shape();
    std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    std::int64_t hd = c / heads, kk = window * window, r = window / 2;
    S scale = S(1) / std::sqrt(static_cast<S>(hd));

    Tensor<S> out(s);
    auto weights = std::make_shared<std::vector<S>>();
    detail::nat_forward_core<S>(q->value, k->value, &v->value, window, heads, *weights, &out);

    return make_op<S>(std::move(out), {q, k, v},
                      [n, c, h, w, hd, heads, window, kk, r, scale, weights](Node<S>& nd) {
        auto& qp = nd.parents[0];
        auto& kp = nd.parents[1];
        auto& vp = nd.parents[2];
        if (qp->requires_grad) qp->ensure_grad();
        if (kp->requires_grad) kp->ensure_grad();
        if (vp->requires_grad) vp->ensure_grad();
        std::vector<S> da(static_cast<std::size_t>(kk));
        for (std::int64_t sn = 0; sn < n; ++sn)
            for (std::int64_t hh = 0; hh < heads; ++hh) {
                std::int64_t cbase = hh * hd;
                for (std::int64_t i = 0; i < h; ++i) {
                    std::int64_t ri = std::clamp<std::int64_t>(i - r, 0, h - window);
                    for (std::int64_t j = 0; j < w; ++j) {
                        std::int64_t rj = std::clamp<std::int64_t>(j - r, 0, w - window);
                        std::int64_t qoff = ((sn * c + cbase) * h + i) * w + j;
                        std::int64_t wbase = ((sn * heads + hh) * h * w + i * w + j) * kk;
                        const S* a = weights->data() + wbase;
                        // dV and dA
                        S dsum = 0;
                        for (std::int64_t t = 0; t < kk; ++t) {
                            std::int64_t ai = t / window, bj = t % window;
                            std::int64_t voff = ((sn * c + cbase) * h + ri + ai) * w + rj + bj;
                            S dat = 0;
                            for (std::int64_t d = 0; d < hd; ++d) {
                                S go = nd.grad[qoff + d * h * w];
                                dat += vp->value[voff + d * h * w] * go;
                                if (vp->requires_grad)
                                    vp->grad[voff + d * h * w] += a[t] * go;
                            }
                            da[static_cast<std::size_t>(t)] = dat;
                            dsum += a[t] * dat;
                        }
                        // softmax jacobian, then dQ and dK
                        for (std::int64_t t = 0; t < kk; ++t) {
                            S ds = a[t] * (da[static_cast<std::size_t>(t)] - dsum) * scale;
                            if (ds == S(0)) continue;
                            std::int64_t ai = t / window, bj = t % window;
                            std::int64_t koff = ((sn * c + cbase) * h + ri + ai) * w + rj + bj;
                            for (std::int64_t d = 0; d < hd; ++d) {
                                if (qp->requires_grad)
                                    qp->grad[qoff + d * h * w] += ds * kp->value[koff + d * h * w];
                                if (kp->requires_grad)
                                    kp->grad[koff + d * h * w] += ds * qp->value[qoff + d * h * w];
                            }
                        }
                    }
                }
            }
    });
}

// Attention weights only (no graph), for inspection and tests. Rows are
// (n, head, i, j) in row-major order, columns the window^2 keys.
template <typename S>
Tensor<S> neighborhood_attention_weights(const Tensor<S>& q, const Tensor<S>& k,
                                         std::int64_t window, std::int64_t heads) {
    if (q.shape() != k.shape())
        throw ValidationError("neighborhood_attention_weights: shape mismatch");
    detail::nat_validate<S>(q.shape(), window, heads);
    const Shape& s = q.shape();
    std::vector<S> weights;
    detail::nat_forward_core<S>(q, k, nullptr, window, heads, weights, nullptr);
    Tensor<S> out(Shape{s[0] * heads * s[2] * s[3], window * window});
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = weights[static_cast<std::size_t>(i)];
    return out;
}

}  // namespace ivfuse::ad
