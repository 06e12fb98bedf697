#pragma once

#include "ivfuse/core/attention.hpp"
#include "ivfuse/nn/encoder.hpp"

namespace ivfuse::nn {

// Detail (windowed attention) and salient (channel-gated) features of one
// modality. Both share batch and spatial dims.
template <typename S>
struct BranchPair {
    FeatureMap<S> detail;   // attention branch
    FeatureMap<S> salient;  // channel-gate branch
};

struct NatConfig {
    std::int64_t window = 7;
    std::int64_t heads = 2;
    std::int64_t head_dim = 16;

    std::int64_t channels() const { return heads * head_dim; }
    void validate(std::int64_t c) const {
        if (window % 2 == 0) throw ConfigError("nat: window must be odd");
        if (heads * head_dim != c)
            throw ConfigError("nat: heads*head_dim must equal channel width");
    }
};

// Windowed self-attention with 1x1 q/k/v/out projections. Border windows are
// shifted inward so every query attends to exactly window^2 keys; with the
// window covering the whole map this is plain global self-attention.
template <typename S>
struct Nat {
    NatConfig cfg;
    Conv2d<S> proj_q, proj_k, proj_v, proj_out;

    Nat() = default;
    Nat(NatConfig cfg_, std::int64_t channels, Rng& rng)
        : cfg(cfg_),
          proj_q(channels, channels, 1, rng),
          proj_k(channels, channels, 1, rng),
          proj_v(channels, channels, 1, rng),
          proj_out(channels, channels, 1, rng) {
        cfg.validate(channels);
    }

    Var<S> operator()(const Var<S>& f) const {
        auto attended = ad::neighborhood_attention(proj_q(f), proj_k(f), proj_v(f), cfg.window,
                                                   cfg.heads);
        return proj_out(attended);
    }

    // Raw attention rows for the current input (tests and diagnostics).
    Tensor<S> attention_weights(const Var<S>& f) const {
        return ad::neighborhood_attention_weights(proj_q(f)->value, proj_k(f)->value, cfg.window,
                                                  cfg.heads);
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        proj_q.collect(prefix + "/q", out);
        proj_k.collect(prefix + "/k", out);
        proj_v.collect(prefix + "/v", out);
        proj_out.collect(prefix + "/out", out);
    }
};

// Channel gating: a conv lifts the input, dual 3x3 avg/max pooling feeds a
// squeeze MLP whose sigmoid output reweights the conv features, plus a
// residual path: out = w (.) F_c + F_c.
template <typename S>
struct Dsm {
    Conv2d<S> conv;
    Linear<S> fc1, fc2;
    std::int64_t pool_kernel = 3;

    Dsm() = default;
    Dsm(std::int64_t channels, std::int64_t reduction, Rng& rng)
        : conv(channels, channels, 3, rng),
          fc1(std::max<std::int64_t>(4, channels / reduction), channels, rng),
          fc2(channels, std::max<std::int64_t>(4, channels / reduction), rng) {}

    Var<S> operator()(const Var<S>& f) const {
        if (!f->value.allFinite()) throw ValidationError("dsm: non-finite input");
        auto fc = conv(f);
        std::int64_t h = fc->shape()[2], w = fc->shape()[3];
        auto pooled = ad::add(ad::avg_pool_same(fc, pool_kernel), ad::max_pool_same(fc, pool_kernel));
        auto squeezed = ad::global_avg_pool(pooled);
        auto gate = ad::sigmoid(fc2(ad::relu(fc1(squeezed))));  // (0,1)^{N x C}
        return ad::add(ad::mul(fc, ad::broadcast_spatial(gate, h, w)), fc);
    }

    Tensor<S> gate_values(const Var<S>& f) const {
        auto fc = conv(f);
        auto pooled = ad::add(ad::avg_pool_same(fc, pool_kernel), ad::max_pool_same(fc, pool_kernel));
        return ad::sigmoid(fc2(ad::relu(fc1(ad::global_avg_pool(pooled)))))->value;
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        conv.collect(prefix + "/conv", out);
        fc1.collect(prefix + "/fc1", out);
        fc2.collect(prefix + "/fc2", out);
    }
};

// Per-modality split: the two branches see the same encoder features and are
// computed independently. use_dsm = false routes the salient branch around
// the gate entirely (ablation switch).
template <typename S>
struct Lsm {
    Nat<S> nat;
    Dsm<S> dsm;
    bool use_dsm = true;

    Lsm() = default;
    Lsm(NatConfig nat_cfg, std::int64_t channels, std::int64_t reduction, Rng& rng)
        : nat(nat_cfg, channels, rng), dsm(channels, reduction, rng) {}

    BranchPair<S> operator()(const FeatureMap<S>& fb) const {
        BranchPair<S> out;
        out.detail = FeatureMap<S>{nat(fb.data), fb.scale};
        out.salient = FeatureMap<S>{use_dsm ? dsm(fb.data) : fb.data, fb.scale};
        return out;
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        nat.collect(prefix + "/nat", out);
        dsm.collect(prefix + "/dsm", out);
    }
};

// Cross-modal fusion: per-branch element-wise sums, then one more gate pass
// on the detail sum and one more attention pass on the salient sum
// (cross_branches = true). The uncrossed variant keeps each branch with its
// own module type.
template <typename S>
struct FusionStage {
    Dsm<S> dsm;
    Nat<S> nat;
    bool cross_branches = true;
    bool use_dsm = true;

    FusionStage() = default;
    FusionStage(NatConfig nat_cfg, std::int64_t channels, std::int64_t reduction, Rng& rng)
        : dsm(channels, reduction, rng), nat(nat_cfg, channels, rng) {}

    std::pair<FeatureMap<S>, FeatureMap<S>> operator()(const BranchPair<S>& ir,
                                                       const BranchPair<S>& vis) const {
        if (ir.detail.data->shape() != vis.detail.data->shape() ||
            ir.salient.data->shape() != vis.salient.data->shape())
            throw ValidationError("fuse_features: modality shape mismatch");
        auto detail_sum = ad::add(ir.detail.data, vis.detail.data);
        auto salient_sum = ad::add(ir.salient.data, vis.salient.data);
        auto through_dsm = [&](const Var<S>& x) { return use_dsm ? dsm(x) : x; };
        Var<S> fd, fn;
        if (cross_branches) {
            fd = through_dsm(detail_sum);
            fn = nat(salient_sum);
        } else {
            fd = through_dsm(salient_sum);
            fn = nat(detail_sum);
        }
        return {FeatureMap<S>{fd, ir.detail.scale}, FeatureMap<S>{fn, ir.salient.scale}};
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        dsm.collect(prefix + "/dsm", out);
        nat.collect(prefix + "/nat", out);
    }
};

}  // namespace ivfuse::nn
