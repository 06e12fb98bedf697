#pragma once

#include <vector>

#include "ivfuse/nn/lsm.hpp"

namespace ivfuse::nn {

// Spatial gate whose convolution parameters are generated per sample by a
// small conditioning network fed with global feature statistics (per-channel
// mean and std). The gate map doubles as the attention matrix consumed by
// the diversity loss, so it is returned alongside the gated features.
template <typename S>
struct SpatialAttention {
    std::int64_t channels = 0;
    std::int64_t kernel = 3;
    Linear<S> fc1, fc2;

    SpatialAttention() = default;
    SpatialAttention(std::int64_t channels_, std::int64_t hidden, std::int64_t kernel_, Rng& rng)
        : channels(channels_), kernel(kernel_), fc1(hidden, 2 * channels_, rng) {
        // zero-init output layer: the gate starts flat at 0.5 everywhere
        fc2 = Linear<S>::zero_init(channels_ * kernel_ * kernel_ + 1, hidden);
    }

    struct Out {
        Var<S> gated;  // N,C,H,W
        Var<S> att;    // N,1,H,W gate in (0,1)
    };

    Out operator()(const Var<S>& f) const {
        const Shape& s = f->shape();
        if (s.ndim != 4 || s[1] != channels)
            throw ConfigError("spatial attention: bad input " + s.str());
        if (!f->value.allFinite()) throw ValidationError("spatial attention: non-finite input");
        std::int64_t n = s[0], h = s[2], w = s[3];
        std::int64_t wcount = channels * kernel * kernel;

        std::vector<Var<S>> gated_parts, att_parts;
        for (std::int64_t i = 0; i < n; ++i) {
            auto fi = ad::slice_dim0(f, i);
            auto mean = ad::global_avg_pool(fi);  // 1 x C
            auto centred = ad::sub(fi, ad::broadcast_spatial(mean, h, w));
            auto var = ad::global_avg_pool(ad::mul(centred, centred));
            auto stdev = ad::sqrt_op(ad::add_scalar(var, S(1e-8)));
            auto stats = ad::concat_cols(std::vector<Var<S>>{mean, stdev});  // 1 x 2C

            auto pvec = fc2(ad::relu(fc1(stats)));  // 1 x (C*k*k + 1)
            auto wk = ad::reshape(ad::slice_cols(pvec, 0, wcount),
                                  Shape::nchw(1, channels, kernel, kernel));
            auto bk = ad::reshape(ad::slice_cols(pvec, wcount, wcount + 1), Shape{1});
            auto gate = ad::sigmoid(ad::conv2d(fi, wk, bk, Pad::Same));  // 1,1,H,W
            gated_parts.push_back(ad::mul(fi, ad::broadcast_channels(gate, channels)));
            att_parts.push_back(gate);
        }
        return Out{ad::concat_dim0(gated_parts), ad::concat_dim0(att_parts)};
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        fc1.collect(prefix + "/fc1", out);
        fc2.collect(prefix + "/fc2", out);
    }
};

struct DecoderConfig {
    std::int64_t channels = 32;
    std::int64_t blocks = 2;
    std::int64_t radix = 2;
    std::int64_t reduction = 4;
    std::int64_t sa_hidden = 16;
    std::int64_t sa_kernel = 3;
};

template <typename S>
struct DecodeOutput {
    Var<S> fused;  // N,1,H,W in (0,1)
    Var<S> att;    // N,1,H,W decoder gate
    Var<S> gated;  // gate (.) input, exposed for the attention-consistency check
};

// Mirrors the encoder structure: spatial attention, split-attention blocks,
// then a 1-channel projection squashed to (0,1).
template <typename S>
struct Decoder {
    DecoderConfig cfg;
    SpatialAttention<S> attention;
    std::vector<SplitAttentionBlock<S>> blocks;
    Conv2d<S> proj;

    Decoder() = default;
    Decoder(DecoderConfig cfg_, Rng& rng)
        : cfg(cfg_),
          attention(cfg.channels, cfg.sa_hidden, cfg.sa_kernel, rng),
          proj(1, cfg.channels, 3, rng) {
        SplitAttentionConfig bc{cfg.radix, 1, cfg.channels, cfg.reduction};
        for (std::int64_t i = 0; i < cfg.blocks; ++i) blocks.emplace_back(bc, rng);
    }

    DecodeOutput<S> operator()(const FeatureMap<S>& fd, const FeatureMap<S>& fn) const {
        if (fd.data->shape() != fn.data->shape())
            throw ValidationError("decoder: feature shape mismatch " + fd.data->shape().str() +
                                  " vs " + fn.data->shape().str());
        auto x = ad::add(fd.data, fn.data);
        auto sa = attention(x);
        auto y = sa.gated;
        for (const auto& b : blocks) y = b(y);
        auto fused = ad::sigmoid(proj(y));
        return DecodeOutput<S>{fused, sa.att, sa.gated};
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        attention.collect(prefix + "/sa", out);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + "/block" + std::to_string(i), out);
        proj.collect(prefix + "/proj", out);
    }
};

}  // namespace ivfuse::nn
