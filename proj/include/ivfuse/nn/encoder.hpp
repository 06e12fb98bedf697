#pragma once

#include <algorithm>
#include <vector>

#include "ivfuse/nn/layers.hpp"

namespace ivfuse::nn {

// 4-D activation plus its downsample factor relative to the network input.
// The whole stack runs at stride 1, so scale stays 1 throughout.
template <typename S>
struct FeatureMap {
    Var<S> data;
    int scale = 1;
};

struct SplitAttentionConfig {
    std::int64_t radix = 2;
    std::int64_t cardinality = 1;
    std::int64_t channels = 32;
    std::int64_t reduction = 4;

    void validate() const {
        if (radix < 1 || channels < 1) throw ConfigError("split attention: bad radix/channels");
        if (cardinality != 1)
            throw ConfigError("split attention: only cardinality 1 is supported");
        if (channels % cardinality != 0)
            throw ConfigError("split attention: channels not divisible by cardinality");
        if (reduction < 1) throw ConfigError("split attention: reduction must be >= 1");
    }
    std::int64_t hidden() const { return std::max<std::int64_t>(4, channels / reduction); }
};

// Residual block with radix-wise soft attention: each radix branch applies
// its own 3x3 conv; per-radix channel weights come from a squeeze network
// with a softmax across radix groups (sigmoid when radix == 1). The gated
// aggregate enters the shortcut scaled by a learned scalar, initialised to 0
// so a fresh block is the identity.
template <typename S>
struct SplitAttentionBlock {
    SplitAttentionConfig cfg;
    std::vector<Conv2d<S>> branch;
    Linear<S> fc1, fc2;
    Var<S> scale;

    SplitAttentionBlock() = default;
    SplitAttentionBlock(SplitAttentionConfig cfg_, Rng& rng) : cfg(cfg_) {
        cfg.validate();
        for (std::int64_t r = 0; r < cfg.radix; ++r)
            branch.emplace_back(cfg.channels, cfg.channels, 3, rng);
        fc1 = Linear<S>(cfg.hidden(), cfg.channels, rng);
        fc2 = Linear<S>(cfg.radix * cfg.channels, cfg.hidden(), rng);
        scale = init::scalar<S>(S(0));
    }

    Var<S> operator()(const Var<S>& x) const {
        if (x->shape().ndim != 4 || x->shape()[1] != cfg.channels)
            throw ConfigError("split attention block: expected " + std::to_string(cfg.channels) +
                              " channels, got input " + x->shape().str());
        std::int64_t h = x->shape()[2], w = x->shape()[3];

        std::vector<Var<S>> u;
        u.reserve(static_cast<std::size_t>(cfg.radix));
        for (auto& conv : branch) u.push_back(ad::relu(conv(x)));
        Var<S> usum = u[0];
        for (std::size_t r = 1; r < u.size(); ++r) usum = ad::add(usum, u[r]);

        auto squeezed = ad::global_avg_pool(usum);
        auto logits = fc2(ad::relu(fc1(squeezed)));  // N x (radix*C)
        Var<S> gate = cfg.radix == 1 ? ad::sigmoid(logits) : ad::group_softmax(logits, cfg.radix);

        Var<S> agg;
        for (std::int64_t r = 0; r < cfg.radix; ++r) {
            auto a_r = ad::slice_cols(gate, r * cfg.channels, (r + 1) * cfg.channels);
            auto g = ad::mul(u[static_cast<std::size_t>(r)], ad::broadcast_spatial(a_r, h, w));
            agg = r == 0 ? g : ad::add(agg, g);
        }
        return ad::add(x, ad::scale_by_scalar(agg, scale));
    }

    // Radix gate values for the current input, rows (n, c), cols radix.
    Tensor<S> gate_values(const Var<S>& x) const {
        auto usum = ad::relu(branch[0](x));
        for (std::size_t r = 1; r < branch.size(); ++r)
            usum = ad::add(usum, ad::relu(branch[r](x)));
        auto logits = fc2(ad::relu(fc1(ad::global_avg_pool(usum))));
        Var<S> gate = cfg.radix == 1 ? ad::sigmoid(logits) : ad::group_softmax(logits, cfg.radix);
        std::int64_t n = gate->shape()[0], c = cfg.channels;
        Tensor<S> out(Shape{n * c, cfg.radix});
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t r = 0; r < cfg.radix; ++r)
                    out.at(i * c + ch, r) = gate->value[i * cfg.radix * c + r * c + ch];
        return out;
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        for (std::size_t r = 0; r < branch.size(); ++r)
            branch[r].collect(prefix + "/branch" + std::to_string(r), out);
        fc1.collect(prefix + "/fc1", out);
        fc2.collect(prefix + "/fc2", out);
        out.add(prefix + "/scale", scale);
    }
};

struct EncoderConfig {
    std::int64_t channels = 32;
    std::int64_t blocks = 2;
    std::int64_t radix = 2;
    std::int64_t reduction = 4;

    SplitAttentionConfig block_config() const {
        return SplitAttentionConfig{radix, 1, channels, reduction};
    }
};

// Feature extractor: stem conv lifts the single luminance channel to the
// working width, split-attention blocks refine it, and a final 3x3 conv acts
// as the feature refinement stage. Stride 1 everywhere.
template <typename S>
struct Encoder {
    EncoderConfig cfg;
    Conv2d<S> stem;
    std::vector<SplitAttentionBlock<S>> blocks;
    Conv2d<S> refine;

    Encoder() = default;
    Encoder(EncoderConfig cfg_, Rng& rng)
        : cfg(cfg_), stem(cfg.channels, 1, 3, rng), refine(cfg.channels, cfg.channels, 3, rng) {
        for (std::int64_t i = 0; i < cfg.blocks; ++i)
            blocks.emplace_back(cfg.block_config(), rng);
    }

    FeatureMap<S> operator()(const Var<S>& image) const {
        if (image->shape().ndim != 4 || image->shape()[1] != 1)
            throw ValidationError("encoder: expected N,1,H,W input, got " +
                                  image->shape().str());
        if (!image->value.allFinite()) throw ValidationError("encoder: non-finite input");
        auto x = ad::relu(stem(image));
        for (const auto& b : blocks) x = b(x);
        return FeatureMap<S>{refine(x), 1};
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        stem.collect(prefix + "/stem", out);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + "/block" + std::to_string(i), out);
        refine.collect(prefix + "/refine", out);
    }
};

}  // namespace ivfuse::nn
