#pragma once

#include <optional>

#include "ivfuse/nn/decoder.hpp"

namespace ivfuse::nn {

struct NetConfig {
    std::int64_t channels = 32;  // encoder/decoder working width
    std::int64_t blocks = 2;
    std::int64_t radix = 2;
    std::int64_t reduction = 4;
    std::int64_t nat_window = 7;
    std::int64_t nat_heads = 2;
    std::int64_t sa_hidden = 16;
    std::int64_t sa_kernel = 3;
    bool shared_encoder = true;   // one BRE for both modalities
    bool shared_lsm = true;
    bool cross_branches = true;   // detail sum -> gate module, salient sum -> attention
    bool use_dsm = true;          // ablation switch

    NatConfig nat_config() const {
        if (channels % nat_heads != 0)
            throw ConfigError("net: channels must be divisible by nat_heads");
        return NatConfig{nat_window, nat_heads, channels / nat_heads};
    }
    EncoderConfig encoder_config() const { return {channels, blocks, radix, reduction}; }
    DecoderConfig decoder_config() const {
        return {channels, blocks, radix, reduction, sa_hidden, sa_kernel};
    }
};

// Encoder -> per-modality branch split -> cross-modal fusion -> decoder.
// Also provides the single-modality reconstruction paths (the other
// modality's branch features zeroed) used by the reconstruction losses.
template <typename S>
struct FusionNet {
    NetConfig cfg;
    Encoder<S> encoder;                    // shared, or infrared when unshared
    std::optional<Encoder<S>> encoder_vis;
    Lsm<S> lsm;                            // shared, or infrared when unshared
    std::optional<Lsm<S>> lsm_vis;
    FusionStage<S> fuse;
    Decoder<S> decoder;

    FusionNet() = default;
    FusionNet(NetConfig cfg_, Rng& rng)
        : cfg(cfg_),
          encoder(cfg.encoder_config(), rng),
          lsm(cfg.nat_config(), cfg.channels, cfg.reduction, rng),
          fuse(cfg.nat_config(), cfg.channels, cfg.reduction, rng),
          decoder(cfg.decoder_config(), rng) {
        if (!cfg.shared_encoder) encoder_vis.emplace(cfg.encoder_config(), rng);
        if (!cfg.shared_lsm) lsm_vis.emplace(cfg.nat_config(), cfg.channels, cfg.reduction, rng);
        apply_switches();
    }

    void apply_switches() {
        lsm.use_dsm = cfg.use_dsm;
        if (lsm_vis) lsm_vis->use_dsm = cfg.use_dsm;
        fuse.use_dsm = cfg.use_dsm;
        fuse.cross_branches = cfg.cross_branches;
    }

    const Encoder<S>& vis_encoder() const { return encoder_vis ? *encoder_vis : encoder; }
    const Lsm<S>& vis_lsm() const { return lsm_vis ? *lsm_vis : lsm; }

    BranchPair<S> zero_branches(const BranchPair<S>& like) const {
        auto z = [](const FeatureMap<S>& f) {
            return FeatureMap<S>{ad::make_const(Tensor<S>::zeros(f.data->shape())), f.scale};
        };
        return BranchPair<S>{z(like.detail), z(like.salient)};
    }

    // Full two-modality pass.
    DecodeOutput<S> operator()(const Var<S>& ir, const Var<S>& vis_y) const {
        if (ir->shape() != vis_y->shape())
            throw ValidationError("fusion net: modality shape mismatch " + ir->shape().str() +
                                  " vs " + vis_y->shape().str());
        auto branches_ir = lsm(encoder(ir));
        auto branches_vis = vis_lsm()(vis_encoder()(vis_y));
        auto [fd, fn] = fuse(branches_ir, branches_vis);
        return decoder(fd, fn);
    }

    // Single-modality reconstruction: the other branch pair is all zeros, so
    // the fusion sums reduce to this modality's features.
    DecodeOutput<S> reconstruct_ir(const Var<S>& ir) const {
        auto branches = lsm(encoder(ir));
        auto [fd, fn] = fuse(branches, zero_branches(branches));
        return decoder(fd, fn);
    }
    DecodeOutput<S> reconstruct_vis(const Var<S>& vis_y) const {
        auto branches = vis_lsm()(vis_encoder()(vis_y));
        auto [fd, fn] = fuse(branches, zero_branches(branches));
        return decoder(fd, fn);
    }

    void collect(ParamMap<S>& out) {
        encoder.collect(cfg.shared_encoder ? "encoder" : "encoder_ir", out);
        if (encoder_vis) encoder_vis->collect("encoder_vis", out);
        lsm.collect(cfg.shared_lsm ? "lsm" : "lsm_ir", out);
        if (lsm_vis) lsm_vis->collect("lsm_vis", out);
        fuse.collect("fuse", out);
        decoder.collect("decoder", out);
    }
};

}  // namespace ivfuse::nn
