#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ivfuse/data/dataset.hpp"
#include "ivfuse/nn/layers.hpp"

namespace ivfuse::nn {

struct HeadConfig {
    std::int64_t channels = 8;
    int class_count = 3;
};

// Box deltas aligned one-to-one with the annotation's box order.
template <typename S>
struct DetectionPrediction {
    Var<S> deltas;  // n_boxes x 4 (empty when there are no boxes)
    std::size_t count = 0;
};

// Small conv backbone, per-box region pooling inside the ground-truth rect,
// linear regressor for the 4 deltas. Stands in for a full two-stage detector
// behind the same image-in / deltas-out interface.
template <typename S>
struct DetectionHead {
    HeadConfig cfg;
    Conv2d<S> c1, c2;
    Linear<S> fc;
    bool trainable = true;

    DetectionHead() = default;
    DetectionHead(HeadConfig cfg_, Rng& rng)
        : cfg(cfg_),
          c1(cfg.channels, 1, 3, rng),
          c2(cfg.channels, cfg.channels, 3, rng),
          fc(4, cfg.channels, rng) {}

    DetectionPrediction<S> operator()(const Var<S>& image,
                                      const data::AnnotationSet& gt) const {
        const Shape& s = image->shape();
        if (s.ndim != 4 || s[0] != 1 || s[1] != 1)
            throw ValidationError("detect: expected 1,1,H,W image, got " + s.str());
        if (gt.boxes.empty()) return {nullptr, 0};
        std::int64_t h = s[2], w = s[3];

        auto features = ad::relu(c2(ad::relu(c1(image))));
        std::vector<Var<S>> rows;
        for (const auto& box : gt.boxes) {
            std::int64_t c0 = static_cast<std::int64_t>(std::floor(box.xyxy[0] * static_cast<double>(w)));
            std::int64_t r0 = static_cast<std::int64_t>(std::floor(box.xyxy[1] * static_cast<double>(h)));
            std::int64_t c1_ = static_cast<std::int64_t>(std::ceil(box.xyxy[2] * static_cast<double>(w)));
            std::int64_t r1 = static_cast<std::int64_t>(std::ceil(box.xyxy[3] * static_cast<double>(h)));
            c0 = std::clamp<std::int64_t>(c0, 0, w - 1);
            r0 = std::clamp<std::int64_t>(r0, 0, h - 1);
            c1_ = std::clamp<std::int64_t>(c1_, c0 + 1, w);
            r1 = std::clamp<std::int64_t>(r1, r0 + 1, h);
            rows.push_back(fc(ad::rect_mean(features, r0, r1, c0, c1_)));
        }
        Var<S> deltas = rows.size() == 1 ? rows[0] : ad::concat_dim0(rows);
        return {deltas, gt.boxes.size()};
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        c1.collect(prefix + "/c1", out);
        c2.collect(prefix + "/c2", out);
        fc.collect(prefix + "/fc", out);
    }
};

// Full-resolution per-pixel class logits from a 3-layer conv stack.
template <typename S>
struct SegmentationHead {
    HeadConfig cfg;
    Conv2d<S> c1, c2, c3;
    bool trainable = true;

    SegmentationHead() = default;
    SegmentationHead(HeadConfig cfg_, Rng& rng)
        : cfg(cfg_),
          c1(cfg.channels, 1, 3, rng),
          c2(cfg.channels, cfg.channels, 3, rng),
          c3(cfg.class_count, cfg.channels, 3, rng) {}

    Var<S> operator()(const Var<S>& image) const {
        const Shape& s = image->shape();
        if (s.ndim != 4 || s[1] != 1)
            throw ValidationError("segment: expected N,1,H,W image, got " + s.str());
        return c3(ad::relu(c2(ad::relu(c1(image)))));  // N,C,H,W logits
    }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        c1.collect(prefix + "/c1", out);
        c2.collect(prefix + "/c2", out);
        c3.collect(prefix + "/c3", out);
    }
};

// Marks head parameters non-trainable: the autodiff graph stops at them, so
// their gradients stay zero while gradients still flow through the head into
// the image it reads.
template <typename S, typename Head>
void freeze(Head& head) {
    ParamMap<S> params;
    head.collect("", params);
    params.set_trainable(false);
    head.trainable = false;
}

template <typename S, typename Head>
void unfreeze(Head& head) {
    ParamMap<S> params;
    head.collect("", params);
    params.set_trainable(true);
    head.trainable = true;
}

}  // namespace ivfuse::nn
