#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ivfuse/data/dataset.hpp"
#include "ivfuse/nn/layers.hpp"

namespace ivfuse::nn {

struct LossConfig {
    double alpha1 = 0.1;  // diversity weight
    double alpha2 = 6.0;  // infrared reconstruction weight
    double alpha3 = 1.0;  // visible reconstruction weight
    std::int64_t ssim_window = 11;
    double ssim_sigma = 1.5;
    double ssim_c1 = 0.01 * 0.01;  // on the [0,1] dynamic range
    double ssim_c2 = 0.03 * 0.03;

    void validate() const {
        if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0)
            throw ConfigError("loss: weights must be non-negative");
        if (ssim_window % 2 == 0 || ssim_window < 3)
            throw ConfigError("loss: ssim window must be odd and >= 3");
    }
};

// Per-step scalar components, kept in double regardless of the training
// scalar so the arithmetic identities hold to near machine precision.
struct LossBreakdown {
    double ssim = 0, div = 0, mse_ir = 0, mse_vis = 0;
    double det_i = 0, det_v = 0, det_f = 0;
    double mff = 0, det = 0, seg = 0, total = 0;

    static std::string csv_header() {
        return "ssim,div,mse_ir,mse_vis,mff,det_i,det_v,det_f,det,seg,total";
    }
    std::string csv_row() const;

    // Recomputes the weighted sums; the trainer asserts these match what was
    // logged.
    void combine(const LossConfig& cfg) {
        mff = cfg.alpha1 * div + ssim + cfg.alpha2 * mse_ir + cfg.alpha3 * mse_vis;
        det = det_i + det_v + det_f;
        total = mff + det + seg;
    }
};

inline std::string LossBreakdown::csv_row() const {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    return fmt(ssim) + "," + fmt(div) + "," + fmt(mse_ir) + "," + fmt(mse_vis) + "," + fmt(mff) +
           "," + fmt(det_i) + "," + fmt(det_v) + "," + fmt(det_f) + "," + fmt(det) + "," +
           fmt(seg) + "," + fmt(total);
}

template <typename S>
Tensor<S> gaussian_kernel(std::int64_t k, double sigma) {
    Tensor<S> w(Shape::nchw(1, 1, k, k));
    std::int64_t r = k / 2;
    double sum = 0;
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < k; ++j) {
            double di = static_cast<double>(i - r), dj = static_cast<double>(j - r);
            double v = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            w[i * k + j] = static_cast<S>(v);
            sum += v;
        }
    for (std::int64_t i = 0; i < k * k; ++i) w[i] = static_cast<S>(w[i] / sum);
    return w;
}

namespace detail {

template <typename S>
void validate_image_pair(const Var<S>& a, const Var<S>& b, const char* what) {
    if (a->shape() != b->shape())
        throw ValidationError(std::string(what) + ": shape mismatch " + a->shape().str() +
                              " vs " + b->shape().str());
    if (a->shape().ndim != 4 || a->shape()[1] != 1)
        throw ValidationError(std::string(what) + ": expected N,1,H,W images");
}

}  // namespace detail

// Mean windowed SSIM between two N,1,H,W images, Gaussian window, valid-mode
// windows only (no padding), differentiable.
template <typename S>
Var<S> ssim_mean(const Var<S>& a, const Var<S>& b, const LossConfig& cfg) {
    detail::validate_image_pair(a, b, "ssim");
    std::int64_t h = a->shape()[2], w = a->shape()[3];
    if (cfg.ssim_window > h || cfg.ssim_window > w)
        throw ValidationError("ssim: window larger than image");
    auto g = ad::make_const(gaussian_kernel<S>(cfg.ssim_window, cfg.ssim_sigma));
    auto wconv = [&](const Var<S>& x) { return ad::conv2d<S>(x, g, nullptr, Pad::Valid); };

    auto mu_a = wconv(a);
    auto mu_b = wconv(b);
    auto sigma_a = ad::sub(wconv(ad::mul(a, a)), ad::mul(mu_a, mu_a));
    auto sigma_b = ad::sub(wconv(ad::mul(b, b)), ad::mul(mu_b, mu_b));
    auto sigma_ab = ad::sub(wconv(ad::mul(a, b)), ad::mul(mu_a, mu_b));

    S c1 = static_cast<S>(cfg.ssim_c1), c2 = static_cast<S>(cfg.ssim_c2);
    auto num = ad::mul(ad::add_scalar(ad::mul_scalar(ad::mul(mu_a, mu_b), S(2)), c1),
                       ad::add_scalar(ad::mul_scalar(sigma_ab, S(2)), c2));
    auto den = ad::mul(ad::add_scalar(ad::add(ad::mul(mu_a, mu_a), ad::mul(mu_b, mu_b)), c1),
                       ad::add_scalar(ad::add(sigma_a, sigma_b), c2));
    return ad::mean_all(ad::div(num, den));
}

// 1/2 (1 - ssim(F, I)) + 1/2 (1 - ssim(F, V_y))
template <typename S>
Var<S> ssim_loss(const Var<S>& fused, const Var<S>& ir, const Var<S>& vis_y,
                 const LossConfig& cfg = LossConfig{}) {
    auto check_range = [](const Var<S>& x, const char* what) {
        if ((x->value.array() < S(0)).any() || (x->value.array() > S(1)).any())
            throw ValidationError(std::string(what) + ": values outside [0,1]");
    };
    check_range(fused, "ssim_loss fused");
    check_range(ir, "ssim_loss infrared");
    check_range(vis_y, "ssim_loss visible");
    auto half_term = [&](const Var<S>& ref) {
        return ad::mul_scalar(ad::add_scalar(ad::neg(ssim_mean(fused, ref, cfg)), S(1)), S(0.5));
    };
    return ad::add(half_term(ir), half_term(vis_y));
}

// -(1/m) sum_i (1 - max_j att_ij) + (1/(mn)) sum_ij att_ij
// == mean_i(max_j att_ij) + mean(att) - 1
template <typename S>
Var<S> diversity_loss(const Var<S>& att) {
    const Shape& s = att->shape();
    if (s.ndim != 2 || s.count() == 0)
        throw ValidationError("diversity_loss: need a non-empty m x n matrix");
    if (!att->value.allFinite() || (att->value.array() < S(0)).any() ||
        (att->value.array() > S(1)).any())
        throw ValidationError("diversity_loss: entries must be finite and in [0,1]");
    return ad::add_scalar(ad::add(ad::mean_all(ad::row_max(att)), ad::mean_all(att)), S(-1));
}

// Pixel-count-normalized squared errors of the two single-modality
// reconstructions.
template <typename S>
std::pair<Var<S>, Var<S>> reconstruction_losses(const Var<S>& ir, const Var<S>& ir_hat,
                                                const Var<S>& vis_y, const Var<S>& vis_y_hat) {
    detail::validate_image_pair(ir, ir_hat, "reconstruction");
    detail::validate_image_pair(vis_y, vis_y_hat, "reconstruction");
    auto mse = [](const Var<S>& a, const Var<S>& b) {
        auto d = ad::sub(a, b);
        return ad::mean_all(ad::mul(d, d));
    };
    return {mse(ir, ir_hat), mse(vis_y, vis_y_hat)};
}

template <typename S>
Var<S> mff_loss(const Var<S>& div, const Var<S>& ssim, const Var<S>& mse_ir,
                const Var<S>& mse_vis, const LossConfig& cfg) {
    return ad::add(ad::add(ad::mul_scalar(div, static_cast<S>(cfg.alpha1)), ssim),
                   ad::add(ad::mul_scalar(mse_ir, static_cast<S>(cfg.alpha2)),
                           ad::mul_scalar(mse_vis, static_cast<S>(cfg.alpha3))));
}

// Smooth-L1 regression over foreground objects only ([u >= 1] gate),
// averaged over the foreground count. Background-only annotations give 0.
template <typename S>
Var<S> detection_regression_loss(const Var<S>& pred_deltas, const data::AnnotationSet& gt) {
    auto fg = gt.foreground_indices();
    if (pred_deltas) {
        if (pred_deltas->shape().ndim != 2 || pred_deltas->shape()[1] != 4 ||
            pred_deltas->shape()[0] != static_cast<std::int64_t>(gt.boxes.size()))
            throw ValidationError("detection loss: prediction/GT count mismatch (" +
                                  pred_deltas->shape().str() + " vs " +
                                  std::to_string(gt.boxes.size()) + " boxes)");
    } else if (!gt.boxes.empty()) {
        throw ValidationError("detection loss: missing predictions for annotated boxes");
    }
    if (fg.empty()) return ad::make_const(Tensor<S>::scalar(S(0)));

    Tensor<S> targets(Shape{static_cast<std::int64_t>(fg.size()), 4});
    for (std::size_t i = 0; i < fg.size(); ++i)
        for (int c = 0; c < 4; ++c)
            targets.at(static_cast<std::int64_t>(i), c) =
                static_cast<S>(gt.boxes[static_cast<std::size_t>(fg[i])].xyxy[static_cast<std::size_t>(c)]);
    auto fg_pred = ad::take_rows(pred_deltas, fg);
    return ad::mul_scalar(ad::smooth_l1_sum(fg_pred, targets),
                          S(1) / static_cast<S>(fg.size()));
}

// L_Det = L^I + L^V + L^F. The I and V terms are constants w.r.t. the fusion
// parameters (their inputs are source images), so only the F term carries
// gradient into the fusion network.
template <typename S>
Var<S> detection_loss_total(const Var<S>& loss_i, const Var<S>& loss_v, const Var<S>& loss_f) {
    return ad::add(ad::add(loss_i, loss_v), loss_f);
}

// Mean over all pixels of -log softmax(logits)[true class].
template <typename S>
Var<S> segmentation_loss(const Var<S>& logits, const std::vector<data::Mask>& masks) {
    const Shape& s = logits->shape();
    if (s.ndim != 4) throw ValidationError("segmentation loss: need N,C,H,W logits");
    if (!logits->value.allFinite()) throw ValidationError("segmentation loss: non-finite logits");
    std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    if (static_cast<std::int64_t>(masks.size()) != n)
        throw ValidationError("segmentation loss: mask count mismatch");
    Tensor<S> onehot(s);
    for (std::int64_t i = 0; i < n; ++i) {
        const data::Mask& m = masks[static_cast<std::size_t>(i)];
        if (m.rows() != h || m.cols() != w)
            throw ValidationError("segmentation loss: mask shape mismatch");
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t q = 0; q < w; ++q) {
                int cls = m(static_cast<int>(r), static_cast<int>(q));
                if (cls < 0 || cls >= c)
                    throw ValidationError("segmentation loss: class index " +
                                          std::to_string(cls) + " out of range [0," +
                                          std::to_string(c) + ")");
                onehot[((i * c + cls) * h + r) * w + q] = S(1);
            }
    }
    auto picked = ad::mul(ad::log_softmax_channels(logits), ad::make_const(std::move(onehot)));
    return ad::mul_scalar(ad::sum_all(picked), S(-1) / static_cast<S>(n * h * w));
}

template <typename S>
Var<S> segmentation_loss(const Var<S>& logits, const data::Mask& mask) {
    return segmentation_loss(logits, std::vector<data::Mask>{mask});
}

template <typename S>
Var<S> total_loss(const Var<S>& mff, const Var<S>& det, const Var<S>& seg) {
    return ad::add(ad::add(mff, det), seg);
}

}  // namespace ivfuse::nn
