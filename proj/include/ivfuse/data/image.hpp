#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "ivfuse/core/errors.hpp"
#include "ivfuse/data/io.hpp"

namespace ivfuse::data {

// Images are kept as double planes in [0,1]. Luminance math and the metric
// suite all run on these.
using Plane = Eigen::ArrayXXd;

struct ColorImage {
    Plane r, g, b;
    Eigen::Index rows() const { return r.rows(); }
    Eigen::Index cols() const { return r.cols(); }
};

struct Chroma {
    Plane cb, cr;
};

inline bool in_unit_range(const Plane& p) {
    return (p >= 0.0).all() && (p <= 1.0).all();
}

inline Plane plane_from_raw(const RawImage& img, int channel) {
    Plane p(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) p(r, c) = img.at(r, c, channel) / 255.0;
    return p;
}

inline RawImage raw_from_plane(const Plane& p) {
    RawImage img;
    img.height = static_cast<int>(p.rows());
    img.width = static_cast<int>(p.cols());
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double v = std::clamp(p(r, c), 0.0, 1.0);
            img.pixels[static_cast<std::size_t>(r * img.width + c)] =
                static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return img;
}

inline RawImage raw_from_color(const ColorImage& img) {
    RawImage out;
    out.height = static_cast<int>(img.rows());
    out.width = static_cast<int>(img.cols());
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    auto put = [&](const Plane& p, int ch) {
        for (int r = 0; r < out.height; ++r)
            for (int c = 0; c < out.width; ++c) {
                double v = std::clamp(p(r, c), 0.0, 1.0);
                out.pixels[static_cast<std::size_t>((r * out.width + c) * 3 + ch)] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    };
    put(img.r, 0);
    put(img.g, 1);
    put(img.b, 2);
    return out;
}

// BT.601 full-range RGB -> YCbCr on [0,1] planes; neutral chroma is 0.5.
inline void rgb_to_ycbcr(const ColorImage& rgb, Plane& y, Chroma& cbcr) {
    if (rgb.g.rows() != rgb.r.rows() || rgb.b.rows() != rgb.r.rows() ||
        rgb.g.cols() != rgb.r.cols() || rgb.b.cols() != rgb.r.cols())
        throw ValidationError("rgb_to_ycbcr: channel shape mismatch");
    if (!in_unit_range(rgb.r) || !in_unit_range(rgb.g) || !in_unit_range(rgb.b))
        throw ValidationError("rgb_to_ycbcr: values outside [0,1]");
    y = 0.299 * rgb.r + 0.587 * rgb.g + 0.114 * rgb.b;
    cbcr.cb = (rgb.b - y) / 1.772 + 0.5;
    cbcr.cr = (rgb.r - y) / 1.402 + 0.5;
}

// Inverse BT.601; output clamped to [0,1].
inline ColorImage reattach_color(const Plane& fused_y, const Chroma& cbcr) {
    if (cbcr.cb.rows() != fused_y.rows() || cbcr.cb.cols() != fused_y.cols() ||
        cbcr.cr.rows() != fused_y.rows() || cbcr.cr.cols() != fused_y.cols())
        throw ValidationError("reattach_color: shape mismatch");
    ColorImage out;
    Plane cb = cbcr.cb - 0.5;
    Plane cr = cbcr.cr - 0.5;
    out.r = (fused_y + 1.402 * cr).cwiseMax(0.0).cwiseMin(1.0);
    out.g = (fused_y - 0.344136286201022 * cb - 0.714136286201022 * cr).cwiseMax(0.0).cwiseMin(1.0);
    out.b = (fused_y + 1.772 * cb).cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

inline Plane luminance(const ColorImage& rgb) {
    Plane y;
    Chroma c;
    rgb_to_ycbcr(rgb, y, c);
    return y;
}

}  // namespace ivfuse::data
