#pragma once

#include <string>
#include <vector>

#include "ivfuse/data/dataset.hpp"

namespace ivfuse::metrics {

using data::Plane;

struct SsimParams {
    std::int64_t window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

// Mean windowed SSIM (Gaussian window, valid-mode windows), on [0,1] planes.
double ssim_metric(const Plane& a, const Plane& b, const SsimParams& p = {});

// MSE on the 0-255 scale and PSNR in dB; identical images give mse 0 and a
// +infinity PSNR sentinel.
struct MsePsnr {
    double mse = 0;
    double psnr = 0;
};
MsePsnr mse_psnr(const Plane& a, const Plane& b);

// Mean of the Pearson correlations corr(fused, ir) and corr(fused, vis).
// A constant source image has no defined correlation and raises.
double cc_metric(const Plane& fused, const Plane& ir, const Plane& vis);

// Pixel-domain visual information fidelity under the Gaussian scale-mixture
// model, Gaussian pyramid of up to 4 levels (levels that no longer fit the
// filter window are skipped). Computed on the 0-255 luminance scale.
double vif_metric(const Plane& fused, const Plane& ref);

struct CvParams {
    int window = 16;          // region size
    double sigma_narrow = 1.0;  // DoG band-pass
    double sigma_wide = 2.0;
    double eps = 1e-12;
};

// Region-based perceptual error: per window, band-pass filtered squared
// error against each source weighted by that source's Sobel edge energy.
// Computed on the 0-255 scale; lower is better, 0 when fused equals both
// sources.
double cv_metric(const Plane& fused, const Plane& ir, const Plane& vis,
                 const CvParams& p = {});

struct MetricsRow {
    std::string id;
    bool present = false;
    double ssim = 0, psnr = 0, mse = 0, vif = 0, cc = 0, cv = 0;
};

struct MetricsReport {
    std::string dataset;
    std::string method;
    std::vector<MetricsRow> rows;
    MetricsRow mean;  // over present rows; id = "mean"

    std::string to_csv() const;
    std::string to_table() const;
};

// Evaluates every manifest id against <fused_dir>/<id>.png|bmp. Fusion
// metrics pair the fused image with both sources (mean of the two); CC and
// CV consume both sources directly. Missing fused images are reported as
// absent and skipped in the means.
MetricsReport evaluate_directory(const std::string& fused_dir,
                                 const data::DatasetManifest& manifest,
                                 const std::string& dataset_name,
                                 const std::string& method_name);

}  // namespace ivfuse::metrics
