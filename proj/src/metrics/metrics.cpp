#include "ivfuse/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;

namespace ivfuse::metrics {

namespace {

void check_same_shape(const Plane& a, const Plane& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string(what) + ": shape mismatch " +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

Eigen::VectorXd gaussian_vec(std::int64_t n, double sigma) {
    Eigen::VectorXd g(n);
    std::int64_t r = n / 2;
    for (std::int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(i - r);
        g(i) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    g /= g.sum();
    return g;
}

// Separable valid-mode filtering with an isotropic Gaussian.
Plane gaussian_valid(const Plane& x, std::int64_t n, double sigma) {
    Eigen::VectorXd g = gaussian_vec(n, sigma);
    std::int64_t h = x.rows(), w = x.cols();
    Plane rows(h, w - n + 1);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j + n <= w; ++j) {
            double acc = 0;
            for (std::int64_t t = 0; t < n; ++t) acc += g(t) * x(i, j + t);
            rows(i, j) = acc;
        }
    Plane out(h - n + 1, w - n + 1);
    for (std::int64_t i = 0; i + n <= h; ++i)
        for (std::int64_t j = 0; j < rows.cols(); ++j) {
            double acc = 0;
            for (std::int64_t t = 0; t < n; ++t) acc += g(t) * rows(i + t, j);
            out(i, j) = acc;
        }
    return out;
}

Plane downsample2(const Plane& x) {
    Plane out((x.rows() + 1) / 2, (x.cols() + 1) / 2);
    for (std::int64_t i = 0; i < out.rows(); ++i)
        for (std::int64_t j = 0; j < out.cols(); ++j) out(i, j) = x(2 * i, 2 * j);
    return out;
}

// Zero-padded same-size filtering with a square isotropic kernel.
Plane filter_same(const Plane& x, const Plane& kernel) {
    std::int64_t h = x.rows(), w = x.cols(), k = kernel.rows(), r = k / 2;
    Plane out(h, w);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            double acc = 0;
            for (std::int64_t a = 0; a < k; ++a)
                for (std::int64_t b = 0; b < k; ++b) {
                    std::int64_t si = i + a - r, sj = j + b - r;
                    if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
                    acc += kernel(a, b) * x(si, sj);
                }
            out(i, j) = acc;
        }
    return out;
}

Plane dog_kernel(double sigma_narrow, double sigma_wide) {
    std::int64_t r = static_cast<std::int64_t>(std::ceil(3.0 * sigma_wide));
    std::int64_t k = 2 * r + 1;
    Plane kern(k, k);
    double sum_n = 0, sum_w = 0;
    Plane gn(k, k), gw(k, k);
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < k; ++j) {
            double di = static_cast<double>(i - r), dj = static_cast<double>(j - r);
            double d2 = di * di + dj * dj;
            gn(i, j) = std::exp(-d2 / (2 * sigma_narrow * sigma_narrow));
            gw(i, j) = std::exp(-d2 / (2 * sigma_wide * sigma_wide));
            sum_n += gn(i, j);
            sum_w += gw(i, j);
        }
    kern = gn / sum_n - gw / sum_w;
    return kern;
}

// Sobel gradient magnitude squared, zero-padded.
Plane sobel_energy(const Plane& x) {
    std::int64_t h = x.rows(), w = x.cols();
    auto px = [&](std::int64_t i, std::int64_t j) -> double {
        if (i < 0 || i >= h || j < 0 || j >= w) return 0.0;
        return x(i, j);
    };
    Plane out(h, w);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            double gx = px(i - 1, j + 1) + 2 * px(i, j + 1) + px(i + 1, j + 1) -
                        px(i - 1, j - 1) - 2 * px(i, j - 1) - px(i + 1, j - 1);
            double gy = px(i + 1, j - 1) + 2 * px(i + 1, j) + px(i + 1, j + 1) -
                        px(i - 1, j - 1) - 2 * px(i - 1, j) - px(i - 1, j + 1);
            out(i, j) = gx * gx + gy * gy;
        }
    return out;
}

double pearson(const Plane& a, const Plane& b, const char* what) {
    double ma = a.mean(), mb = b.mean();
    double va = (a - ma).square().sum();
    double vb = (b - mb).square().sum();
    // quantized 8-bit content has summed variance >= ~1e-5; anything below
    // this is a constant image up to accumulation roundoff
    if (va <= 1e-12 || vb <= 1e-12)
        throw ValidationError(std::string(what) + ": constant image has no defined correlation");
    double cov = ((a - ma) * (b - mb)).sum();
    return cov / std::sqrt(va * vb);
}

}  // namespace

double ssim_metric(const Plane& a, const Plane& b, const SsimParams& p) {
    check_same_shape(a, b, "ssim_metric");
    if (p.window > a.rows() || p.window > a.cols())
        throw ValidationError("ssim_metric: window larger than image");
    auto f = [&](const Plane& x) { return gaussian_valid(x, p.window, p.sigma); };
    Plane mu_a = f(a), mu_b = f(b);
    Plane sa = f(a * a) - mu_a * mu_a;
    Plane sb = f(b * b) - mu_b * mu_b;
    Plane sab = f(a * b) - mu_a * mu_b;
    Plane num = (2.0 * mu_a * mu_b + p.c1) * (2.0 * sab + p.c2);
    Plane den = (mu_a * mu_a + mu_b * mu_b + p.c1) * (sa + sb + p.c2);
    return (num / den).mean();
}

MsePsnr mse_psnr(const Plane& a, const Plane& b) {
    check_same_shape(a, b, "mse_psnr");
    MsePsnr out;
    out.mse = (255.0 * (a - b)).square().mean();
    out.psnr = out.mse == 0.0 ? std::numeric_limits<double>::infinity()
                              : 10.0 * std::log10(255.0 * 255.0 / out.mse);
    return out;
}

double cc_metric(const Plane& fused, const Plane& ir, const Plane& vis) {
    check_same_shape(fused, ir, "cc_metric");
    check_same_shape(fused, vis, "cc_metric");
    return 0.5 * (pearson(fused, ir, "cc_metric") + pearson(fused, vis, "cc_metric"));
}

double vif_metric(const Plane& fused, const Plane& ref_in) {
    check_same_shape(fused, ref_in, "vif_metric");
    constexpr double sigma_nsq = 2.0;
    Plane ref = 255.0 * ref_in;
    Plane dist = 255.0 * fused;

    double num = 0, den = 0;
    int used_scales = 0;
    for (int scale = 1; scale <= 4; ++scale) {
        std::int64_t n = (std::int64_t(1) << (4 - scale + 1)) + 1;  // 17, 9, 5, 3
        double sigma = static_cast<double>(n) / 5.0;
        if (scale > 1) {
            if (ref.rows() < n || ref.cols() < n) break;
            ref = downsample2(gaussian_valid(ref, n, sigma));
            dist = downsample2(gaussian_valid(dist, n, sigma));
        }
        if (ref.rows() < n || ref.cols() < n) break;
        Plane mu1 = gaussian_valid(ref, n, sigma);
        Plane mu2 = gaussian_valid(dist, n, sigma);
        Plane s1 = (gaussian_valid(ref * ref, n, sigma) - mu1 * mu1).cwiseMax(0.0);
        Plane s2 = (gaussian_valid(dist * dist, n, sigma) - mu2 * mu2).cwiseMax(0.0);
        Plane s12 = gaussian_valid(ref * dist, n, sigma) - mu1 * mu2;

        for (std::int64_t i = 0; i < s1.rows(); ++i)
            for (std::int64_t j = 0; j < s1.cols(); ++j) {
                double g = s12(i, j) / (s1(i, j) + 1e-10);
                double sv = s2(i, j) - g * s12(i, j);
                if (s1(i, j) < 1e-10) {
                    g = 0;
                    sv = s2(i, j);
                }
                if (s2(i, j) < 1e-10) {
                    g = 0;
                    sv = 0;
                }
                if (g < 0) {
                    sv = s2(i, j);
                    g = 0;
                }
                sv = std::max(sv, 1e-10);
                num += std::log10(1.0 + g * g * s1(i, j) / (sv + sigma_nsq));
                den += std::log10(1.0 + s1(i, j) / sigma_nsq);
            }
        ++used_scales;
    }
    if (used_scales == 0) throw ValidationError("vif_metric: image too small for the pyramid");
    if (den <= 1e-12) {
        if (((fused - ref_in).abs() == 0.0).all()) return 1.0;
        throw ValidationError("vif_metric: zero-variance reference");
    }
    return num / den;
}

double cv_metric(const Plane& fused, const Plane& ir, const Plane& vis, const CvParams& p) {
    check_same_shape(fused, ir, "cv_metric");
    check_same_shape(fused, vis, "cv_metric");
    std::int64_t h = fused.rows(), w = fused.cols();

    Plane kern = dog_kernel(p.sigma_narrow, p.sigma_wide);
    Plane d_ir = filter_same(255.0 * (fused - ir), kern).square();
    Plane d_vis = filter_same(255.0 * (fused - vis), kern).square();
    Plane sal_ir = sobel_energy(255.0 * ir);
    Plane sal_vis = sobel_energy(255.0 * vis);

    double weighted = 0, saliency = 0;
    for (std::int64_t i0 = 0; i0 < h; i0 += p.window)
        for (std::int64_t j0 = 0; j0 < w; j0 += p.window) {
            std::int64_t i1 = std::min<std::int64_t>(h, i0 + p.window);
            std::int64_t j1 = std::min<std::int64_t>(w, j0 + p.window);
            double li = 0, lv = 0, ei = 0, ev = 0;
            std::int64_t count = (i1 - i0) * (j1 - j0);
            for (std::int64_t i = i0; i < i1; ++i)
                for (std::int64_t j = j0; j < j1; ++j) {
                    li += sal_ir(i, j);
                    lv += sal_vis(i, j);
                    ei += d_ir(i, j);
                    ev += d_vis(i, j);
                }
            li /= static_cast<double>(count);
            lv /= static_cast<double>(count);
            ei /= static_cast<double>(count);
            ev /= static_cast<double>(count);
            weighted += li * ei + lv * ev;
            saliency += li + lv;
        }
    return weighted / (saliency + p.eps);
}

std::string MetricsReport::to_csv() const {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.12g", v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "id,ssim,psnr,mse,vif,cc,cv\n";
    for (const auto& r : rows) {
        if (!r.present) {
            os << r.id << ",absent,absent,absent,absent,absent,absent\n";
            continue;
        }
        os << r.id << "," << fmt(r.ssim) << "," << fmt(r.psnr) << "," << fmt(r.mse) << ","
           << fmt(r.vif) << "," << fmt(r.cc) << "," << fmt(r.cv) << "\n";
    }
    os << "mean," << fmt(mean.ssim) << "," << fmt(mean.psnr) << "," << fmt(mean.mse) << ","
       << fmt(mean.vif) << "," << fmt(mean.cc) << "," << fmt(mean.cv) << "\n";
    return os.str();
}

std::string MetricsReport::to_table() const {
    std::ostringstream os;
    os << "Dataset: " << dataset << "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %8s %8s %10s %8s %8s %10s\n", "Method", "SSIM^",
                  "PSNR^", "MSE_v", "VIF^", "CC^", "CV_v");
    os << buf;
    std::snprintf(buf, sizeof buf, "%-12s %8.2f %8.2f %10.2f %8.2f %8.2f %10.2f\n",
                  method.c_str(), mean.ssim, mean.psnr, mean.mse, mean.vif, mean.cc, mean.cv);
    os << buf;
    return os.str();
}

MetricsReport evaluate_directory(const std::string& fused_dir,
                                 const data::DatasetManifest& manifest,
                                 const std::string& dataset_name,
                                 const std::string& method_name) {
    MetricsReport report;
    report.dataset = dataset_name;
    report.method = method_name;

    double acc[6] = {};
    std::int64_t present = 0;
    for (const auto& entry : manifest.entries) {
        MetricsRow row;
        row.id = entry.id;
        std::string fused_path;
        for (const char* ext : {".png", ".bmp"}) {
            fs::path p = fs::path(fused_dir) / (entry.id + ext);
            if (fs::exists(p)) {
                fused_path = p.string();
                break;
            }
        }
        if (fused_path.empty()) {
            report.rows.push_back(row);  // absent
            continue;
        }
        auto pair = data::load_pair(entry.ir_path, entry.vis_path);
        data::RawImage fraw = data::read_image(fused_path);
        Plane fused = fraw.channels == 1
                          ? data::plane_from_raw(fraw, 0)
                          : data::luminance(data::ColorImage{data::plane_from_raw(fraw, 0),
                                                             data::plane_from_raw(fraw, 1),
                                                             data::plane_from_raw(fraw, 2)});
        Plane vis_y = data::luminance(pair.visible);
        const Plane& ir = pair.infrared;
        if (fused.rows() != ir.rows() || fused.cols() != ir.cols())
            throw ValidationError("evaluate: fused image shape mismatch for id " + entry.id);

        row.present = true;
        row.ssim = 0.5 * (ssim_metric(fused, ir) + ssim_metric(fused, vis_y));
        double mse2 = 0.5 * (mse_psnr(fused, ir).mse + mse_psnr(fused, vis_y).mse);
        row.mse = mse2;
        row.psnr = mse2 == 0.0 ? std::numeric_limits<double>::infinity()
                               : 10.0 * std::log10(255.0 * 255.0 / mse2);
        row.vif = 0.5 * (vif_metric(fused, ir) + vif_metric(fused, vis_y));
        row.cc = cc_metric(fused, ir, vis_y);
        row.cv = cv_metric(fused, ir, vis_y);
        acc[0] += row.ssim;
        acc[1] += row.psnr;
        acc[2] += row.mse;
        acc[3] += row.vif;
        acc[4] += row.cc;
        acc[5] += row.cv;
        ++present;
        report.rows.push_back(row);
    }
    report.mean.id = "mean";
    report.mean.present = present > 0;
    if (present > 0) {
        report.mean.ssim = acc[0] / static_cast<double>(present);
        report.mean.psnr = acc[1] / static_cast<double>(present);
        report.mean.mse = acc[2] / static_cast<double>(present);
        report.mean.vif = acc[3] / static_cast<double>(present);
        report.mean.cc = acc[4] / static_cast<double>(present);
        report.mean.cv = acc[5] / static_cast<double>(present);
    }
    return report;
}

}  // namespace ivfuse::metrics
