#include "ivfuse/nn/external_heads.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

namespace fs = std::filesystem;

namespace ivfuse::nn {

ExternalPredictions run_external_head(const std::string& cmd, const data::Plane& image,
                                      const data::AnnotationSet& gt, int class_count,
                                      const std::string& workdir) {
    if (cmd.empty()) throw ConfigError("external head: empty command");
    fs::create_directories(workdir);
    std::string img_path = (fs::path(workdir) / "head_in.png").string();
    std::string gt_path = (fs::path(workdir) / "head_gt.json").string();
    std::string out_path = (fs::path(workdir) / "head_out.json").string();
    data::write_png(img_path, data::raw_from_plane(image));
    data::save_annotations(gt_path, gt);
    std::error_code ec;
    fs::remove(out_path, ec);

    std::string full = cmd + " " + img_path + " " + gt_path + " " + out_path;
    int rc = std::system(full.c_str());
    if (rc != 0)
        throw IoError("external head command failed (exit " + std::to_string(rc) + "): " + full);

    data::AnnotationSet out = data::load_annotations(out_path, class_count);
    if (out.boxes.size() != gt.boxes.size())
        throw ValidationError("external head: prediction/GT box count mismatch (" +
                              std::to_string(out.boxes.size()) + " vs " +
                              std::to_string(gt.boxes.size()) + ")");
    if (out.mask.rows() != gt.mask.rows() || out.mask.cols() != gt.mask.cols())
        throw ValidationError("external head: predicted mask shape mismatch");
    return ExternalPredictions{std::move(out.boxes), std::move(out.mask)};
}

double external_detection_loss(const ExternalPredictions& pred, const data::AnnotationSet& gt) {
    double acc = 0;
    std::int64_t foreground = 0;
    for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
        if (gt.boxes[i].cls < 1) continue;
        ++foreground;
        for (int c = 0; c < 4; ++c) {
            double d = pred.boxes[i].xyxy[static_cast<std::size_t>(c)] -
                       gt.boxes[i].xyxy[static_cast<std::size_t>(c)];
            double a = std::abs(d);
            acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
        }
    }
    return foreground == 0 ? 0.0 : acc / static_cast<double>(foreground);
}

double external_segmentation_error(const ExternalPredictions& pred,
                                   const data::AnnotationSet& gt) {
    std::int64_t wrong = 0;
    for (std::int64_t i = 0; i < gt.mask.rows(); ++i)
        for (std::int64_t j = 0; j < gt.mask.cols(); ++j)
            if (pred.mask(static_cast<int>(i), static_cast<int>(j)) !=
                gt.mask(static_cast<int>(i), static_cast<int>(j)))
                ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(gt.mask.size());
}

}  // namespace ivfuse::nn
