#include "ivfuse/data/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ivfuse::data {

namespace {

Plane gray_plane(const RawImage& img, const std::string& path) {
    if (img.channels == 1) return plane_from_raw(img, 0);
    // 3 identical channels also count as single-channel input
    Plane r = plane_from_raw(img, 0);
    Plane g = plane_from_raw(img, 1);
    Plane b = plane_from_raw(img, 2);
    if ((r != g).any() || (r != b).any())
        throw ValidationError("infrared image is not single-channel: " + path);
    return r;
}

}  // namespace

ImagePair load_pair(const std::string& ir_path, const std::string& vis_path) {
    RawImage ir_raw = read_image(ir_path);
    RawImage vis_raw = read_image(vis_path);
    if (vis_raw.channels != 3)
        throw ValidationError("visible image must have 3 channels: " + vis_path);

    ImagePair pair;
    pair.infrared = gray_plane(ir_raw, ir_path);
    pair.visible.r = plane_from_raw(vis_raw, 0);
    pair.visible.g = plane_from_raw(vis_raw, 1);
    pair.visible.b = plane_from_raw(vis_raw, 2);
    if (pair.infrared.rows() != pair.visible.rows() ||
        pair.infrared.cols() != pair.visible.cols())
        throw ValidationError("infrared/visible shape mismatch: " + ir_path + " is " +
                              std::to_string(pair.infrared.rows()) + "x" +
                              std::to_string(pair.infrared.cols()) + ", " + vis_path + " is " +
                              std::to_string(pair.visible.rows()) + "x" +
                              std::to_string(pair.visible.cols()));
    pair.id = fs::path(ir_path).stem().string();
    return pair;
}

std::vector<std::int64_t> mask_to_rle(const Mask& mask) {
    std::vector<std::int64_t> counts;
    std::int64_t rows = mask.rows(), cols = mask.cols();
    std::int64_t run = 0, value = rows * cols > 0 ? mask(0, 0) : 0;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) {
            int v = mask(r, c);
            if (v == value) {
                ++run;
            } else {
                counts.push_back(value);
                counts.push_back(run);
                value = v;
                run = 1;
            }
        }
    if (run > 0) {
        counts.push_back(value);
        counts.push_back(run);
    }
    return counts;
}

Mask mask_from_rle(const std::vector<std::int64_t>& counts, int rows, int cols) {
    if (counts.size() % 2 != 0) throw ParseError("mask_rle: counts must hold (value, run) pairs");
    Mask mask(rows, cols);
    std::int64_t total = static_cast<std::int64_t>(rows) * cols;
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < counts.size(); i += 2) {
        std::int64_t value = counts[i], run = counts[i + 1];
        if (run < 0 || pos + run > total) throw ParseError("mask_rle: runs exceed mask size");
        for (std::int64_t k = 0; k < run; ++k, ++pos)
            mask(static_cast<int>(pos / cols), static_cast<int>(pos % cols)) =
                static_cast<int>(value);
    }
    if (pos != total) throw ParseError("mask_rle: runs do not cover the mask");
    return mask;
}

AnnotationSet load_annotations(const std::string& path, int class_count) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open annotations: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed annotation JSON: " + path);

    AnnotationSet ann;
    try {
        for (const auto& jb : j.value("boxes", nlohmann::json::array())) {
            Box b;
            b.cls = jb.at("class").get<int>();
            auto xy = jb.at("xyxy").get<std::vector<double>>();
            if (xy.size() != 4) throw ParseError("box xyxy must have 4 entries: " + path);
            std::copy(xy.begin(), xy.end(), b.xyxy.begin());
            ann.boxes.push_back(b);
        }
        const auto& jm = j.at("mask_rle");
        auto shape = jm.at("shape").get<std::vector<int>>();
        if (shape.size() != 2) throw ParseError("mask shape must be [p, q]: " + path);
        auto counts = jm.at("counts").get<std::vector<std::int64_t>>();
        ann.mask = mask_from_rle(counts, shape[0], shape[1]);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("annotation JSON missing fields in " + path + ": " + e.what());
    }

    for (const auto& b : ann.boxes) {
        if (b.cls < 0) throw ValidationError("negative class index in " + path);
        if (b.cls >= class_count)
            throw ValidationError("box class " + std::to_string(b.cls) + " >= class count " +
                                  std::to_string(class_count) + " in " + path);
        if (!(b.xyxy[0] < b.xyxy[2]) || !(b.xyxy[1] < b.xyxy[3]))
            throw ValidationError("degenerate box (needs x_min < x_max, y_min < y_max) in " +
                                  path);
        for (double v : b.xyxy)
            if (v < 0.0 || v > 1.0)
                throw ValidationError("box coordinates outside [0,1] in " + path);
    }
    if ((ann.mask >= class_count).any() || (ann.mask < 0).any())
        throw ValidationError("mask class index out of range [0," +
                              std::to_string(class_count) + ") in " + path);
    return ann;
}

void save_annotations(const std::string& path, const AnnotationSet& ann) {
    nlohmann::json j;
    j["boxes"] = nlohmann::json::array();
    for (const auto& b : ann.boxes) {
        nlohmann::json jb;
        jb["class"] = b.cls;
        jb["xyxy"] = b.xyxy;
        j["boxes"].push_back(jb);
    }
    j["mask_rle"]["shape"] = {static_cast<int>(ann.mask.rows()),
                              static_cast<int>(ann.mask.cols())};
    j["mask_rle"]["counts"] = mask_to_rle(ann.mask);
    std::ofstream f(path);
    if (!f) throw IoError("cannot write annotations: " + path);
    f << j.dump(2) << "\n";
}

DatasetManifest scan_manifest(const std::string& root, const std::string& split,
                              bool require_annotations) {
    DatasetManifest m;
    m.root = root;
    m.split = split;
    fs::path base = fs::path(root) / split;
    fs::path ir_dir = base / "ir";
    if (!fs::is_directory(ir_dir))
        throw IoError("manifest: missing directory " + ir_dir.string());

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(ir_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".bmp") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());

    auto find_image = [](const fs::path& dir, const std::string& id) -> std::string {
        for (const char* ext : {".png", ".bmp"}) {
            fs::path p = dir / (id + ext);
            if (fs::exists(p)) return p.string();
        }
        return {};
    };

    for (const auto& id : ids) {
        ManifestEntry e;
        e.id = id;
        e.ir_path = find_image(ir_dir, id);
        e.vis_path = find_image(base / "vis", id);
        if (e.vis_path.empty())
            throw IoError("manifest: missing visible image for id '" + id + "'");
        fs::path ann = base / "ann" / (id + ".json");
        if (fs::exists(ann))
            e.ann_path = ann.string();
        else if (require_annotations)
            throw IoError("manifest: missing annotations for id '" + id + "'");
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace ivfuse::data
