#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ivfuse/data/image.hpp"

namespace ivfuse::data {

// Registered infrared/visible pair with pixel values in [0,1].
struct ImagePair {
    Plane infrared;     // p x q
    ColorImage visible; // p x q x 3
    std::string id;
};

struct Box {
    int cls = 0;                      // 0 is background
    std::array<double, 4> xyxy{};     // normalized [0,1] coordinates
};

using Mask = Eigen::ArrayXXi;  // class indices in [0, C)

struct AnnotationSet {
    std::vector<Box> boxes;
    Mask mask;  // p x q

    std::vector<std::int64_t> foreground_indices() const {
        std::vector<std::int64_t> idx;
        for (std::size_t i = 0; i < boxes.size(); ++i)
            if (boxes[i].cls >= 1) idx.push_back(static_cast<std::int64_t>(i));
        return idx;
    }
};

// Directory layout <root>/<split>/{ir,vis,ann}/<id>.{png,bmp,json}.
// Entries are ordered lexicographically by id.
struct ManifestEntry {
    std::string id;
    std::string ir_path;
    std::string vis_path;
    std::string ann_path;  // empty when annotations are absent
};

struct DatasetManifest {
    std::string root;
    std::string split;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
};

ImagePair load_pair(const std::string& ir_path, const std::string& vis_path);

AnnotationSet load_annotations(const std::string& path, int class_count);
void save_annotations(const std::string& path, const AnnotationSet& ann);

// Row-major multi-class run-length encoding: counts holds (value, run) pairs.
std::vector<std::int64_t> mask_to_rle(const Mask& mask);
Mask mask_from_rle(const std::vector<std::int64_t>& counts, int rows, int cols);

// Scans <root>/<split>; annotations may be required or optional.
DatasetManifest scan_manifest(const std::string& root, const std::string& split,
                              bool require_annotations);

}  // namespace ivfuse::data
