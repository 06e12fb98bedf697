#include "ivfuse/data/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "ivfuse/core/random.hpp"

namespace fs = std::filesystem;

namespace ivfuse::data {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

ImagePair synthetic_pair(int index, const SyntheticSpec& spec, AnnotationSet* ann_out) {
    if (spec.height < 8 || spec.width < 8) throw ValidationError("synthetic: size too small");
    if (spec.classes < 2) throw ValidationError("synthetic: need at least 2 classes");
    Rng rng(spec.seed * 1000003ull + static_cast<std::uint64_t>(index));
    int h = spec.height, w = spec.width;

    ImagePair pair;
    char name[32];
    std::snprintf(name, sizeof name, "pair%04d", index);
    pair.id = name;
    pair.infrared = Plane(h, w);
    pair.visible.r = Plane(h, w);
    pair.visible.g = Plane(h, w);
    pair.visible.b = Plane(h, w);

    AnnotationSet ann;
    ann.mask = Mask::Zero(h, w);

    // high-contrast scene with structure shared across the modalities:
    // objects read as bright thermal targets and as dark visible silhouettes
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double fx = static_cast<double>(j) / (w - 1);
            double fy = static_cast<double>(i) / (h - 1);
            double checker = ((i / 4 + j / 4) % 2) ? 0.18 : 0.0;
            pair.infrared(i, j) = clamp01(0.08 + spec.noise * rng.uniform() + 0.06 * fy);
            pair.visible.r(i, j) = clamp01(0.25 + 0.55 * fx + spec.noise * rng.uniform());
            pair.visible.g(i, j) = clamp01(0.2 + 0.55 * fy + checker + spec.noise * rng.uniform());
            pair.visible.b(i, j) = clamp01(0.45 + checker + spec.noise * rng.uniform());
        }

    int objects = 1 + index % 2;
    for (int k = 0; k < objects; ++k) {
        int bw = 6 + static_cast<int>(rng.uniform_int(std::max(2, w / 4)));
        int bh = 6 + static_cast<int>(rng.uniform_int(std::max(2, h / 4)));
        int x0 = 1 + static_cast<int>(rng.uniform_int(std::max<std::int64_t>(1, w - bw - 2)));
        int y0 = 1 + static_cast<int>(rng.uniform_int(std::max<std::int64_t>(1, h - bh - 2)));
        int x1 = std::min(w - 1, x0 + bw);
        int y1 = std::min(h - 1, y0 + bh);
        int cls = 1 + static_cast<int>(rng.uniform_int(spec.classes - 1));

        for (int i = y0; i < y1; ++i)
            for (int j = x0; j < x1; ++j) {
                pair.infrared(i, j) = clamp01(0.88 + 2.0 * spec.noise * rng.uniform());
                pair.visible.r(i, j) = clamp01(0.10 + spec.noise * rng.uniform());
                pair.visible.g(i, j) = clamp01(0.12 + spec.noise * rng.uniform());
                pair.visible.b(i, j) = clamp01(0.16 + spec.noise * rng.uniform());
                ann.mask(i, j) = cls;
            }
        ann.boxes.push_back(Box{cls,
                                {static_cast<double>(x0) / w, static_cast<double>(y0) / h,
                                 static_cast<double>(x1) / w, static_cast<double>(y1) / h}});
    }
    if (index % 3 == 0) {
        // a background box exercises the Iverson gate
        ann.boxes.push_back(Box{0, {0.05, 0.05, 0.3, 0.3}});
    }

    if (ann_out) *ann_out = std::move(ann);
    return pair;
}

void write_synthetic_dataset(const std::string& root, const std::string& split,
                             const SyntheticSpec& spec) {
    fs::path base = fs::path(root) / split;
    fs::create_directories(base / "ir");
    fs::create_directories(base / "vis");
    fs::create_directories(base / "ann");
    for (int i = 0; i < spec.pairs; ++i) {
        AnnotationSet ann;
        ImagePair pair = synthetic_pair(i, spec, &ann);
        write_png((base / "ir" / (pair.id + ".png")).string(), raw_from_plane(pair.infrared));
        write_png((base / "vis" / (pair.id + ".png")).string(), raw_from_color(pair.visible));
        save_annotations((base / "ann" / (pair.id + ".json")).string(), ann);
    }
}

}  // namespace ivfuse::data
