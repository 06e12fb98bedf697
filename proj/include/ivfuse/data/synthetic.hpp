#pragma once

#include <cstdint>
#include <string>

#include "ivfuse/data/dataset.hpp"

namespace ivfuse::data {

// Deterministic synthetic infrared/visible pairs with box and mask
// annotations: warm rectangular objects on a textured background. Used by
// the toy training runs and the test suites.
struct SyntheticSpec {
    int pairs = 4;
    int height = 32;
    int width = 32;
    int classes = 3;  // including background
    double noise = 0.05;  // per-pixel jitter amplitude
    std::uint64_t seed = 9;
};

ImagePair synthetic_pair(int index, const SyntheticSpec& spec, AnnotationSet* ann_out);

// Writes <root>/<split>/{ir,vis,ann}/pair####.{png,json}.
void write_synthetic_dataset(const std::string& root, const std::string& split,
                             const SyntheticSpec& spec);

}  // namespace ivfuse::data
