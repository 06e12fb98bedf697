#pragma once

#include <string>

#include "ivfuse/data/dataset.hpp"

namespace ivfuse::nn {

// Subprocess plug point for swapping in a full detector/segmenter: the
// adapter writes the image as PNG and the ground truth in the annotation
// JSON schema, invokes `cmd <image.png> <gt.json> <out.json>`, and reads
// predictions back in the same schema (predicted boxes aligned to the GT
// box order, predicted mask as mask_rle). External predictions are plain
// values: they provide loss terms but no gradients, so gradient-driven
// fusion training needs the in-process heads.
struct ExternalPredictions {
    std::vector<data::Box> boxes;
    data::Mask mask;
};

ExternalPredictions run_external_head(const std::string& cmd, const data::Plane& image,
                                      const data::AnnotationSet& gt, int class_count,
                                      const std::string& workdir);

// Same smooth-L1 foreground regression as the differentiable path, on plain
// values.
double external_detection_loss(const ExternalPredictions& pred, const data::AnnotationSet& gt);

// Hard labels carry no logits, so the segmentation term degrades to the
// pixel misclassification rate for external heads.
double external_segmentation_error(const ExternalPredictions& pred,
                                   const data::AnnotationSet& gt);

}  // namespace ivfuse::nn
