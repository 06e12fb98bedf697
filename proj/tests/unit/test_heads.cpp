#include <doctest.h>

#include "ivfuse/nn/external_heads.hpp"
#include "ivfuse/nn/heads.hpp"
#include "ivfuse/nn/losses.hpp"

#include <filesystem>
#include <fstream>

#include "../support/gradcheck.hpp"

using namespace ivfuse;
using namespace ivfuse::nn;
using ivfuse::ad::make_leaf;
using ivfuse::testing::gradcheck;
using ivfuse::testing::random_tensor;

namespace {

data::AnnotationSet two_box_annotation() {
    data::AnnotationSet gt;
    gt.mask = data::Mask::Zero(8, 8);
    gt.mask.block(1, 1, 3, 3).setConstant(1);
    gt.boxes.push_back({1, {0.1, 0.1, 0.5, 0.5}});
    gt.boxes.push_back({2, {0.4, 0.5, 0.9, 0.95}});
    return gt;
}

}  // namespace

TEST_SUITE_BEGIN("task_heads");

TEST_CASE("zero ground truth gives an empty prediction and zero loss") {
    Rng rng(91);
    DetectionHead<double> head(HeadConfig{4, 3}, rng);
    data::AnnotationSet empty;
    empty.mask = data::Mask::Zero(8, 8);
    auto image = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), false);
    auto pred = head(image, empty);
    CHECK(pred.count == 0);
    CHECK(pred.deltas == nullptr);
    CHECK(detection_regression_loss<double>(pred.deltas, empty)->value.value() == 0.0);
}

TEST_CASE("zero head weights: all deltas zero, loss matches hand computation") {
    Rng rng(92);
    DetectionHead<double> head(HeadConfig{4, 3}, rng);
    ParamMap<double> params;
    head.collect("det", params);
    for (auto& [name, v] : params.items) v->value.array().setZero();

    auto gt = two_box_annotation();
    auto image = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), false);
    auto pred = head(image, gt);
    CHECK(pred.count == 2);
    CHECK((pred.deltas->value.array() == 0.0).all());

    double expect = 0;
    for (const auto& b : gt.boxes) {
        for (double v : b.xyxy) expect += std::abs(v) < 1.0 ? 0.5 * v * v : std::abs(v) - 0.5;
    }
    expect /= 2.0;  // two foreground objects
    CHECK(detection_regression_loss<double>(pred.deltas, gt)->value.value() ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("detect and segment are deterministic and do not mutate inputs") {
    Rng rng(93);
    DetectionHead<double> det(HeadConfig{4, 3}, rng);
    SegmentationHead<double> seg(HeadConfig{4, 3}, rng);
    auto gt = two_box_annotation();
    Tensor<double> pixels = random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0);
    Tensor<double> copy = pixels;
    auto image = make_leaf(std::move(pixels), false);

    auto p1 = det(image, gt);
    auto p2 = det(image, gt);
    CHECK((p1.deltas->value.array() == p2.deltas->value.array()).all());
    auto l1 = seg(image);
    auto l2 = seg(image);
    CHECK((l1->value.array() == l2->value.array()).all());
    CHECK((image->value.array() == copy.array()).all());
}

TEST_CASE("segment shape contract and uniform-logit composition") {
    Rng rng(94);
    SegmentationHead<double> head(HeadConfig{4, 5}, rng);
    auto image = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 9, 7), rng, 0.0, 1.0), false);
    auto logits = head(image);
    CHECK(logits->shape() == Shape::nchw(1, 5, 9, 7));

    ParamMap<double> params;
    head.collect("seg", params);
    for (auto& [name, v] : params.items) v->value.array().setZero();
    auto uniform = head(image);
    CHECK((uniform->value.array() == 0.0).all());
    data::Mask mask = data::Mask::Zero(9, 7);
    CHECK(segmentation_loss<double>(uniform, mask)->value.value() ==
          doctest::Approx(std::log(5.0)).epsilon(1e-9));
}

TEST_CASE("gradcheck through segment + segmentation loss") {
    Rng rng(95);
    SegmentationHead<double> head(HeadConfig{3, 2}, rng);
    auto image = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 6, 6), rng, 0.0, 1.0), true);
    data::Mask mask(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) mask(i, j) = (i ^ j) & 1;
    ParamMap<double> params;
    head.collect("seg", params);
    std::vector<ad::Var<double>> leaves{image};
    for (auto& [name, v] : params.items) {
        // generic evaluation point: zero biases put dead-zone relu inputs
        // exactly on the kink where finite differences are invalid
        v->value.array() += random_tensor(v->value.shape(), rng, -0.05, 0.05).array();
        leaves.push_back(v);
    }
    auto build = [&] { return segmentation_loss<double>(head(image), mask); };
    CHECK(gradcheck(build, leaves) < 1e-4);
}

TEST_CASE("gradcheck through detect + regression loss") {
    Rng rng(96);
    DetectionHead<double> head(HeadConfig{3, 3}, rng);
    auto gt = two_box_annotation();
    auto image = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), true);
    ParamMap<double> params;
    head.collect("det", params);
    std::vector<ad::Var<double>> leaves{image};
    for (auto& [name, v] : params.items) {
        v->value.array() += random_tensor(v->value.shape(), rng, -0.05, 0.05).array();
        leaves.push_back(v);
    }
    auto build = [&] { return detection_regression_loss<double>(head(image, gt).deltas, gt); };
    CHECK(gradcheck(build, leaves) < 1e-4);
}

TEST_CASE("freeze stops gradients into head weights but not into the image") {
    Rng rng(97);
    DetectionHead<double> head(HeadConfig{4, 3}, rng);
    auto gt = two_box_annotation();
    auto image = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), true);

    freeze<double>(head);
    CHECK_FALSE(head.trainable);
    auto loss = detection_regression_loss<double>(head(image, gt).deltas, gt);
    ad::backward(loss);
    ParamMap<double> params;
    head.collect("det", params);
    for (auto& [name, v] : params.items) {
        CHECK_FALSE(v->requires_grad);
        CHECK_FALSE(v->grad_ready);  // graph never touched them
    }
    image->ensure_grad();
    CHECK(image->grad.array().abs().sum() > 0.0);

    unfreeze<double>(head);
    CHECK(head.trainable);
}

TEST_CASE("detection total carries gradient only through the fused term") {
    Rng rng(98);
    DetectionHead<double> head(HeadConfig{4, 3}, rng);
    freeze<double>(head);
    auto gt = two_box_annotation();
    auto ir = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), false);
    auto vis = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), false);
    auto fused = make_leaf<double>(random_tensor(Shape::nchw(1, 1, 8, 8), rng, 0.0, 1.0), true);

    auto total = detection_loss_total<double>(
        detection_regression_loss<double>(head(ir, gt).deltas, gt),
        detection_regression_loss<double>(head(vis, gt).deltas, gt),
        detection_regression_loss<double>(head(fused, gt).deltas, gt));
    fused->zero_grad();
    ad::backward(total);
    Tensor<double> total_grad = fused->grad;

    fused->zero_grad();
    auto f_only = detection_regression_loss<double>(head(fused, gt).deltas, gt);
    ad::backward(f_only);
    CHECK((total_grad.array() == fused->grad.array()).all());
}

TEST_CASE("external head adapter round trips predictions through the json schema") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "ivfuse_external_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // a fake head that echoes the ground truth as its prediction
    fs::path script = dir / "echo_head.sh";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\ncp \"$2\" \"$3\"\n";
    }
    fs::permissions(script, fs::perms::owner_all | fs::perms::group_read |
                                fs::perms::others_read);

    auto gt = two_box_annotation();
    data::Plane image = data::Plane::Constant(8, 8, 0.4);
    auto pred = nn::run_external_head(script.string(), image, gt, 3, (dir / "work").string());
    REQUIRE(pred.boxes.size() == gt.boxes.size());
    CHECK(nn::external_detection_loss(pred, gt) == 0.0);
    CHECK(nn::external_segmentation_error(pred, gt) == 0.0);

    CHECK_THROWS_AS((void)nn::run_external_head("/nonexistent_cmd_xyz", image, gt, 3,
                                                (dir / "work").string()),
                    IoError);
    fs::remove_all(dir);
}

TEST_CASE("external prediction losses follow the shared formulas") {
    auto gt = two_box_annotation();
    nn::ExternalPredictions pred;
    pred.boxes = gt.boxes;
    pred.mask = gt.mask;
    // perturb the first (foreground) box by |diff| = (0.5, 2, 0, 0)
    pred.boxes[0].xyxy[0] += 0.5;
    pred.boxes[0].xyxy[1] += 2.0;
    // two foreground objects, only one perturbed
    CHECK(nn::external_detection_loss(pred, gt) == doctest::Approx(1.625 / 2.0).epsilon(1e-12));

    pred.mask(0, 0) = gt.mask(0, 0) == 0 ? 1 : 0;
    CHECK(nn::external_segmentation_error(pred, gt) ==
          doctest::Approx(1.0 / 64.0).epsilon(1e-12));
}

TEST_SUITE_END();
