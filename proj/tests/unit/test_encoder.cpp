#include <doctest.h>

#include "ivfuse/nn/encoder.hpp"

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"

using namespace ivfuse;
using namespace ivfuse::nn;
using ivfuse::testing::gradcheck;
using ivfuse::testing::random_tensor;

namespace {

template <typename S>
void zero_params(ParamMap<S>& pm) {
    for (auto& [name, v] : pm.items) v->value.array().setZero();
}

}  // namespace

TEST_SUITE_BEGIN("encoder");

TEST_CASE("split attention config invariants") {
    SplitAttentionConfig bad{2, 3, 32, 4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    SplitAttentionConfig bad2{0, 1, 32, 4};
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    SplitAttentionConfig ok{2, 1, 32, 4};
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("radix-1 block with zero gate weights: shortcut + half conv path") {
    Rng rng(31);
    SplitAttentionBlock<double> block(SplitAttentionConfig{1, 1, 2, 2}, rng);
    // zero the squeeze network -> sigmoid gate is exactly 0.5; unit scale
    ParamMap<double> gate_params;
    block.fc1.collect("fc1", gate_params);
    block.fc2.collect("fc2", gate_params);
    zero_params(gate_params);
    block.scale->value[0] = 1.0;

    auto x = ad::make_leaf<double>(random_tensor(Shape::nchw(1, 2, 4, 4), rng), false);
    auto y = block(x);

    // hand-composed: x + 0.5 * relu(conv(x)), conv via independent loop
    Tensor<double> conv =
        ivfuse::testing::conv3x3_same_loop(x->value, block.branch[0].w->value,
                                           block.branch[0].b->value);
    for (std::int64_t i = 0; i < conv.size(); ++i) {
        double expected = x->value[i] + 0.5 * std::max(0.0, conv[i]);
        CHECK(y->value[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("zero input with zero biases stays zero") {
    Rng rng(32);
    SplitAttentionBlock<double> block(SplitAttentionConfig{2, 1, 3, 2}, rng);
    block.scale->value[0] = 0.9;
    auto x = ad::make_leaf<double>(Tensor<double>::zeros(Shape::nchw(1, 3, 5, 5)), false);
    auto y = block(x);
    CHECK((y->value.array() == 0.0).all());
}

TEST_CASE("block gradcheck over every parameter") {
    Rng rng(33);
    SplitAttentionBlock<double> block(SplitAttentionConfig{2, 1, 4, 2}, rng);
    block.scale->value[0] = 0.7;
    auto x = ad::make_leaf<double>(random_tensor(Shape::nchw(1, 4, 5, 6), rng), true);
    ParamMap<double> params;
    block.collect("block", params);
    std::vector<ad::Var<double>> leaves{x};
    for (auto& [name, v] : params.items) leaves.push_back(v);
    auto build = [&] { return ad::mean_all(ad::sigmoid(block(x))); };
    CHECK(gradcheck(build, leaves) < 1e-4);
}

TEST_CASE("radix gates sum to one across groups") {
    Rng rng(34);
    SplitAttentionBlock<double> block(SplitAttentionConfig{3, 1, 4, 2}, rng);
    auto x = ad::make_leaf<double>(random_tensor(Shape::nchw(2, 4, 4, 4), rng), false);
    auto gates = block.gate_values(x);
    for (std::int64_t r = 0; r < gates.shape()[0]; ++r) {
        double s = 0;
        for (std::int64_t g = 0; g < 3; ++g) s += gates.at(r, g);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("encoder determinism and shape contract") {
    Rng rng(35);
    Encoder<double> enc(EncoderConfig{32, 2, 2, 4}, rng);
    auto x = ad::make_leaf<double>(random_tensor(Shape::nchw(1, 1, 64, 64), rng, 0.0, 1.0), false);
    auto f1 = enc(x);
    auto f2 = enc(x);
    CHECK(f1.data->shape() == Shape::nchw(1, 32, 64, 64));
    CHECK(f1.scale == 1);
    CHECK((f1.data->value.array() == f2.data->value.array()).all());
}

TEST_CASE("encoder rejects non-finite input") {
    Rng rng(36);
    Encoder<double> enc(EncoderConfig{8, 1, 2, 4}, rng);
    Tensor<double> bad(Shape::nchw(1, 1, 8, 8));
    bad[10] = std::numeric_limits<double>::quiet_NaN();
    auto x = ad::make_leaf<double>(std::move(bad), false);
    CHECK_THROWS_AS((void)enc(x), ValidationError);
}

TEST_CASE("encoder with L2 head gradcheck") {
    Rng rng(37);
    Encoder<double> enc(EncoderConfig{4, 1, 2, 2}, rng);
    enc.blocks[0].scale->value[0] = 0.5;
    auto x = ad::make_leaf<double>(random_tensor(Shape::nchw(1, 1, 6, 5), rng, 0.0, 1.0), true);
    ParamMap<double> params;
    enc.collect("enc", params);
    std::vector<ad::Var<double>> leaves{x};
    for (auto& [name, v] : params.items) leaves.push_back(v);
    auto build = [&] {
        auto f = enc(x).data;
        return ad::mean_all(ad::mul(f, f));
    };
    CHECK(gradcheck(build, leaves) < 1e-4);
}

TEST_SUITE_END();
