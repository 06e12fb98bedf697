#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ivfuse/core/checkpoint.hpp"
#include "ivfuse/core/ops.hpp"
#include "ivfuse/core/random.hpp"

namespace ivfuse::nn {

using ad::Pad;
using ad::Var;

// Ordered parameter registry shared by the optimizer and the checkpoint
// archive. Order is fixed by module construction so optimizer state lines up
// deterministically across runs.
template <typename S>
struct ParamMap {
    std::vector<std::pair<std::string, Var<S>>> items;

    void add(const std::string& name, const Var<S>& v) { items.emplace_back(name, v); }

    void save(Archive& ar) const {
        for (const auto& [name, v] : items) ar.put(name, v->value);
    }
    void load(const Archive& ar) {
        for (auto& [name, v] : items) {
            Tensor<S> t = ar.template get<S>(name);
            if (t.shape() != v->value.shape())
                throw FormatError("checkpoint: shape mismatch for '" + name + "': " +
                                  t.shape().str() + " vs " + v->value.shape().str());
            v->value = std::move(t);
        }
    }
    void zero_grads() {
        for (auto& [name, v] : items) v->zero_grad();
    }
    void set_trainable(bool trainable) {
        for (auto& [name, v] : items) v->requires_grad = trainable;
    }
};

namespace init {

template <typename S>
Var<S> kaiming_conv(std::int64_t cout, std::int64_t cin, std::int64_t k, Rng& rng) {
    Tensor<S> w(Shape::nchw(cout, cin, k, k));
    double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    for (std::int64_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<S>(rng.normal(0.0, stddev));
    return ad::make_leaf(std::move(w), true);
}

template <typename S>
Var<S> kaiming_linear(std::int64_t out, std::int64_t in, Rng& rng) {
    Tensor<S> w(Shape{out, in});
    double stddev = std::sqrt(2.0 / static_cast<double>(in));
    for (std::int64_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<S>(rng.normal(0.0, stddev));
    return ad::make_leaf(std::move(w), true);
}

template <typename S>
Var<S> zeros(Shape shape) {
    return ad::make_leaf(Tensor<S>::zeros(shape), true);
}

template <typename S>
Var<S> scalar(S v) {
    return ad::make_leaf(Tensor<S>::scalar(v), true);
}

}  // namespace init

template <typename S>
struct Conv2d {
    Var<S> w, b;
    Pad pad = Pad::Same;

    Conv2d() = default;
    Conv2d(std::int64_t cout, std::int64_t cin, std::int64_t k, Rng& rng, Pad pad_ = Pad::Same)
        : w(init::kaiming_conv<S>(cout, cin, k, rng)), b(init::zeros<S>(Shape{cout})), pad(pad_) {}

    Var<S> operator()(const Var<S>& x) const { return ad::conv2d(x, w, b, pad); }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        out.add(prefix + "/w", w);
        out.add(prefix + "/b", b);
    }
};

template <typename S>
struct Linear {
    Var<S> w, b;

    Linear() = default;
    Linear(std::int64_t out, std::int64_t in, Rng& rng)
        : w(init::kaiming_linear<S>(out, in, rng)), b(init::zeros<S>(Shape{out})) {}

    static Linear zero_init(std::int64_t out, std::int64_t in) {
        Linear l;
        l.w = init::zeros<S>(Shape{out, in});
        l.b = init::zeros<S>(Shape{out});
        return l;
    }

    Var<S> operator()(const Var<S>& x) const { return ad::linear(x, w, b); }

    void collect(const std::string& prefix, ParamMap<S>& out) {
        out.add(prefix + "/w", w);
        out.add(prefix + "/b", b);
    }
};

}  // namespace ivfuse::nn
