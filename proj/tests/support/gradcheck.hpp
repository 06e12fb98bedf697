#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ivfuse/core/graph.hpp"
#include "ivfuse/core/random.hpp"

namespace ivfuse::testing {

// Central-difference gradient check. `build` must construct a fresh scalar
// graph from the current values of `leaves`; it is evaluated twice per
// checked coordinate. Returns the worst relative error seen. Coordinates
// where both gradients are below `dead_zone` are compared absolutely.
struct GradCheckOpts {
    double step = 1e-5;
    double dead_zone = 1e-6;
    double dead_tol = 1e-8;
    int max_coords_per_leaf = 0;  // 0 = all coordinates
    std::uint64_t subsample_seed = 1234;
};

inline double gradcheck(const std::function<ad::Var<double>()>& build,
                        const std::vector<ad::Var<double>>& leaves,
                        const GradCheckOpts& opts = {}) {
    for (auto& leaf : leaves) leaf->zero_grad();
    auto loss = build();
    ad::backward(loss);

    std::vector<Tensor<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) {
        leaf->ensure_grad();
        analytic.push_back(leaf->grad);
    }

    Rng rng(opts.subsample_seed);
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        std::int64_t count = leaf->value.size();
        std::vector<std::int64_t> coords;
        if (opts.max_coords_per_leaf > 0 && count > opts.max_coords_per_leaf) {
            for (int i = 0; i < opts.max_coords_per_leaf; ++i)
                coords.push_back(rng.uniform_int(count));
        } else {
            coords.resize(static_cast<std::size_t>(count));
            for (std::int64_t i = 0; i < count; ++i) coords[static_cast<std::size_t>(i)] = i;
        }
        for (std::int64_t c : coords) {
            double saved = leaf->value[c];
            leaf->value[c] = saved + opts.step;
            double fp = build()->value.value();
            leaf->value[c] = saved - opts.step;
            double fm = build()->value.value();
            leaf->value[c] = saved;
            double numeric = (fp - fm) / (2.0 * opts.step);
            double a = analytic[li][c];
            double denom = std::max(std::abs(a), std::abs(numeric));
            double rel;
            if (denom < opts.dead_zone)
                rel = std::abs(a - numeric) < opts.dead_tol ? 0.0 : 1.0;
            else
                rel = std::abs(a - numeric) / denom;
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace ivfuse::testing
