#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dpu/dpu.hpp"

namespace testing_support {

inline dpu::Dataset random_batch(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed) {
    dpu::Rng rng(seed);
    dpu::Dataset d(dim);
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : x) v = rng.normal();
        d.push_back(x, static_cast<int>(rng.below(classes)));
    }
    return d;
}

inline dpu::WeightVector random_weights(const dpu::Architecture& arch, std::uint64_t seed, double scale = 0.5) {
    dpu::Rng rng(seed);
    std::vector<double> v(arch.weight_count());
    for (double& x : v) x = scale * rng.normal();
    return dpu::WeightVector(arch, std::move(v));
}

inline double l2(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

inline double rel_l2_error(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    const double scale = std::max({l2(a), l2(b), 1e-300});
    return std::sqrt(d) / scale;
}

// Synthetic blobs with the fixture geometry, small enough for unit tests.
inline dpu::ExperimentConfig small_fixture(dpu::Method m, std::size_t rounds = 3) {
    dpu::ExperimentConfig c;
    c.method = m;
    c.arch = dpu::Architecture({2, 8, 3});
    c.rounds = rounds;
    c.data.initial_size = 60;
    c.data.delta_size = 60;
    c.data.holdout_size = 200;
    c.training.epochs = 5;
    c.training.decay_epochs = 3;
    c.training.batch_size = 32;
    return c;
}

}  // namespace testing_support
