#pragma once

// Per-weight importance scores used to decide which weights keep their
// fully-updated values and which are rewound to the deployed ones.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dpu/error.hpp"
#include "dpu/nn.hpp"

namespace dpu {

enum class ContributionKind { global, local, combined };

struct ContributionVector {
    ContributionKind kind = ContributionKind::combined;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

// Running sum of -g(w^{q-1}) * dw^q along the optimization path.
class TraceState {
public:
    TraceState() = default;
    explicit TraceState(std::size_t weight_count) : acc_(weight_count, 0.0) {}

    void accumulate(std::span<const double> g, std::span<const double> dw) {
        detail::require(g.size() == acc_.size() && dw.size() == acc_.size(),
                        "trace accumulation length mismatch");
        for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i] -= g[i] * dw[i];
        ++steps_;
    }

    std::span<const double> accumulator() const { return acc_; }
    std::size_t steps_seen() const { return steps_; }
    std::size_t size() const { return acc_.size(); }

    ContributionVector local_contribution() const { return {ContributionKind::local, acc_}; }

private:
    std::vector<double> acc_;
    std::size_t steps_ = 0;
};

inline TraceState accumulate_local(TraceState trace, std::span<const double> g, std::span<const double> dw) {
    trace.accumulate(g, dw);
    return trace;
}

// (w_f - w)^2 elementwise.
inline ContributionVector global_contribution(const WeightVector& w, const WeightVector& w_f) {
    detail::require(w.arch() == w_f.arch(), "global contribution needs weights of the same architecture");
    ContributionVector c{ContributionKind::global, std::vector<double>(w.size())};
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = w_f[i] - w[i];
        c.values[i] = d * d;
    }
    return c;
}

inline constexpr double kDegenerateSum = 1e-12;

namespace detail {

// Divides by the entry sum; falls back to the L1 norm when the sum is not
// safely positive, and to "absent" (returns false) when both vanish.
inline bool normalize_contribution(std::span<const double> v, std::vector<double>& out) {
    double sum = 0.0, l1 = 0.0;
    for (double x : v) {
        sum += x;
        l1 += std::abs(x);
    }
    double scale;
    if (sum > kDegenerateSum)
        scale = sum;
    else if (l1 > kDegenerateSum)
        scale = l1;
    else
        return false;
    out.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / scale;
    return true;
}

}  // namespace detail

inline ContributionVector combine(const ContributionVector& c_global, const ContributionVector& c_local) {
    detail::require(c_global.size() == c_local.size(), "contribution vectors differ in length");
    std::vector<double> ng, nl;
    const bool has_g = detail::normalize_contribution(c_global.values, ng);
    const bool has_l = detail::normalize_contribution(c_local.values, nl);
    if (!has_g && !has_l)
        throw PolicyError("both global and local contributions are degenerate; no ranking is defined");
    ContributionVector c{ContributionKind::combined, std::vector<double>(c_global.size(), 0.0)};
    for (std::size_t i = 0; i < c.values.size(); ++i) {
        if (has_g) c.values[i] += ng[i];
        if (has_l) c.values[i] += nl[i];
    }
    return c;
}

// Columnar text dump: index c_global c_local c_combined
inline void write_contribution_dump(std::ostream& os, const ContributionVector& c_global,
                                    const ContributionVector& c_local, const ContributionVector& c_combined) {
    detail::require(c_global.size() == c_local.size() && c_local.size() == c_combined.size(),
                    "contribution vectors differ in length");
    os << "index c_global c_local c_combined\n";
    char buf[128];
    for (std::size_t i = 0; i < c_global.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu %.17g %.17g %.17g\n", i, c_global.values[i], c_local.values[i],
                      c_combined.values[i]);
        os << buf;
    }
}

}  // namespace dpu
