#pragma once

// Analytical server-to-edge and edge-to-server communication accounting.
// Bits are the unit everywhere in this header.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dpu/error.hpp"

namespace dpu {

struct CostParams {
    double weight_bits = 32.0;  // S_w
    double sample_bits = 0.0;   // S_d
    std::size_t weight_count = 1;
    std::size_t nodes = 1;

    void validate() const {
        detail::require(weight_bits > 0.0, "weight bitwidth must be positive");
        detail::require(sample_bits >= 0.0, "sample size must be non-negative");
        detail::require(weight_count >= 1, "weight count must be positive");
        detail::require(nodes >= 1, "node count must be at least one");
    }
};

// Binary entropy of the mask bits, base 2; 0 at both endpoints.
inline double index_entropy(double k) {
    detail::require(k >= 0.0 && k <= 1.0, "index entropy needs k in [0, 1]");
    auto term = [](double p) { return p > 0.0 ? -p * std::log2(p) : 0.0; };
    return term(k) + term(1.0 - k);
}

// S_w * k * I + S_x(k) * I
inline double server_to_edge_bits(double k, const CostParams& p) {
    p.validate();
    const double I = static_cast<double>(p.weight_count);
    return p.weight_bits * k * I + index_entropy(k) * I;
}

inline double full_update_bits(const CostParams& p) {
    p.validate();
    return p.weight_bits * static_cast<double>(p.weight_count);
}

// Same as server_to_edge_bits but with the worst-case index cost S_x = 1.
inline double worst_case_partial_bits(double k, const CostParams& p) {
    p.validate();
    const double I = static_cast<double>(p.weight_count);
    return p.weight_bits * k * I + I;
}

// Largest k for which partial updating is cheaper than full updating under
// the worst-case index cost: (S_w - 1) / S_w.
inline double breakeven_ratio(double weight_bits) {
    detail::require(weight_bits > 0.0, "weight bitwidth must be positive");
    return (weight_bits - 1.0) / weight_bits;
}

// Per-node cost for one round: this node's share of the uploaded samples
// plus what the server sent it.
inline double per_node_total_bits(std::size_t uploaded_samples, double server_to_edge, const CostParams& p) {
    p.validate();
    return p.sample_bits * static_cast<double>(uploaded_samples) / static_cast<double>(p.nodes) + server_to_edge;
}

// Total-cost ratio of partial (analytic, ratio k) over full updating when
// every round uploads `delta_samples` and runs for `rounds` rounds (the first
// round uploads nothing).
inline double analytic_total_ratio(double k, std::size_t delta_samples, std::size_t rounds, const CostParams& p) {
    p.validate();
    detail::require(rounds >= 1, "need at least one round");
    const double uploads = static_cast<double>(rounds - 1) * p.sample_bits * static_cast<double>(delta_samples) /
                           static_cast<double>(p.nodes);
    const double R = static_cast<double>(rounds);
    return (uploads + R * server_to_edge_bits(k, p)) / (uploads + R * full_update_bits(p));
}

// Traffic of one round as seen by the cost model.
struct RoundTraffic {
    std::size_t bytes_sent = 0;        // server -> each edge node
    std::size_t uploaded_samples = 0;  // |dD^r| collected across all nodes
};

enum class CostMode { server_to_edge, total };

inline double per_node_total_bits(const RoundTraffic& t, const CostParams& p) {
    return per_node_total_bits(t.uploaded_samples, 8.0 * static_cast<double>(t.bytes_sent), p);
}

// Sum over rounds of a method's cost divided by the same sum for full
// updating. Uses the bytes actually emitted by the codec.
inline double cumulative_ratio(std::span<const RoundTraffic> method, std::span<const RoundTraffic> full,
                               CostMode mode, const CostParams& p) {
    detail::require(method.size() == full.size(), "cost ratio needs the same number of rounds for both methods");
    detail::require(!method.empty(), "cost ratio needs at least one round");
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < method.size(); ++r) {
        if (mode == CostMode::server_to_edge) {
            num += 8.0 * static_cast<double>(method[r].bytes_sent);
            den += 8.0 * static_cast<double>(full[r].bytes_sent);
        } else {
            num += per_node_total_bits(method[r], p);
            den += per_node_total_bits(full[r], p);
        }
    }
    detail::require(den > 0.0, "full-updating reference has zero cost");
    return num / den;
}

struct CostCurvePoint {
    std::size_t nodes = 1;
    double ratio = 0.0;
};

inline std::vector<CostCurvePoint> cost_curve(double k, std::size_t delta_samples, std::size_t rounds,
                                              CostParams p, const std::vector<std::size_t>& node_grid) {
    std::vector<CostCurvePoint> out;
    out.reserve(node_grid.size());
    for (std::size_t n : node_grid) {
        p.nodes = n;
        out.push_back({n, analytic_total_ratio(k, delta_samples, rounds, p)});
    }
    return out;
}

}  // namespace dpu
