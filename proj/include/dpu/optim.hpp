#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dpu/error.hpp"

namespace dpu {

enum class OptimizerKind { sgd, nesterov_sgd, adam };

inline std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::nesterov_sgd: return "nesterov";
        case OptimizerKind::adam: return "adam";
    }
    return "?";
}

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "nesterov" || s == "nesterov_sgd") return OptimizerKind::nesterov_sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw InputError("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double momentum = 0.9;  // nesterov
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Explicit per-iteration learning rates, indexed from q = 1.
class LearningRateSchedule {
public:
    LearningRateSchedule() = default;

    explicit LearningRateSchedule(std::vector<double> rates) : rates_(std::move(rates)) {
        for (double a : rates_) detail::require(a > 0.0 && std::isfinite(a), "learning rates must be positive");
    }

    static LearningRateSchedule constant(double rate, std::size_t iterations) {
        return LearningRateSchedule(std::vector<double>(iterations, rate));
    }

    // rate(q) = initial * factor^floor((q - 1) / interval)
    static LearningRateSchedule step_decay(double initial, double factor, std::size_t interval,
                                           std::size_t iterations) {
        detail::require(interval >= 1, "decay interval must be at least one iteration");
        detail::require(factor > 0.0, "decay factor must be positive");
        std::vector<double> rates(iterations);
        double rate = initial;
        for (std::size_t q = 0; q < iterations; ++q) {
            if (q > 0 && q % interval == 0) rate *= factor;
            rates[q] = rate;
        }
        return LearningRateSchedule(std::move(rates));
    }

    std::size_t size() const { return rates_.size(); }
    double at(std::size_t q) const {
        detail::require(q >= 1 && q <= rates_.size(), "iteration index outside learning-rate schedule");
        return rates_[q - 1];
    }
    const std::vector<double>& rates() const { return rates_; }

private:
    std::vector<double> rates_;
};

// Optimizer with its moment state. step() returns the additive update
// so that w^q = w^{q-1} + step.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, LearningRateSchedule schedule, std::size_t weight_count)
        : cfg_(cfg), schedule_(std::move(schedule)), n_(weight_count) {
        if (cfg_.kind != OptimizerKind::sgd) first_.assign(n_, 0.0);
        if (cfg_.kind == OptimizerKind::adam) second_.assign(n_, 0.0);
    }

    std::vector<double> step(std::span<const double> g, std::size_t q) {
        detail::require(g.size() == n_, "gradient length does not match optimizer state");
        detail::require(q >= 1, "iteration index starts at 1");
        const double lr = schedule_.at(q);
        std::vector<double> dw(n_);
        switch (cfg_.kind) {
            case OptimizerKind::sgd:
                for (std::size_t i = 0; i < n_; ++i) dw[i] = -lr * g[i];
                break;
            case OptimizerKind::nesterov_sgd:
                // buf = mu * buf + g;  step = -lr * (g + mu * buf)
                for (std::size_t i = 0; i < n_; ++i) {
                    first_[i] = cfg_.momentum * first_[i] + g[i];
                    dw[i] = -lr * (g[i] + cfg_.momentum * first_[i]);
                }
                break;
            case OptimizerKind::adam: {
                const double qd = static_cast<double>(q);
                const double bc1 = 1.0 - std::pow(cfg_.beta1, qd);
                const double bc2 = 1.0 - std::pow(cfg_.beta2, qd);
                const double step_size = lr / bc1;
                const double sqrt_bc2 = std::sqrt(bc2);
                for (std::size_t i = 0; i < n_; ++i) {
                    first_[i] = cfg_.beta1 * first_[i] + (1.0 - cfg_.beta1) * g[i];
                    second_[i] = cfg_.beta2 * second_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                    const double denom = std::sqrt(second_[i]) / sqrt_bc2 + cfg_.epsilon;
                    dw[i] = -step_size * first_[i] / denom;
                }
                break;
            }
        }
        return dw;
    }

    const OptimizerConfig& config() const { return cfg_; }
    const LearningRateSchedule& schedule() const { return schedule_; }
    std::size_t iterations() const { return schedule_.size(); }
    std::span<const double> first_moment() const { return first_; }
    std::span<const double> second_moment() const { return second_; }

private:
    OptimizerConfig cfg_;
    LearningRateSchedule schedule_;
    std::size_t n_;
    std::vector<double> first_;
    std::vector<double> second_;
};

}  // namespace dpu
