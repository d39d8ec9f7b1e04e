#pragma once

// Two-step partial updating: a full update from the deployed weights, a
// one-shot rewind of all but the top-kI weights, then sparse fine-tuning of
// the surviving weights with every other coordinate frozen.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dpu/contribution.hpp"
#include "dpu/error.hpp"
#include "dpu/nn.hpp"
#include "dpu/optim.hpp"
#include "dpu/rng.hpp"

namespace dpu {

// Round-half-up of k * I, clamped to [1, I].
inline std::size_t target_k_count(std::size_t weight_count, double k) {
    detail::require(weight_count >= 1, "weight count must be positive");
    detail::require(k > 0.0 && k <= 1.0, "updating ratio k must lie in (0, 1]");
    const double raw = std::floor(k * static_cast<double>(weight_count) + 0.5);
    const auto n = static_cast<std::size_t>(raw);
    return std::clamp<std::size_t>(n, 1, weight_count);
}

class Mask {
public:
    Mask() = default;

    static Mask from_bits(std::vector<std::uint8_t> bits) {
        Mask m;
        for (auto& b : bits) b = b ? 1 : 0;
        m.count_ = static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
        m.bits_ = std::move(bits);
        return m;
    }

    static Mask filled(std::size_t size, bool value) {
        return from_bits(std::vector<std::uint8_t>(size, value ? 1 : 0));
    }

    std::size_t size() const { return bits_.size(); }
    std::size_t count() const { return count_; }
    bool test(std::size_t i) const { return bits_[i] != 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    std::vector<std::size_t> ones() const {
        std::vector<std::size_t> idx;
        idx.reserve(count_);
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i]) idx.push_back(i);
        return idx;
    }

    bool operator==(const Mask& o) const { return bits_ == o.bits_; }

private:
    std::vector<std::uint8_t> bits_;
    std::size_t count_ = 0;
};

// Ones at the `count` largest entries; ties go to the lower index.
inline Mask select_top(std::span<const double> c, std::size_t count) {
    detail::require(count <= c.size(), "cannot select more entries than exist");
    std::vector<std::size_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) { return c[a] > c[b] || (c[a] == c[b] && a < b); };
    if (count < idx.size())
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), before);
    std::vector<std::uint8_t> bits(c.size(), 0);
    for (std::size_t j = 0; j < count; ++j) bits[idx[j]] = 1;
    return Mask::from_bits(std::move(bits));
}

inline Mask select_mask(const ContributionVector& c, double k) {
    return select_top(c.values, target_k_count(c.size(), k));
}

// Exactly `count` ones placed uniformly at random over all positions.
inline Mask uniform_random_mask(std::size_t size, std::size_t count, std::uint64_t seed) {
    detail::require(count <= size, "cannot select more entries than exist");
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    // partial Fisher-Yates
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(rng.below(size - j));
        std::swap(idx[j], idx[r]);
    }
    std::vector<std::uint8_t> bits(size, 0);
    for (std::size_t j = 0; j < count; ++j) bits[idx[j]] = 1;
    return Mask::from_bits(std::move(bits));
}

// Per layer (weights and biases together), round-half-up(k * I_layer)
// trainable positions chosen uniformly. The global count can differ from
// target_k_count because of per-layer rounding, and may be zero for a layer.
inline Mask rpu_mask(const Architecture& arch, double k, std::uint64_t seed) {
    detail::require(k > 0.0 && k <= 1.0, "updating ratio k must lie in (0, 1]");
    std::vector<std::uint8_t> bits(arch.weight_count(), 0);
    for (std::size_t l = 0; l < arch.depth(); ++l) {
        const std::size_t n = arch.layer_weight_count(l);
        const auto count = std::min(n, static_cast<std::size_t>(std::floor(k * static_cast<double>(n) + 0.5)));
        const Mask layer = uniform_random_mask(n, count, substream(seed, "rpu-layer", l));
        const std::size_t off = arch.layer_offset(l);
        for (std::size_t i = 0; i < n; ++i) bits[off + i] = layer.bits()[i];
    }
    return Mask::from_bits(std::move(bits));
}

// w_f where the mask is set, w elsewhere (bitwise copies).
inline WeightVector rewind(const WeightVector& w, const WeightVector& w_f, const Mask& mask) {
    detail::require(w.arch() == w_f.arch(), "rewind needs weights of the same architecture");
    detail::require(mask.size() == w.size(), "mask length does not match weights");
    WeightVector out = w;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (mask.test(i)) out[i] = w_f[i];
    return out;
}

// Deterministic minibatch order: a fresh permutation of the dataset per
// epoch; the final batch of an epoch may be short. batch_size 0 or >= n
// means full-batch training.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
        : n_(n), batch_(batch_size == 0 || batch_size >= n ? n : batch_size), seed_(seed) {
        detail::require(n >= 1, "cannot sample batches from an empty dataset");
        steps_per_epoch_ = (n_ + batch_ - 1) / batch_;
    }

    std::size_t steps_per_epoch() const { return steps_per_epoch_; }

    std::span<const std::size_t> rows(std::size_t q) {
        const std::size_t epoch = (q - 1) / steps_per_epoch_;
        const std::size_t step = (q - 1) % steps_per_epoch_;
        if (epoch != epoch_ || perm_.empty()) {
            perm_.resize(n_);
            std::iota(perm_.begin(), perm_.end(), std::size_t{0});
            if (batch_ < n_) {
                Rng rng(substream(seed_, "epoch", epoch));
                rng.shuffle(perm_);
            }
            epoch_ = epoch;
        }
        const std::size_t begin = step * batch_;
        const std::size_t end = std::min(n_, begin + batch_);
        return std::span<const std::size_t>(perm_).subspan(begin, end - begin);
    }

private:
    std::size_t n_, batch_;
    std::uint64_t seed_;
    std::size_t steps_per_epoch_ = 1;
    std::size_t epoch_ = 0;
    std::vector<std::size_t> perm_;
};

// Everything one optimization run needs; the iteration count is the
// schedule length.
struct TrainPlan {
    const Dataset* data = nullptr;  // not owned
    std::size_t batch_size = 0;
    std::uint64_t shuffle_seed = 0;
    OptimizerConfig optimizer;
    LearningRateSchedule schedule;

    std::size_t iterations() const { return schedule.size(); }

    TrainPlan reseeded(std::string_view tag) const {
        TrainPlan p = *this;
        p.shuffle_seed = substream(shuffle_seed, tag);
        return p;
    }
};

// Unconstrained training; optionally records the local-contribution trace.
inline WeightVector train_full(WeightVector w, const TrainPlan& plan, TraceState* trace = nullptr) {
    detail::require(plan.data != nullptr, "training plan has no dataset");
    Optimizer opt(plan.optimizer, plan.schedule, w.size());
    BatchSampler sampler(plan.data->size(), plan.batch_size, plan.shuffle_seed);
    for (std::size_t q = 1; q <= plan.iterations(); ++q) {
        const LossGradient lg = loss_and_gradient(w, *plan.data, sampler.rows(q));
        const std::vector<double> dw = opt.step(lg.grad, q);
        auto v = w.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += dw[i];
        if (trace) trace->accumulate(lg.grad, dw);
    }
    return w;
}

struct SparseDelta {
    std::vector<std::size_t> indices;  // ascending
    std::vector<double> values;

    WeightVector apply_to(const WeightVector& base) const {
        WeightVector out = base;
        for (std::size_t j = 0; j < indices.size(); ++j) out[indices[j]] += values[j];
        return out;
    }
};

struct PartialUpdateResult {
    WeightVector w_new;
    Mask mask;
    SparseDelta delta;                      // w_new - base on the mask support
    std::optional<double> train_loss_full;  // l(w^f); absent when no full step ran
    double train_loss_rewound = 0.0;        // l(starting point of fine-tuning)
    double train_loss_final = 0.0;          // l(w_new)
};

// Projected training: the optimizer sees full gradients and its moments
// evolve over all coordinates, but only masked coordinates take the step.
inline PartialUpdateResult sparse_finetune(const WeightVector& w_start, const WeightVector& base, const Mask& mask,
                                           const TrainPlan& plan) {
    detail::require(plan.data != nullptr, "training plan has no dataset");
    detail::require(w_start.arch() == base.arch(), "fine-tune start and base differ in architecture");
    detail::require(mask.size() == base.size(), "mask length does not match weights");

    PartialUpdateResult res;
    res.mask = mask;
    res.train_loss_rewound = loss(w_start, *plan.data);

    const std::vector<std::size_t> active = mask.ones();
    WeightVector w = w_start;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (!mask.test(i)) w[i] = base[i];

    Optimizer opt(plan.optimizer, plan.schedule, w.size());
    BatchSampler sampler(plan.data->size(), plan.batch_size, plan.shuffle_seed);
    for (std::size_t q = 1; q <= plan.iterations(); ++q) {
        const LossGradient lg = loss_and_gradient(w, *plan.data, sampler.rows(q));
        const std::vector<double> dw = opt.step(lg.grad, q);
        for (std::size_t i : active) w[i] += dw[i];
    }

    res.delta.indices = active;
    res.delta.values.reserve(active.size());
    for (std::size_t i : active) res.delta.values.push_back(w[i] - base[i]);
    res.train_loss_final = loss(w, *plan.data);
    res.w_new = std::move(w);
    return res;
}

// Output of the unconstrained first step, kept so that several masks can be
// evaluated against the same (w, w^f, trace).
struct FullUpdate {
    WeightVector w_f;
    TraceState trace;
    double train_loss_full = 0.0;
};

inline FullUpdate full_update_step(const WeightVector& w, const TrainPlan& plan) {
    FullUpdate fu;
    fu.trace = TraceState(w.size());
    fu.w_f = train_full(w, plan, &fu.trace);
    fu.train_loss_full = loss(fu.w_f, *plan.data);
    return fu;
}

namespace detail {

inline constexpr std::string_view kFirstStepTag = "first-step";
inline constexpr std::string_view kFineTuneTag = "fine-tune";

}  // namespace detail

// Global-contribution partial updating: mask from (w_f - w)^2 only. Both
// steps run the same learning-rate schedule.
inline PartialUpdateResult gcpu_round(const WeightVector& w, const TrainPlan& plan, double k) {
    const FullUpdate fu = full_update_step(w, plan.reseeded(detail::kFirstStepTag));
    const Mask mask = select_mask(global_contribution(w, fu.w_f), k);
    PartialUpdateResult res = sparse_finetune(rewind(w, fu.w_f, mask), w, mask, plan.reseeded(detail::kFineTuneTag));
    res.train_loss_full = fu.train_loss_full;
    return res;
}

inline ContributionVector combined_contribution(const WeightVector& w, const FullUpdate& fu) {
    return combine(global_contribution(w, fu.w_f), fu.trace.local_contribution());
}

// Deep partial updating: mask from the normalized sum of global and local
// contributions.
inline PartialUpdateResult dpu_round(const WeightVector& w, const TrainPlan& plan, double k) {
    const FullUpdate fu = full_update_step(w, plan.reseeded(detail::kFirstStepTag));
    const Mask mask = select_mask(combined_contribution(w, fu), k);
    PartialUpdateResult res = sparse_finetune(rewind(w, fu.w_f, mask), w, mask, plan.reseeded(detail::kFineTuneTag));
    res.train_loss_full = fu.train_loss_full;
    return res;
}

}  // namespace dpu
