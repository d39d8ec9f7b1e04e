#pragma once

// Dense multilayer perceptron with ReLU hidden layers and a softmax
// cross-entropy head. All weights live in one flat vector; layer l occupies
// [offset(l), offset(l) + (fan_in + 1) * fan_out) laid out as the row-major
// fan_out x fan_in matrix followed by fan_out biases.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dpu/error.hpp"
#include "dpu/rng.hpp"

namespace dpu {

class Architecture {
public:
    Architecture() = default;

    explicit Architecture(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
        detail::require(sizes_.size() >= 2, "architecture needs at least an input and an output layer");
        for (std::size_t s : sizes_) detail::require(s >= 1, "layer sizes must be positive");
        offsets_.reserve(sizes_.size());
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            offsets_.push_back(off);
            off += (sizes_[l] + 1) * sizes_[l + 1];
        }
        offsets_.push_back(off);
    }

    const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
    std::size_t input_dim() const { return sizes_.front(); }
    std::size_t num_classes() const { return sizes_.back(); }
    // Number of weight layers (one less than the number of unit layers).
    std::size_t depth() const { return sizes_.size() - 1; }
    std::size_t fan_in(std::size_t l) const { return sizes_[l]; }
    std::size_t fan_out(std::size_t l) const { return sizes_[l + 1]; }
    std::size_t layer_offset(std::size_t l) const { return offsets_[l]; }
    std::size_t layer_weight_count(std::size_t l) const { return offsets_[l + 1] - offsets_[l]; }
    std::size_t weight_count() const { return offsets_.empty() ? 0 : offsets_.back(); }

    bool operator==(const Architecture& o) const { return sizes_ == o.sizes_; }

    std::string to_string() const {
        std::string s;
        for (std::size_t i = 0; i < sizes_.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(sizes_[i]);
        }
        return s;
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
};

class WeightVector {
public:
    WeightVector() = default;

    explicit WeightVector(Architecture arch)
        : arch_(std::move(arch)), values_(arch_.weight_count(), 0.0) {}

    WeightVector(Architecture arch, std::vector<double> values)
        : arch_(std::move(arch)), values_(std::move(values)) {
        detail::require(values_.size() == arch_.weight_count(), "weight vector length does not match architecture");
        detail::require(all_finite(), "weight vector contains non-finite entries");
    }

    const Architecture& arch() const { return arch_; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    // Bitwise equality, distinguishing -0.0 from +0.0.
    bool bit_equal(const WeightVector& o) const {
        if (!(arch_ == o.arch_) || values_.size() != o.values_.size()) return false;
        return std::equal(values_.begin(), values_.end(), o.values_.begin(), [](double a, double b) {
            return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
        });
    }

private:
    Architecture arch_;
    std::vector<double> values_;
};

// Labelled samples stored row-major. Also serves as a batch.
struct Dataset {
    std::size_t dim = 0;
    std::vector<double> inputs;
    std::vector<int> labels;

    Dataset() = default;
    explicit Dataset(std::size_t d) : dim(d) {}

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }

    void push_back(std::span<const double> x, int label) {
        detail::require(x.size() == dim, "sample dimension mismatch");
        inputs.insert(inputs.end(), x.begin(), x.end());
        labels.push_back(label);
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out(dim);
        out.inputs.reserve(idx.size() * dim);
        out.labels.reserve(idx.size());
        for (std::size_t i : idx) out.push_back(row(i), labels[i]);
        return out;
    }

    Dataset prefix(std::size_t n) const {
        Dataset out(dim);
        out.inputs.assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(n * dim));
        out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
        return out;
    }
};

// Glorot-uniform weights, zero biases. Bit-identical for equal (arch, seed).
inline WeightVector init_weights(const Architecture& arch, std::uint64_t seed) {
    WeightVector w(arch);
    Rng rng(seed);
    auto v = w.values();
    for (std::size_t l = 0; l < arch.depth(); ++l) {
        const std::size_t in = arch.fan_in(l), out = arch.fan_out(l);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        const std::size_t off = arch.layer_offset(l);
        for (std::size_t j = 0; j < in * out; ++j) v[off + j] = rng.uniform(-limit, limit);
    }
    return w;
}

struct LossGradient {
    double loss = 0.0;
    std::vector<double> grad;
};

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

namespace detail {

inline void check_batch(const WeightVector& w, const Dataset& data, std::span<const std::size_t> rows) {
    const Architecture& arch = w.arch();
    require(data.dim == arch.input_dim(), "batch input dimension does not match architecture");
    require(!rows.empty(), "batch must contain at least one sample");
    const int classes = static_cast<int>(arch.num_classes());
    for (std::size_t r : rows) {
        require(r < data.size(), "batch row index out of range");
        require(data.labels[r] >= 0 && data.labels[r] < classes, "label out of range");
    }
}

// Reduction order is canonical (by label, then input values), so any
// permutation of the batch rows yields bit-identical sums.
inline std::vector<std::size_t> canonical_order(const Dataset& data, std::span<const std::size_t> rows) {
    std::vector<std::size_t> order(rows.begin(), rows.end());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (data.labels[a] != data.labels[b]) return data.labels[a] < data.labels[b];
        auto ra = data.row(a), rb = data.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    return order;
}

inline std::vector<std::size_t> all_rows(const Dataset& data) {
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

// Per-sample forward pass. acts[0] is the input; acts[l+1] holds the
// post-activation output of weight layer l (logits for the last layer).
class Forward {
public:
    explicit Forward(const Architecture& arch) : arch_(arch), acts_(arch.layer_sizes().size()) {
        for (std::size_t l = 0; l < acts_.size(); ++l) acts_[l].resize(arch.layer_sizes()[l]);
    }

    void run(std::span<const double> w, std::span<const double> x) {
        std::copy(x.begin(), x.end(), acts_[0].begin());
        const std::size_t depth = arch_.depth();
        for (std::size_t l = 0; l < depth; ++l) {
            const std::size_t in = arch_.fan_in(l), out = arch_.fan_out(l);
            const double* W = w.data() + arch_.layer_offset(l);
            const double* b = W + in * out;
            const std::vector<double>& a = acts_[l];
            std::vector<double>& z = acts_[l + 1];
            for (std::size_t o = 0; o < out; ++o) {
                double s = b[o];
                const double* row = W + o * in;
                for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
                z[o] = (l + 1 < depth) ? std::max(s, 0.0) : s;
            }
        }
    }

    const std::vector<double>& logits() const { return acts_.back(); }
    const std::vector<double>& activation(std::size_t l) const { return acts_[l]; }

    // Cross-entropy of the current logits; writes softmax(logits) - onehot into dlogits.
    double cross_entropy(int label, std::vector<double>* dlogits) const {
        const std::vector<double>& z = logits();
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        const double lse = m + std::log(sum);
        if (dlogits) {
            dlogits->resize(z.size());
            for (std::size_t c = 0; c < z.size(); ++c) (*dlogits)[c] = std::exp(z[c] - lse);
            (*dlogits)[static_cast<std::size_t>(label)] -= 1.0;
        }
        return lse - z[static_cast<std::size_t>(label)];
    }

    int argmax() const {
        const std::vector<double>& z = logits();
        return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }

private:
    const Architecture& arch_;
    std::vector<std::vector<double>> acts_;
};

}  // namespace detail

inline double loss(const WeightVector& w, const Dataset& data, std::span<const std::size_t> rows) {
    detail::check_batch(w, data, rows);
    detail::Forward fwd(w.arch());
    double total = 0.0;
    for (std::size_t r : detail::canonical_order(data, rows)) {
        fwd.run(w.values(), data.row(r));
        total += fwd.cross_entropy(data.labels[r], nullptr);
    }
    return total / static_cast<double>(rows.size());
}

inline double loss(const WeightVector& w, const Dataset& data) {
    return loss(w, data, detail::all_rows(data));
}

// Mean cross-entropy over the selected rows and its exact gradient.
inline LossGradient loss_and_gradient(const WeightVector& w, const Dataset& data,
                                      std::span<const std::size_t> rows) {
    detail::check_batch(w, data, rows);
    const Architecture& arch = w.arch();
    const std::size_t depth = arch.depth();
    const auto wv = w.values();

    LossGradient out;
    out.grad.assign(w.size(), 0.0);
    detail::Forward fwd(arch);
    std::vector<double> delta, prev;

    for (std::size_t r : detail::canonical_order(data, rows)) {
        fwd.run(wv, data.row(r));
        out.loss += fwd.cross_entropy(data.labels[r], &delta);
        for (std::size_t l = depth; l-- > 0;) {
            const std::size_t in = arch.fan_in(l), nout = arch.fan_out(l);
            const std::size_t off = arch.layer_offset(l);
            const double* W = wv.data() + off;
            double* gW = out.grad.data() + off;
            double* gb = gW + in * nout;
            const std::vector<double>& a = fwd.activation(l);
            for (std::size_t o = 0; o < nout; ++o) {
                const double d = delta[o];
                double* grow = gW + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
                gb[o] += d;
            }
            if (l == 0) break;
            prev.assign(in, 0.0);
            for (std::size_t o = 0; o < nout; ++o) {
                const double d = delta[o];
                const double* row = W + o * in;
                for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
            }
            // ReLU derivative taken as 0 at the kink.
            for (std::size_t i = 0; i < in; ++i)
                if (a[i] <= 0.0) prev[i] = 0.0;
            delta.swap(prev);
        }
    }
    const double n = static_cast<double>(rows.size());
    out.loss /= n;
    for (double& g : out.grad) g /= n;
    return out;
}

inline LossGradient loss_and_gradient(const WeightVector& w, const Dataset& data) {
    return loss_and_gradient(w, data, detail::all_rows(data));
}

// Central differences of an arbitrary scalar function of a flat vector.
template <class F>
std::vector<double> finite_diff_gradient_of(F&& f, std::span<const double> x, double eps) {
    detail::require(eps > 0.0, "finite-difference step must be positive");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(std::span<const double>(probe));
        probe[i] = orig - eps;
        const double down = f(std::span<const double>(probe));
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

// Central differences, two loss evaluations per coordinate.
inline std::vector<double> finite_diff_gradient(const WeightVector& w, const Dataset& data, double eps) {
    detail::require(eps > 0.0, "finite-difference step must be positive");
    const auto rows = detail::all_rows(data);
    detail::check_batch(w, data, rows);
    std::vector<double> g(w.size());
    WeightVector probe = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double orig = w[i];
        probe[i] = orig + eps;
        const double up = loss(probe, data, rows);
        probe[i] = orig - eps;
        const double down = loss(probe, data, rows);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

inline Evaluation evaluate(const WeightVector& w, const Dataset& data) {
    const auto rows = detail::all_rows(data);
    detail::check_batch(w, data, rows);
    detail::Forward fwd(w.arch());
    Evaluation ev;
    std::size_t correct = 0;
    for (std::size_t r : detail::canonical_order(data, rows)) {
        fwd.run(w.values(), data.row(r));
        ev.loss += fwd.cross_entropy(data.labels[r], nullptr);
        if (fwd.argmax() == data.labels[r]) ++correct;
    }
    ev.loss /= static_cast<double>(data.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return ev;
}

inline double accuracy(const WeightVector& w, const Dataset& data) { return evaluate(w, data).accuracy; }

}  // namespace dpu
