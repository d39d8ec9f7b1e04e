#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpu/error.hpp"
#include "dpu/nn.hpp"
#include "dpu/rng.hpp"

namespace dpu {

// Isotropic Gaussian blobs. Class means sit on a regular polygon of the
// given radius in the first two coordinates (for three classes, the vertices
// of an equilateral triangle); with one input dimension they are spaced
// `radius` apart on the line.
struct BlobParams {
    std::size_t classes = 3;
    std::size_t dims = 2;
    double sigma = 0.3;
    double radius = 1.0;
};

inline std::vector<double> blob_center(const BlobParams& p, std::size_t c) {
    std::vector<double> mu(p.dims, 0.0);
    if (p.dims == 1) {
        mu[0] = p.radius * static_cast<double>(c);
    } else {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(p.classes);
        mu[0] = p.radius * std::cos(angle);
        mu[1] = p.radius * std::sin(angle);
    }
    return mu;
}

// Stratified: class c gets floor(n / C) samples, plus one for c < n % C.
// Rows are shuffled; deterministic in seed.
inline Dataset generate_synthetic(const BlobParams& p, std::size_t n, std::uint64_t seed) {
    detail::require(p.classes >= 2, "need at least two classes");
    detail::require(p.dims >= 1, "need at least one input dimension");
    detail::require(p.sigma >= 0.0, "noise level must be non-negative");
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % p.classes);
    Rng rng(seed);
    rng.shuffle(labels);

    std::vector<std::vector<double>> centers(p.classes);
    for (std::size_t c = 0; c < p.classes; ++c) centers[c] = blob_center(p, c);

    Dataset d(p.dims);
    d.inputs.reserve(n * p.dims);
    d.labels.reserve(n);
    std::vector<double> x(p.dims);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& mu = centers[static_cast<std::size_t>(labels[i])];
        for (std::size_t j = 0; j < p.dims; ++j) x[j] = mu[j] + p.sigma * rng.normal();
        d.push_back(x, labels[i]);
    }
    return d;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path + ": unexpected end of IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// IDX image + label files (the MNIST distribution format). Pixels are scaled
// to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error(images_path + ": cannot open");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error(labels_path + ": cannot open");

    if (detail::read_be32(img, images_path) != kIdxImagesMagic)
        throw std::runtime_error(images_path + ": bad IDX image magic");
    const std::uint32_t count = detail::read_be32(img, images_path);
    const std::uint32_t rows = detail::read_be32(img, images_path);
    const std::uint32_t cols = detail::read_be32(img, images_path);
    if (detail::read_be32(lab, labels_path) != kIdxLabelsMagic)
        throw std::runtime_error(labels_path + ": bad IDX label magic");
    const std::uint32_t label_count = detail::read_be32(lab, labels_path);
    if (label_count != count) throw std::runtime_error(labels_path + ": label count differs from image count");

    const std::size_t dim = std::size_t{rows} * cols;
    Dataset d(dim);
    d.inputs.reserve(std::size_t{count} * dim);
    d.labels.reserve(count);
    std::vector<unsigned char> pix(dim);
    std::vector<double> x(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(dim)))
            throw std::runtime_error(images_path + ": truncated image data");
        char l;
        if (!lab.get(l)) throw std::runtime_error(labels_path + ": truncated label data");
        for (std::size_t j = 0; j < dim; ++j) x[j] = pix[j] / 255.0;
        d.push_back(x, static_cast<unsigned char>(l));
    }
    return d;
}

// Writes IDX files; used by tests and for exporting synthetic pools.
inline void write_idx(const std::string& images_path, const std::string& labels_path, std::uint32_t rows,
                      std::uint32_t cols, const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels) {
    auto be32 = [](std::ostream& o, std::uint32_t v) {
        const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
        o.write(b, 4);
    };
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw std::runtime_error("cannot create IDX files at " + images_path);
    be32(img, kIdxImagesMagic);
    be32(img, static_cast<std::uint32_t>(labels.size()));
    be32(img, rows);
    be32(img, cols);
    img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    be32(lab, kIdxLabelsMagic);
    be32(lab, static_cast<std::uint32_t>(labels.size()));
    lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

enum class DataSource { synthetic_blobs, idx_files };

struct DataConfig {
    DataSource source = DataSource::synthetic_blobs;
    BlobParams blobs;
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t initial_size = 200;   // |D^1|
    std::size_t delta_size = 200;     // |dD^r|
    std::size_t holdout_size = 1000;  // validation + test pool (blobs only)
    double val_fraction = 0.3;
};

// Training pool revealed incrementally plus fixed validation and test sets.
// D^r is the first |D^1| + (r - 1) * |dD| rows of the pool.
class DataStream {
public:
    DataStream(const DataConfig& cfg, std::size_t rounds, std::uint64_t seed) : cfg_(cfg), rounds_(rounds) {
        detail::require(rounds >= 1, "need at least one round");
        detail::require(cfg.initial_size >= 1, "initial dataset must be non-empty");
        detail::require(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0, "validation fraction must lie in (0, 1)");
        const std::size_t needed = cfg.initial_size + (rounds - 1) * cfg.delta_size;
        Dataset holdout;
        if (cfg.source == DataSource::synthetic_blobs) {
            pool_ = generate_synthetic(cfg.blobs, needed, substream(seed, "data-train"));
            holdout = generate_synthetic(cfg.blobs, cfg.holdout_size, substream(seed, "data-holdout"));
        } else {
            Dataset train = load_idx(cfg.train_images, cfg.train_labels);
            if (train.size() < needed)
                throw std::runtime_error(cfg.train_images + ": has " + std::to_string(train.size()) +
                                         " samples, experiment needs " + std::to_string(needed));
            pool_ = shuffled_prefix(train, needed, substream(seed, "data-train"));
            Dataset test = load_idx(cfg.test_images, cfg.test_labels);
            holdout = shuffled_prefix(test, test.size(), substream(seed, "data-holdout"));
        }
        detail::require(holdout.size() >= 2, "holdout pool needs at least two samples");
        auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(holdout.size()) + 0.5));
        n_val = std::clamp<std::size_t>(n_val, 1, holdout.size() - 1);
        std::vector<std::size_t> vi(n_val), ti(holdout.size() - n_val);
        for (std::size_t i = 0; i < n_val; ++i) vi[i] = i;
        for (std::size_t i = n_val; i < holdout.size(); ++i) ti[i - n_val] = i;
        val_ = holdout.subset(vi);
        test_ = holdout.subset(ti);
    }

    std::size_t rounds() const { return rounds_; }
    std::size_t training_size(std::size_t round) const {
        detail::require(round >= 1 && round <= rounds_, "round index out of range");
        return cfg_.initial_size + (round - 1) * cfg_.delta_size;
    }
    // Samples uploaded by the edge before round r; D^1 counts as pre-deployment.
    std::size_t uploaded_samples(std::size_t round) const { return round <= 1 ? 0 : cfg_.delta_size; }
    Dataset training_set(std::size_t round) const { return pool_.prefix(training_size(round)); }
    const Dataset& pool() const { return pool_; }
    const Dataset& validation() const { return val_; }
    const Dataset& test() const { return test_; }
    std::size_t input_dim() const { return pool_.dim; }

private:
    static Dataset shuffled_prefix(const Dataset& d, std::size_t n, std::uint64_t seed) {
        std::vector<std::size_t> idx(d.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(seed);
        rng.shuffle(idx);
        idx.resize(n);
        return d.subset(idx);
    }

    DataConfig cfg_;
    std::size_t rounds_;
    Dataset pool_, val_, test_;
};

}  // namespace dpu
