#pragma once

// Experiment configuration files: `key = value` lines grouped under
// `[section]` headers, `#` or `;` comments. The first key must be
// `format_version = 1`. Recognised sections and keys:
//
//   [experiment]  methods, seeds, rounds, k, reject_policy
//   [network]     layers                       (comma-separated unit counts)
//   [data]        source (blobs | idx), classes, dims, sigma, radius,
//                 initial_size, delta_size, holdout_size, val_fraction,
//                 train_images, train_labels, test_images, test_labels
//   [training]    optimizer (adam | sgd | nesterov), learning_rate,
//                 decay_factor, decay_epochs, epochs, batch_size,
//                 momentum, beta1, beta2, epsilon
//   [comm]        weight_bits (32 | 64), sample_bits, nodes
//
// Seeds accept lists and inclusive ranges: `1..5`, `1,3,7`, `1..3,9`.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpu/error.hpp"
#include "dpu/rounds.hpp"

namespace dpu {

inline constexpr int kConfigFormatVersion = 1;

class ConfigError : public InputError {
public:
    ConfigError(const std::string& source, std::size_t line, const std::string& msg)
        : InputError(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct ConfigEntry {
    std::string value;
    std::size_t line = 0;
};

// section -> key -> entry; top-level keys live in section "".
struct ConfigDocument {
    std::string source;
    std::map<std::string, std::map<std::string, ConfigEntry>> sections;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

inline ConfigDocument parse_config(std::istream& in, const std::string& source) {
    ConfigDocument doc;
    doc.source = source;
    doc.sections[""];
    std::string section;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(source, lineno, "unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError(source, lineno, "empty section name");
            if (doc.sections.count(section)) throw ConfigError(source, lineno, "duplicate section [" + section + "]");
            doc.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(source, lineno, "expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(source, lineno, "missing key before '='");
        auto& sec = doc.sections[section];
        if (sec.count(key)) throw ConfigError(source, lineno, "duplicate key '" + key + "'");
        sec[key] = {value, lineno};
    }
    return doc;
}

inline ConfigDocument parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, 0, "cannot open config file");
    return parse_config(in, path);
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    auto num = [&](const std::string& t) {
        std::uint64_t v = 0;
        const auto* end = t.data() + t.size();
        const auto r = std::from_chars(t.data(), end, v);
        if (r.ec != std::errc() || r.ptr != end) throw InputError("invalid seed '" + t + "'");
        return v;
    };
    for (const std::string& item : detail::split_list(s)) {
        const auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(num(item));
            continue;
        }
        const std::uint64_t lo = num(detail::trim(item.substr(0, dots)));
        const std::uint64_t hi = num(detail::trim(item.substr(dots + 2)));
        if (hi < lo) throw InputError("seed range '" + item + "' is empty");
        if (hi - lo >= 1000000) throw InputError("seed range '" + item + "' is too large");
        for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
    }
    if (out.empty()) throw InputError("seed list is empty");
    return out;
}

inline std::vector<Method> parse_method_list(const std::string& s) {
    std::vector<Method> out;
    for (const std::string& item : detail::split_list(s)) {
        const Method m = parse_method(item);
        if (std::find(out.begin(), out.end(), m) != out.end()) throw InputError("method '" + item + "' listed twice");
        out.push_back(m);
    }
    if (out.empty()) throw InputError("method list is empty");
    return out;
}

// A loaded configuration: the base experiment plus the (method, seed) grid.
struct RunConfig {
    ExperimentConfig experiment;
    std::vector<Method> methods{Method::dpu, Method::fu};
    std::vector<std::uint64_t> seeds{1};
};

namespace detail {

class SectionReader {
public:
    SectionReader(const ConfigDocument& doc, const std::string& section) : doc_(doc), name_(section) {
        auto it = doc.sections.find(section);
        if (it != doc.sections.end()) entries_ = &it->second;
    }

    template <class T, class Parse>
    void read(const std::string& key, T& dst, Parse&& parse) {
        if (!entries_) return;
        auto it = entries_->find(key);
        if (it == entries_->end()) return;
        used_.push_back(key);
        try {
            dst = parse(it->second.value);
        } catch (const std::exception& e) {
            throw ConfigError(doc_.source, it->second.line, field() + key + ": " + e.what());
        }
    }

    void size(const std::string& key, std::size_t& dst) {
        read(key, dst, [](const std::string& v) {
            std::size_t out = 0;
            const auto* end = v.data() + v.size();
            const auto r = std::from_chars(v.data(), end, out);
            if (r.ec != std::errc() || r.ptr != end) throw InputError("expected a non-negative integer, got '" + v + "'");
            return out;
        });
    }

    void real(const std::string& key, double& dst) {
        read(key, dst, [](const std::string& v) {
            std::size_t pos = 0;
            double out = 0.0;
            try {
                out = std::stod(v, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos == 0 || pos != v.size() || !std::isfinite(out)) throw InputError("expected a number, got '" + v + "'");
            return out;
        });
    }

    void text(const std::string& key, std::string& dst) {
        read(key, dst, [](const std::string& v) { return v; });
    }

    // Fails on any key that no read() consumed.
    void finish() const {
        if (!entries_) return;
        for (const auto& [key, entry] : *entries_)
            if (std::find(used_.begin(), used_.end(), key) == used_.end())
                throw ConfigError(doc_.source, entry.line, "unknown key '" + field() + key + "'");
    }

private:
    std::string field() const { return name_.empty() ? std::string() : name_ + "."; }

    const ConfigDocument& doc_;
    std::string name_;
    const std::map<std::string, ConfigEntry>* entries_ = nullptr;
    std::vector<std::string> used_;
};

}  // namespace detail

inline RunConfig load_run_config(const ConfigDocument& doc) {
    static const std::vector<std::string> known{"", "experiment", "network", "data", "training", "comm"};
    for (const auto& [name, entries] : doc.sections) {
        if (std::find(known.begin(), known.end(), name) == known.end()) {
            const std::size_t line = entries.empty() ? 0 : entries.begin()->second.line;
            throw ConfigError(doc.source, line, "unknown section [" + name + "]");
        }
    }

    RunConfig rc;
    ExperimentConfig& e = rc.experiment;

    detail::SectionReader top(doc, "");
    std::size_t version = 0;
    top.size("format_version", version);
    top.finish();
    const auto& root = doc.sections.at("");
    if (!root.count("format_version")) throw ConfigError(doc.source, 0, "missing format_version");
    if (version != kConfigFormatVersion)
        throw ConfigError(doc.source, root.at("format_version").line,
                          "unsupported format_version " + std::to_string(version));

    detail::SectionReader ex(doc, "experiment");
    ex.read("methods", rc.methods, parse_method_list);
    ex.read("seeds", rc.seeds, parse_seed_list);
    ex.size("rounds", e.rounds);
    ex.real("k", e.k);
    ex.read("reject_policy", e.reject, [](const std::string& v) {
        if (v == "skip") return RejectPolicy::skip;
        if (v == "transmit") return RejectPolicy::transmit;
        throw InputError("expected skip or transmit, got '" + v + "'");
    });
    ex.finish();

    detail::SectionReader net(doc, "network");
    net.read("layers", e.arch, [](const std::string& v) {
        std::vector<std::size_t> sizes;
        for (const std::string& item : detail::split_list(v)) {
            std::size_t n = 0;
            const auto* end = item.data() + item.size();
            const auto r = std::from_chars(item.data(), end, n);
            if (r.ec != std::errc() || r.ptr != end) throw InputError("invalid layer size '" + item + "'");
            sizes.push_back(n);
        }
        return Architecture(std::move(sizes));
    });
    net.finish();

    detail::SectionReader data(doc, "data");
    DataConfig& d = e.data;
    data.read("source", d.source, [](const std::string& v) {
        if (v == "blobs") return DataSource::synthetic_blobs;
        if (v == "idx") return DataSource::idx_files;
        throw InputError("expected blobs or idx, got '" + v + "'");
    });
    data.size("classes", d.blobs.classes);
    data.size("dims", d.blobs.dims);
    data.real("sigma", d.blobs.sigma);
    data.real("radius", d.blobs.radius);
    data.size("initial_size", d.initial_size);
    data.size("delta_size", d.delta_size);
    data.size("holdout_size", d.holdout_size);
    data.real("val_fraction", d.val_fraction);
    data.text("train_images", d.train_images);
    data.text("train_labels", d.train_labels);
    data.text("test_images", d.test_images);
    data.text("test_labels", d.test_labels);
    data.finish();

    detail::SectionReader tr(doc, "training");
    TrainingConfig& t = e.training;
    tr.read("optimizer", t.optimizer.kind, parse_optimizer_kind);
    tr.real("learning_rate", t.learning_rate);
    tr.real("decay_factor", t.decay_factor);
    tr.size("decay_epochs", t.decay_epochs);
    tr.size("epochs", t.epochs);
    tr.size("batch_size", t.batch_size);
    tr.real("momentum", t.optimizer.momentum);
    tr.real("beta1", t.optimizer.beta1);
    tr.real("beta2", t.optimizer.beta2);
    tr.real("epsilon", t.optimizer.epsilon);
    tr.finish();

    detail::SectionReader cm(doc, "comm");
    std::size_t wbits = e.comm.weight_bits;
    cm.size("weight_bits", wbits);
    cm.real("sample_bits", e.comm.sample_bits);
    cm.size("nodes", e.comm.nodes);
    cm.finish();
    if (wbits > std::numeric_limits<unsigned>::max()) wbits = 0;
    e.comm.weight_bits = static_cast<unsigned>(wbits);

    try {
        e.validate();
    } catch (const InputError& err) {
        throw ConfigError(doc.source, 0, err.what());
    }
    return rc;
}

inline RunConfig load_run_config_file(const std::string& path) { return load_run_config(parse_config_file(path)); }

// Canonical rendering; parses back to an equal configuration.
inline std::string to_config_text(const RunConfig& rc) {
    const ExperimentConfig& e = rc.experiment;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::ostringstream o;
    o << "format_version = " << kConfigFormatVersion << "\n\n[experiment]\nmethods = ";
    for (std::size_t i = 0; i < rc.methods.size(); ++i) o << (i ? "," : "") << to_string(rc.methods[i]);
    o << "\nseeds = ";
    for (std::size_t i = 0; i < rc.seeds.size(); ++i) o << (i ? "," : "") << rc.seeds[i];
    o << "\nrounds = " << e.rounds << "\nk = " << num(e.k)
      << "\nreject_policy = " << (e.reject == RejectPolicy::skip ? "skip" : "transmit") << "\n\n[network]\nlayers = "
      << e.arch.to_string() << "\n\n[data]\nsource = "
      << (e.data.source == DataSource::synthetic_blobs ? "blobs" : "idx") << "\nclasses = " << e.data.blobs.classes
      << "\ndims = " << e.data.blobs.dims << "\nsigma = " << num(e.data.blobs.sigma)
      << "\nradius = " << num(e.data.blobs.radius) << "\ninitial_size = " << e.data.initial_size
      << "\ndelta_size = " << e.data.delta_size << "\nholdout_size = " << e.data.holdout_size
      << "\nval_fraction = " << num(e.data.val_fraction) << "\n";
    if (e.data.source == DataSource::idx_files)
        o << "train_images = " << e.data.train_images << "\ntrain_labels = " << e.data.train_labels
          << "\ntest_images = " << e.data.test_images << "\ntest_labels = " << e.data.test_labels << "\n";
    const TrainingConfig& t = e.training;
    o << "\n[training]\noptimizer = " << to_string(t.optimizer.kind) << "\nlearning_rate = " << num(t.learning_rate)
      << "\ndecay_factor = " << num(t.decay_factor) << "\ndecay_epochs = " << t.decay_epochs
      << "\nepochs = " << t.epochs << "\nbatch_size = " << t.batch_size << "\nmomentum = " << num(t.optimizer.momentum)
      << "\nbeta1 = " << num(t.optimizer.beta1) << "\nbeta2 = " << num(t.optimizer.beta2)
      << "\nepsilon = " << num(t.optimizer.epsilon) << "\n\n[comm]\nweight_bits = " << e.comm.weight_bits
      << "\nsample_bits = " << num(e.comm.sample_bits) << "\nnodes = " << e.comm.nodes << "\n";
    return o.str();
}

}  // namespace dpu
