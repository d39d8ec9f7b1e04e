#pragma once

// Running a (method, seed) grid and writing its outputs:
//
//   <out>/config.ini                       canonical configuration snapshot
//   <out>/csv/<method>_seed<S>.csv         one row per round
//   <out>/packets/<method>/seed<S>/round<R>.pkt
//   <out>/summary.json                     per-round mean/std across seeds
//
// Cells run on a worker pool. Every file except the summary belongs to one
// cell, and the summary is written after all cells finish.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpu/codec.hpp"
#include "dpu/commcost.hpp"
#include "dpu/config.hpp"
#include "dpu/error.hpp"
#include "dpu/rounds.hpp"

namespace dpu {

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline constexpr const char* kRoundCsvHeader =
    "round,train_loss,val_acc,test_acc,bytes_sent,reinit,skipped,mask_count,uploaded_samples,frame";

inline void write_round_csv(std::ostream& os, const std::vector<RoundLog>& logs) {
    os << kRoundCsvHeader << '\n';
    for (const RoundLog& l : logs)
        os << l.round << ',' << format_real(l.train_loss) << ',' << format_real(l.val_acc) << ','
           << format_real(l.test_acc) << ',' << l.bytes_sent << ',' << int(l.reinit) << ',' << int(l.skipped) << ','
           << l.mask_count << ',' << l.uploaded_samples << ',' << to_string(l.frame) << '\n';
}

inline std::vector<RoundLog> read_round_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kRoundCsvHeader) throw InputError("round CSV has an unexpected header");
    std::vector<RoundLog> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 10) throw InputError("round CSV row has " + std::to_string(f.size()) + " fields");
        RoundLog l;
        l.round = std::stoull(f[0]);
        l.train_loss = std::stod(f[1]);
        l.val_acc = std::stod(f[2]);
        l.test_acc = std::stod(f[3]);
        l.bytes_sent = std::stoull(f[4]);
        l.reinit = f[5] == "1";
        l.skipped = f[6] == "1";
        l.mask_count = std::stoull(f[7]);
        l.uploaded_samples = std::stoull(f[8]);
        for (FrameType t : {FrameType::full, FrameType::sparse, FrameType::reinit_sparse, FrameType::skip})
            if (f[9] == to_string(t)) l.frame = t;
        out.push_back(l);
    }
    return out;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
    detail::require(!v.empty(), "cannot summarize an empty sample");
    MeanStd m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return m;
}

inline std::vector<RoundTraffic> traffic(const std::vector<RoundLog>& logs) {
    std::vector<RoundTraffic> t;
    t.reserve(logs.size());
    for (const RoundLog& l : logs) t.push_back({l.bytes_sent, l.uploaded_samples});
    return t;
}

inline std::size_t cumulative_bytes(const std::vector<RoundLog>& logs) {
    std::size_t total = 0;
    for (const RoundLog& l : logs) total += l.bytes_sent;
    return total;
}

inline CostParams cost_params(const ExperimentConfig& e) {
    CostParams p;
    p.weight_bits = e.comm.weight_bits;
    p.sample_bits = e.comm.sample_bits;
    p.weight_count = e.arch.weight_count();
    p.nodes = e.comm.nodes;
    return p;
}

struct CellResult {
    Method method = Method::dpu;
    std::uint64_t seed = 0;
    std::vector<RoundLog> logs;
};

namespace detail {

inline nlohmann::json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

}  // namespace detail

// Aggregates cells over seeds. Cells of one method must share the seed list
// and round count. The byte ratio against full updating is the mean over
// seeds of the per-seed cumulative ratio.
inline nlohmann::json summarize(const std::vector<CellResult>& cells, const ExperimentConfig& base) {
    std::map<Method, std::map<std::uint64_t, const CellResult*>> by;
    for (const CellResult& c : cells) by[c.method][c.seed] = &c;
    const CostParams params = cost_params(base);

    nlohmann::json out;
    out["format_version"] = kConfigFormatVersion;
    out["methods"] = nlohmann::json::object();
    for (const auto& [method, seeds] : by) {
        const std::size_t rounds = seeds.begin()->second->logs.size();
        nlohmann::json m;
        m["seeds"] = nlohmann::json::array();
        for (const auto& [s, c] : seeds) {
            detail::require(c->logs.size() == rounds, "cells of one method have different round counts");
            m["seeds"].push_back(s);
        }
        m["rounds"] = nlohmann::json::array();
        for (std::size_t r = 0; r < rounds; ++r) {
            std::vector<double> loss, val, test, bytes;
            for (const auto& [s, c] : seeds) {
                const RoundLog& l = c->logs[r];
                loss.push_back(l.train_loss);
                val.push_back(l.val_acc);
                test.push_back(l.test_acc);
                bytes.push_back(static_cast<double>(l.bytes_sent));
            }
            m["rounds"].push_back({{"round", r + 1},
                                   {"train_loss", detail::to_json(mean_std(loss))},
                                   {"val_acc", detail::to_json(mean_std(val))},
                                   {"test_acc", detail::to_json(mean_std(test))},
                                   {"bytes_sent", detail::to_json(mean_std(bytes))}});
        }
        std::vector<double> final_acc, total_bytes;
        for (const auto& [s, c] : seeds) {
            final_acc.push_back(c->logs.back().test_acc);
            total_bytes.push_back(static_cast<double>(cumulative_bytes(c->logs)));
        }
        m["final_test_acc"] = detail::to_json(mean_std(final_acc));
        m["cumulative_bytes"] = detail::to_json(mean_std(total_bytes));

        auto fu = by.find(Method::fu);
        if (fu != by.end()) {
            std::vector<double> s2e, total;
            for (const auto& [s, c] : seeds) {
                auto ref = fu->second.find(s);
                if (ref == fu->second.end() || ref->second->logs.size() != c->logs.size()) continue;
                const auto tm = traffic(c->logs);
                const auto tf = traffic(ref->second->logs);
                s2e.push_back(cumulative_ratio(tm, tf, CostMode::server_to_edge, params));
                total.push_back(cumulative_ratio(tm, tf, CostMode::total, params));
            }
            if (!s2e.empty())
                m["bytes_ratio_vs_fu"] = {{"server_to_edge", detail::to_json(mean_std(s2e))},
                                          {"total", detail::to_json(mean_std(total))}};
        }
        out["methods"][to_string(method)] = m;
    }
    return out;
}

// Worker count: DPU_WORKERS if set to a positive integer, else the hardware
// concurrency; never more than the number of jobs.
inline std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DPU_WORKERS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) n = v;
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs fn(i) for i in [0, jobs) on up to `workers` threads. The first
// exception (by job index) is rethrown after all threads join.
template <class Fn>
void parallel_for(std::size_t jobs, std::size_t workers, Fn&& fn) {
    std::vector<std::exception_ptr> errors(jobs);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct RunOptions {
    std::filesystem::path out_dir;
    bool force = false;
    std::size_t workers = 0;  // 0: worker_count()
    std::ostream* progress = nullptr;
};

inline std::string cell_name(Method m, std::uint64_t seed) { return to_string(m) + "_seed" + std::to_string(seed); }

namespace detail {

inline void prepare_output_dir(const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw InputError(dir.string() + ": exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw InputError(dir.string() + ": output directory is not empty (use --force to overwrite)");
        for (const char* name : {"csv", "packets", "summary.json", "config.ini"}) fs::remove_all(dir / name);
    }
    fs::create_directories(dir / "csv");
    fs::create_directories(dir / "packets");
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream o(p, std::ios::binary);
    if (!o) throw std::runtime_error(p.string() + ": cannot write");
    o << text;
    if (!o) throw std::runtime_error(p.string() + ": write failed");
}

}  // namespace detail

// Runs one cell and writes its CSV and packet trace.
inline CellResult run_cell(ExperimentConfig cfg, Method m, std::uint64_t seed, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    cfg.method = m;
    cfg.seed = seed;
    CellResult cell{m, seed, {}};
    const fs::path pkt_dir = out_dir / "packets" / to_string(m) / ("seed" + std::to_string(seed));
    fs::create_directories(pkt_dir);
    Experiment ex(cfg);
    while (!ex.done()) {
        RoundOutcome o = ex.run_round();
        std::ofstream pkt(pkt_dir / ("round" + std::to_string(o.log.round) + ".pkt"), std::ios::binary);
        pkt.write(reinterpret_cast<const char*>(o.packet.data()), static_cast<std::streamsize>(o.packet.size()));
        cell.logs.push_back(o.log);
    }
    std::ostringstream csv;
    write_round_csv(csv, cell.logs);
    detail::write_file(out_dir / "csv" / (cell_name(m, seed) + ".csv"), csv.str());
    return cell;
}

inline std::vector<CellResult> run_grid(const RunConfig& rc, const RunOptions& opt) {
    const std::size_t jobs = rc.methods.size() * rc.seeds.size();
    detail::require(jobs >= 1, "nothing to run");
    detail::prepare_output_dir(opt.out_dir, opt.force);
    detail::write_file(opt.out_dir / "config.ini", to_config_text(rc));

    std::vector<CellResult> cells(jobs);
    std::mutex io;
    parallel_for(jobs, opt.workers ? std::min(opt.workers, jobs) : worker_count(jobs), [&](std::size_t i) {
        const Method m = rc.methods[i / rc.seeds.size()];
        const std::uint64_t s = rc.seeds[i % rc.seeds.size()];
        cells[i] = run_cell(rc.experiment, m, s, opt.out_dir);
        if (opt.progress) {
            std::lock_guard lock(io);
            *opt.progress << cell_name(m, s) << ": final test acc " << format_real(cells[i].logs.back().test_acc)
                          << ", " << cumulative_bytes(cells[i].logs) << " bytes\n";
        }
    });
    detail::write_file(opt.out_dir / "summary.json", summarize(cells, rc.experiment).dump(2) + "\n");
    return cells;
}

// Rewind-ablation table over seeds: rows are metrics, columns mean and std.
inline void write_ablation_table(std::ostream& os, const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                 std::size_t workers = 0) {
    std::vector<AblationResult> res(seeds.size());
    parallel_for(seeds.size(), workers ? workers : worker_count(seeds.size()), [&](std::size_t i) {
        ExperimentConfig c = base;
        c.seed = seeds[i];
        res[i] = ablate_rewind(c);
    });
    const std::pair<const char*, double AblationResult::*> rows[] = {
        {"full", &AblationResult::loss_full},         {"global", &AblationResult::loss_global},
        {"local", &AblationResult::loss_local},       {"combined", &AblationResult::loss_combined},
        {"random", &AblationResult::loss_random}};
    os << "metric,mean,std\n";
    for (const auto& [name, field] : rows) {
        std::vector<double> v;
        for (const AblationResult& r : res) v.push_back(r.*field);
        const MeanStd m = mean_std(v);
        os << name << ',' << format_real(m.mean) << ',' << format_real(m.std) << '\n';
    }
}

// (k, S_x(k), bits) table. encoded_mask_bits is the codec's size for a
// uniformly random mask with round-half-up(k I) ones.
inline void write_cost_table(std::ostream& os, const std::vector<double>& ks, const CostParams& p,
                             std::uint64_t seed = 1) {
    detail::require(!ks.empty(), "k list is empty");
    p.validate();
    os << "k,entropy,analytic_bits,worst_case_bits,full_bits,encoded_mask_bits,encoded_packet_bits\n";
    for (double k : ks) {
        detail::require(k >= 0.0 && k <= 1.0, "k values must lie in [0, 1]");
        const std::size_t count = static_cast<std::size_t>(std::floor(k * static_cast<double>(p.weight_count) + 0.5));
        const Mask mask = uniform_random_mask(p.weight_count, count, seed);
        const std::size_t mask_bytes = std::min(raw_mask_bytes(p.weight_count), coded_mask_bytes(mask));
        const double packet_bits =
            8.0 * static_cast<double>(frame_overhead_bytes(FrameType::sparse) + mask_bytes) +
            p.weight_bits * static_cast<double>(count);
        os << format_real(k) << ',' << format_real(index_entropy(k)) << ',' << format_real(server_to_edge_bits(k, p))
           << ',' << format_real(worst_case_partial_bits(k, p)) << ',' << format_real(full_update_bits(p)) << ','
           << 8 * mask_bytes << ',' << format_real(packet_bits) << '\n';
    }
}

// Total-cost ratio against full updating as a function of the node count.
inline void write_node_curve(std::ostream& os, const std::vector<double>& ks, std::size_t delta_samples,
                             std::size_t rounds, const CostParams& p, const std::vector<std::size_t>& nodes) {
    detail::require(!ks.empty(), "k list is empty");
    detail::require(!nodes.empty(), "node list is empty");
    os << "k,nodes,ratio\n";
    for (double k : ks)
        for (const CostCurvePoint& pt : cost_curve(k, delta_samples, rounds, p, nodes))
            os << format_real(k) << ',' << pt.nodes << ',' << format_real(pt.ratio) << '\n';
}

inline void describe_packet(std::ostream& os, const UpdatePacket& p, std::size_t encoded_bytes) {
    os << "version        " << int(p.version) << '\n'
       << "frame_type     " << to_string(p.frame_type) << '\n'
       << "round          " << p.round << '\n'
       << "weight_count   " << p.weight_count << '\n'
       << "encoded_bytes  " << encoded_bytes << '\n';
    if (p.frame_type == FrameType::skip) return;
    os << "value_bits     " << int(p.value_bits) << '\n' << "k_count        " << p.k_count() << '\n';
    if (p.is_sparse()) os << "mask_encoding  " << to_string(p.mask_encoding) << '\n';
    if (p.frame_type == FrameType::reinit_sparse) os << "seed           " << p.seed << '\n';
    const std::vector<std::size_t> idx =
        p.is_sparse() ? p.mask.ones() : std::vector<std::size_t>();
    const std::size_t shown = std::min<std::size_t>(p.values.size(), 16);
    for (std::size_t i = 0; i < shown; ++i)
        os << "  [" << (p.is_sparse() ? idx[i] : i) << "] " << format_real(p.values[i]) << '\n';
    if (shown < p.values.size()) os << "  ... " << p.values.size() - shown << " more values\n";
}

}  // namespace dpu
