#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpu/dpu.hpp"

namespace {

std::vector<double> parse_real_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const std::string& item : dpu::detail::split_list(s)) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != item.size()) throw dpu::InputError("invalid " + what + " value '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw dpu::InputError(what + " list is empty");
    return out;
}

std::vector<std::size_t> parse_count_list(const std::string& s, const std::string& what) {
    std::vector<std::size_t> out;
    try {
        for (std::uint64_t v : dpu::parse_seed_list(s)) out.push_back(static_cast<std::size_t>(v));
    } catch (const dpu::InputError& e) {
        throw dpu::InputError(what + ": " + e.what());
    }
    return out;
}

dpu::RunConfig load_or_default(const std::string& path) {
    if (path.empty()) return {};
    return dpu::load_run_config_file(path);
}

int dump_packet(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dpu::InputError(path + ": cannot open packet file");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const dpu::UpdatePacket p = dpu::decode_packet(bytes);
    dpu::describe_packet(std::cout, p, bytes.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulator for weight-wise partial updating of deployed networks"};
    app.require_subcommand(0, 1);

    std::string dump_path;
    app.add_option("--dump-packet", dump_path, "Pretty-print a packet file and exit");

    std::string config, out, seeds, methods;
    bool force = false;
    std::size_t workers = 0;

    auto* run = app.add_subcommand("run", "Run every (method, seed) cell and write CSVs, packets and a summary");
    run->add_option("--config", config, "Experiment configuration file")->required();
    run->add_option("--out", out, "Output directory")->required();
    run->add_option("--seeds", seeds, "Seed list, e.g. 1..5 or 1,4,9 (overrides the config)");
    run->add_option("--methods", methods, "Comma-separated methods: dpu,gcpu,rpu,fu (overrides the config)");
    run->add_flag("--force", force, "Overwrite a non-empty output directory");
    run->add_option("--workers", workers, "Worker threads (default: DPU_WORKERS or hardware concurrency)");

    std::string k_list = "0.01,0.05,0.1,0.2,0.5", node_list = "1,2,5,10,20,50,100,200,500,1000";
    std::size_t weights = 0, delta = 0, rounds = 0;
    double weight_bits = 0.0, sample_bits = -1.0;
    auto* cost = app.add_subcommand("cost", "Emit the index-cost table and node-count curves as CSV");
    cost->add_option("--config", config, "Take weight count, bitwidths, |dD| and rounds from a configuration");
    cost->add_option("--k", k_list, "Comma-separated updating ratios");
    cost->add_option("--nodes", node_list, "Node counts, e.g. 1..1000 or 1,10,100");
    cost->add_option("--weights", weights, "Number of weights I");
    cost->add_option("--weight-bits", weight_bits, "Bits per weight value");
    cost->add_option("--sample-bits", sample_bits, "Bits per uploaded training sample");
    cost->add_option("--delta", delta, "Samples uploaded per round");
    cost->add_option("--rounds", rounds, "Number of rounds");
    cost->add_option("--out", out, "Directory for cost_k.csv and cost_nodes.csv (default: stdout)");

    auto* ablate = app.add_subcommand("ablate-rewind", "Rewind losses of global, local, combined and random masks");
    ablate->add_option("--config", config, "Experiment configuration file")->required();
    ablate->add_option("--seeds", seeds, "Seed list (overrides the config)");
    ablate->add_option("--out", out, "Output CSV file (default: stdout)");
    ablate->add_option("--workers", workers, "Worker threads");

    std::string packet_file;
    auto* dump = app.add_subcommand("dump-packet", "Pretty-print a packet file");
    dump->add_option("file", packet_file, "Packet file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (!dump_path.empty()) return dump_packet(dump_path);
        if (*dump) return dump_packet(packet_file);

        if (*run) {
            dpu::RunConfig rc = dpu::load_run_config_file(config);
            if (!seeds.empty()) rc.seeds = dpu::parse_seed_list(seeds);
            if (!methods.empty()) rc.methods = dpu::parse_method_list(methods);
            dpu::RunOptions opt;
            opt.out_dir = out;
            opt.force = force;
            opt.workers = workers;
            opt.progress = &std::cerr;
            dpu::run_grid(rc, opt);
            std::cout << (std::filesystem::path(out) / "summary.json").string() << '\n';
            return 0;
        }

        if (*cost) {
            const dpu::RunConfig rc = load_or_default(config);
            dpu::CostParams p = dpu::cost_params(rc.experiment);
            if (weights) p.weight_count = weights;
            if (weight_bits > 0.0) p.weight_bits = weight_bits;
            if (sample_bits >= 0.0) p.sample_bits = sample_bits;
            if (!delta) delta = rc.experiment.data.delta_size;
            if (!rounds) rounds = rc.experiment.rounds;
            const auto ks = parse_real_list(k_list, "k");
            const auto nodes = parse_count_list(node_list, "node");
            if (out.empty()) {
                dpu::write_cost_table(std::cout, ks, p);
                std::cout << '\n';
                dpu::write_node_curve(std::cout, ks, delta, rounds, p, nodes);
            } else {
                std::filesystem::create_directories(out);
                std::ofstream a(std::filesystem::path(out) / "cost_k.csv");
                std::ofstream b(std::filesystem::path(out) / "cost_nodes.csv");
                if (!a || !b) throw std::runtime_error(out + ": cannot write cost tables");
                dpu::write_cost_table(a, ks, p);
                dpu::write_node_curve(b, ks, delta, rounds, p, nodes);
            }
            return 0;
        }

        if (*ablate) {
            dpu::RunConfig rc = dpu::load_run_config_file(config);
            if (!seeds.empty()) rc.seeds = dpu::parse_seed_list(seeds);
            if (out.empty()) {
                dpu::write_ablation_table(std::cout, rc.experiment, rc.seeds, workers);
            } else {
                std::ofstream o(out);
                if (!o) throw std::runtime_error(out + ": cannot write");
                dpu::write_ablation_table(o, rc.experiment, rc.seeds, workers);
            }
            return 0;
        }

        std::cout << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
