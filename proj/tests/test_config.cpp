#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace dpu;

namespace {

RoundLog sample_log(std::size_t r) {
    RoundLog l;
    l.round = r;
    l.train_loss = 0.1 / double(r) + 1e-17;
    l.val_acc = 1.0 / 3.0;
    l.test_acc = 0.7 + 0.01 * double(r);
    l.bytes_sent = 100 * r;
    l.reinit = r == 1;
    l.skipped = r == 2;
    l.mask_count = 7;
    l.uploaded_samples = r == 1 ? 0 : 60;
    l.frame = r == 2 ? FrameType::skip : FrameType::sparse;
    return l;
}

std::string error_of(const std::string& text) {
    std::istringstream in(text);
    try {
        load_run_config(parse_config(in, "test.ini"));
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

const char* kMinimal = "format_version = 1\n";

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST(Config, FixtureFileLoads) {
    const RunConfig rc = load_run_config_file(std::string(DPU_CONFIG_DIR) + "/fixture.ini");
    EXPECT_EQ(rc.methods, (std::vector<Method>{Method::dpu, Method::gcpu, Method::rpu, Method::fu}));
    EXPECT_EQ(rc.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
    const ExperimentConfig& e = rc.experiment;
    EXPECT_EQ(e.arch, Architecture({2, 32, 32, 3}));
    EXPECT_EQ(e.rounds, 8u);
    EXPECT_DOUBLE_EQ(e.k, 0.1);
    EXPECT_DOUBLE_EQ(e.data.blobs.sigma, 0.3);
    EXPECT_EQ(e.data.initial_size, 200u);
    EXPECT_EQ(e.data.delta_size, 200u);
    EXPECT_EQ(e.training.epochs, 30u);
    EXPECT_EQ(e.training.optimizer.kind, OptimizerKind::adam);
    EXPECT_EQ(e.comm.weight_bits, 32u);
}

TEST(Config, MinimalFileUsesDefaults) {
    std::istringstream in(kMinimal);
    const RunConfig rc = load_run_config(parse_config(in, "m.ini"));
    EXPECT_EQ(rc.experiment.arch, ExperimentConfig{}.arch);
    EXPECT_EQ(rc.seeds, (std::vector<std::uint64_t>{1}));
}

TEST(Config, CanonicalTextRoundtrips) {
    const RunConfig rc = load_run_config_file(std::string(DPU_CONFIG_DIR) + "/fixture.ini");
    const std::string text = to_config_text(rc);
    std::istringstream in(text);
    EXPECT_EQ(to_config_text(load_run_config(parse_config(in, "snap.ini"))), text);
}

TEST(Config, DiagnosticsNameLineAndField) {
    EXPECT_NE(error_of("[experiment]\nrounds = 3\n").find("missing format_version"), std::string::npos);
    EXPECT_NE(error_of("format_version = 2\n").find("test.ini:1: unsupported format_version 2"), std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[training]\nepochs = many\n").find("test.ini:3: training.epochs"),
              std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n\n[training]\nepoch = 3\n").find("test.ini:4: unknown key 'training.epoch'"),
              std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[model]\nx = 1\n").find("unknown section [model]"), std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[comm]\nnodes = 1\nnodes = 2\n").find("test.ini:4: duplicate key"),
              std::string::npos);
    EXPECT_NE(error_of("format_version = 1\njunk\n").find("test.ini:2: expected 'key = value'"), std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[comm\n").find("test.ini:2: unterminated"), std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[experiment]\nmethods = dpu, xyz\n").find("unknown method 'xyz'"),
              std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[experiment]\nk = 0\n").find("updating ratio"), std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[network]\nlayers = 2, 8, 4\n").find("class count"), std::string::npos);
    EXPECT_NE(error_of("format_version = 1\n[comm]\nweight_bits = 16\n").find("weight bits"), std::string::npos);
}

TEST(Config, CommentsAndWhitespace) {
    std::istringstream in("  format_version=1   # version\n; full-line comment\n[ comm ]\n nodes =  4 \n");
    EXPECT_EQ(load_run_config(parse_config(in, "c.ini")).experiment.comm.nodes, 4u);
}

TEST(Config, MissingFileNamesPath) {
    try {
        load_run_config_file("/nonexistent/dir/x.ini");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.ini"), std::string::npos);
    }
}

TEST(SeedList, RangesAndLists) {
    EXPECT_EQ(parse_seed_list("1..5"), (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
    EXPECT_EQ(parse_seed_list("1..3, 9"), (std::vector<std::uint64_t>{1, 2, 3, 9}));
    EXPECT_EQ(parse_seed_list("7"), (std::vector<std::uint64_t>{7}));
    EXPECT_THROW(parse_seed_list(""), InputError);
    EXPECT_THROW(parse_seed_list("5..1"), InputError);
    EXPECT_THROW(parse_seed_list("a"), InputError);
    EXPECT_THROW(parse_seed_list("-1"), InputError);
}

TEST(MethodList, ParsesAndRejectsDuplicates) {
    EXPECT_EQ(parse_method_list("dpu, fu"), (std::vector<Method>{Method::dpu, Method::fu}));
    EXPECT_THROW(parse_method_list("dpu,dpu"), InputError);
    EXPECT_THROW(parse_method_list(""), InputError);
}

TEST(RoundCsv, RoundtripsExactly) {
    std::vector<RoundLog> logs{sample_log(1), sample_log(2), sample_log(3)};
    std::stringstream ss;
    write_round_csv(ss, logs);
    const auto back = read_round_csv(ss);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].train_loss, logs[i].train_loss);
        EXPECT_EQ(back[i].val_acc, logs[i].val_acc);
        EXPECT_EQ(back[i].test_acc, logs[i].test_acc);
        EXPECT_EQ(back[i].bytes_sent, logs[i].bytes_sent);
        EXPECT_EQ(back[i].reinit, logs[i].reinit);
        EXPECT_EQ(back[i].skipped, logs[i].skipped);
        EXPECT_EQ(back[i].frame, logs[i].frame);
    }
    std::istringstream bad("round,loss\n");
    EXPECT_THROW(read_round_csv(bad), InputError);
}

TEST(MeanStd, SampleStatistics) {
    const MeanStd m = mean_std({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_DOUBLE_EQ(m.std, std::sqrt(5.0 / 3.0));
    EXPECT_EQ(mean_std({4.0}).std, 0.0);
    EXPECT_THROW(mean_std({}), InputError);
}

TEST(RunGrid, SummaryMatchesRecomputationFromCsv) {
    RunConfig rc;
    rc.experiment = testing_support::small_fixture(Method::dpu, 3);
    rc.methods = {Method::dpu, Method::fu};
    rc.seeds = {1, 2, 3};
    RunOptions opt;
    opt.out_dir = fresh_dir("dpu_grid_test");
    opt.workers = 3;
    run_grid(rc, opt);

    std::ifstream js(opt.out_dir / "summary.json");
    const nlohmann::json summary = nlohmann::json::parse(js);
    std::map<Method, std::vector<std::vector<RoundLog>>> logs;
    for (Method m : rc.methods)
        for (std::uint64_t s : rc.seeds) {
            std::ifstream in(opt.out_dir / "csv" / (cell_name(m, s) + ".csv"));
            ASSERT_TRUE(in.good());
            logs[m].push_back(read_round_csv(in));
        }
    for (Method m : rc.methods) {
        const auto& ms = summary["methods"][to_string(m)];
        for (std::size_t r = 0; r < 3; ++r) {
            double mean = 0.0;
            for (const auto& l : logs[m]) mean += l[r].test_acc;
            mean /= 3.0;
            double ss = 0.0;
            for (const auto& l : logs[m]) ss += (l[r].test_acc - mean) * (l[r].test_acc - mean);
            EXPECT_NEAR(ms["rounds"][r]["test_acc"]["mean"].get<double>(), mean, 1e-12);
            EXPECT_NEAR(ms["rounds"][r]["test_acc"]["std"].get<double>(), std::sqrt(ss / 2.0), 1e-12);
            double loss = 0.0;
            for (const auto& l : logs[m]) loss += l[r].train_loss;
            EXPECT_NEAR(ms["rounds"][r]["train_loss"]["mean"].get<double>(), loss / 3.0, 1e-12);
        }
        double ratio = 0.0;
        for (std::size_t s = 0; s < 3; ++s) {
            double a = 0.0, b = 0.0;
            for (std::size_t r = 0; r < 3; ++r) {
                a += double(logs[m][s][r].bytes_sent);
                b += double(logs[Method::fu][s][r].bytes_sent);
            }
            ratio += a / b / 3.0;
        }
        EXPECT_NEAR(ms["bytes_ratio_vs_fu"]["server_to_edge"]["mean"].get<double>(), ratio, 1e-12);
    }
    EXPECT_TRUE(std::filesystem::exists(opt.out_dir / "packets" / "dpu" / "seed2" / "round3.pkt"));
    EXPECT_TRUE(std::filesystem::exists(opt.out_dir / "config.ini"));

    EXPECT_THROW(run_grid(rc, opt), InputError);
    opt.force = true;
    EXPECT_NO_THROW(run_grid(rc, opt));
    std::filesystem::remove_all(opt.out_dir);
}

TEST(RunGrid, WorkerCountDoesNotChangeOutputs) {
    RunConfig rc;
    rc.experiment = testing_support::small_fixture(Method::rpu, 2);
    rc.methods = {Method::rpu, Method::gcpu};
    rc.seeds = {4, 5};
    RunOptions a, b;
    a.out_dir = fresh_dir("dpu_grid_w1");
    a.workers = 1;
    b.out_dir = fresh_dir("dpu_grid_w4");
    b.workers = 4;
    run_grid(rc, a);
    run_grid(rc, b);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    for (const char* f : {"csv/rpu_seed4.csv", "csv/gcpu_seed5.csv", "summary.json", "packets/rpu/seed5/round2.pkt"})
        EXPECT_EQ(slurp(a.out_dir / f), slurp(b.out_dir / f)) << f;
    std::filesystem::remove_all(a.out_dir);
    std::filesystem::remove_all(b.out_dir);
}

TEST(ParallelFor, PropagatesFirstFailure) {
    std::vector<int> hit(10, 0);
    EXPECT_THROW(parallel_for(10, 3,
                              [&](std::size_t i) {
                                  hit[i] = 1;
                                  if (i == 4) throw InputError("boom");
                              }),
                 InputError);
    for (int h : hit) EXPECT_EQ(h, 1);
}

TEST(WorkerCount, EnvironmentCap) {
    setenv("DPU_WORKERS", "2", 1);
    EXPECT_EQ(worker_count(10), 2u);
    EXPECT_EQ(worker_count(1), 1u);
    setenv("DPU_WORKERS", "zero", 1);
    EXPECT_GE(worker_count(10), 1u);
    unsetenv("DPU_WORKERS");
}

TEST(CostTable, HalfRatioHasUnitEntropy) {
    CostParams p;
    p.weight_count = 1000;
    std::ostringstream os;
    write_cost_table(os, {0.5, 0.01}, p);
    std::istringstream in(os.str());
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "k,entropy,analytic_bits,worst_case_bits,full_bits,encoded_mask_bits,encoded_packet_bits");
    EXPECT_EQ(row.rfind("0.5,1,17000,17000,32000,", 0), 0u) << row;
    EXPECT_THROW(write_cost_table(os, {}, p), InputError);
    EXPECT_THROW(write_cost_table(os, {1.5}, p), InputError);
}

TEST(NodeCurve, NonIncreasingInNodes) {
    CostParams p;
    p.weight_count = 1251;
    p.sample_bits = 64;
    std::vector<std::size_t> nodes;
    for (std::size_t n = 1; n <= 1000; ++n) nodes.push_back(n);
    std::ostringstream os;
    write_node_curve(os, {0.1}, 200, 8, p, nodes);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "k,nodes,ratio");
    double prev = 2.0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const double ratio = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_LE(ratio, prev);
        prev = ratio;
        ++rows;
    }
    EXPECT_EQ(rows, 1000u);
    EXPECT_THROW(write_node_curve(os, {}, 200, 8, p, nodes), InputError);
}

TEST(AblationTable, Schema) {
    std::ostringstream os;
    write_ablation_table(os, testing_support::small_fixture(Method::dpu, 2), {1, 2}, 2);
    std::istringstream in(os.str());
    std::string line;
    std::vector<std::string> names;
    std::getline(in, line);
    EXPECT_EQ(line, "metric,mean,std");
    while (std::getline(in, line)) names.push_back(line.substr(0, line.find(',')));
    EXPECT_EQ(names, (std::vector<std::string>{"full", "global", "local", "combined", "random"}));
}
