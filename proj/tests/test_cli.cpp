#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int status = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("dpu_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        std::ofstream(dir_ / "small.ini") << "format_version = 1\n"
                                             "[experiment]\nmethods = dpu, fu\nseeds = 1..2\nrounds = 3\n"
                                             "[network]\nlayers = 2, 8, 3\n"
                                             "[data]\ninitial_size = 60\ndelta_size = 60\nholdout_size = 200\n"
                                             "[training]\nepochs = 4\ndecay_epochs = 2\nbatch_size = 32\n";
    }
    void TearDown() override { fs::remove_all(dir_); }

    Result run(const std::string& args) {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = std::string(DPU_TOOL_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
        Result r;
        const int raw = std::system(cmd.c_str());
        r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, RunWritesCellsAndSummary) {
    const Result r = run("run --config " + (dir_ / "small.ini").string() + " --out " + (dir_ / "a").string());
    ASSERT_EQ(r.status, 0) << r.err;
    for (const char* f : {"csv/dpu_seed1.csv", "csv/dpu_seed2.csv", "csv/fu_seed1.csv", "csv/fu_seed2.csv",
                          "summary.json", "config.ini", "packets/fu/seed2/round3.pkt"})
        EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    std::size_t csvs = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "a" / "csv")) csvs += e.path().extension() == ".csv";
    EXPECT_EQ(csvs, 4u);
}

TEST_F(Cli, SeedAndMethodOverrides) {
    const Result r = run("run --config " + (dir_ / "small.ini").string() + " --out " + (dir_ / "a").string() +
                         " --methods rpu --seeds 3..5");
    ASSERT_EQ(r.status, 0) << r.err;
    std::size_t csvs = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "a" / "csv")) csvs += 1, (void)e;
    EXPECT_EQ(csvs, 3u);
    EXPECT_TRUE(fs::exists(dir_ / "a" / "csv" / "rpu_seed5.csv"));
}

TEST_F(Cli, RerunIsByteIdenticalAndNeedsForce) {
    const std::string base = "run --config " + (dir_ / "small.ini").string() + " --out " + (dir_ / "a").string();
    ASSERT_EQ(run(base).status, 0);
    const std::string first = slurp(dir_ / "a" / "csv" / "dpu_seed2.csv");
    const std::string summary = slurp(dir_ / "a" / "summary.json");
    const Result refused = run(base);
    EXPECT_NE(refused.status, 0);
    EXPECT_NE(refused.err.find("--force"), std::string::npos);
    ASSERT_EQ(run(base + " --force").status, 0);
    EXPECT_EQ(slurp(dir_ / "a" / "csv" / "dpu_seed2.csv"), first);
    EXPECT_EQ(slurp(dir_ / "a" / "summary.json"), summary);
}

TEST_F(Cli, MissingConfigNamesPath) {
    const Result r = run("run --config " + (dir_ / "absent.ini").string() + " --out " + (dir_ / "a").string());
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.err.find((dir_ / "absent.ini").string()), std::string::npos);
}

TEST_F(Cli, BadConfigReportsLine) {
    std::ofstream(dir_ / "bad.ini") << "format_version = 1\n[training]\nepochs = -3\n";
    const Result r = run("run --config " + (dir_ / "bad.ini").string() + " --out " + (dir_ / "a").string());
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.err.find("bad.ini:3: training.epochs"), std::string::npos) << r.err;
}

TEST_F(Cli, CostTables) {
    const Result r = run("cost --k 0.5,0.1 --nodes 1..1000 --weights 1251 --sample-bits 64 --delta 200 --rounds 8");
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.out.find("\n0.5,1,"), std::string::npos);
    EXPECT_NE(r.out.find("k,nodes,ratio\n"), std::string::npos);
    ASSERT_EQ(run("cost --config " + (dir_ / "small.ini").string() + " --out " + (dir_ / "c").string()).status, 0);
    EXPECT_TRUE(fs::exists(dir_ / "c" / "cost_k.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "c" / "cost_nodes.csv"));
}

TEST_F(Cli, EmptyKListIsAnError) {
    const Result r = run("cost --k \"\"");
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.err.find("k list is empty"), std::string::npos);
}

TEST_F(Cli, AblateRewind) {
    const Result r = run("ablate-rewind --config " + (dir_ / "small.ini").string());
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_EQ(r.out.rfind("metric,mean,std\nfull,", 0), 0u);
    EXPECT_NE(r.out.find("\ncombined,"), std::string::npos);
    EXPECT_NE(r.out.find("\nrandom,"), std::string::npos);
}

TEST_F(Cli, DumpPacket) {
    ASSERT_EQ(run("run --config " + (dir_ / "small.ini").string() + " --out " + (dir_ / "a").string()).status, 0);
    const std::string pkt = (dir_ / "a" / "packets" / "dpu" / "seed1" / "round1.pkt").string();
    const Result r = run("dump-packet " + pkt);
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.out.find("frame_type     reinit_sparse"), std::string::npos);
    EXPECT_NE(r.out.find("seed "), std::string::npos);
    EXPECT_EQ(run("--dump-packet " + pkt).out, r.out);
    std::ofstream(dir_ / "junk.pkt") << "xx";
    const Result bad = run("dump-packet " + (dir_ / "junk.pkt").string());
    EXPECT_NE(bad.status, 0);
    EXPECT_NE(bad.err.find("shorter than 14"), std::string::npos);
}
