#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef HYBRIDEPI_CLI
#error "HYBRIDEPI_CLI must name the command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

/// Runs the CLI with `args`; stderr goes to `err_path` when given, else is discarded.
Outcome run(const std::string& args, const std::string& err_path = "") {
    const std::string cmd =
        std::string(HYBRIDEPI_CLI) + " " + args + " 2>" + (err_path.empty() ? "/dev/null" : err_path);
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return o;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) o.out.append(buf, n);
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

class Cli : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("hybridepi_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    void write(const std::string& name, const std::string& text) const { std::ofstream(dir / name) << text; }
};

} // namespace

TEST_F(Cli, PredictZeroStepsIsOneRow) {
    const Outcome o = run("predict --steps 0");
    EXPECT_EQ(o.code, 0);
    EXPECT_EQ(o.out, "t,S,I,R\n0,423899,3945,2291\n");
}

TEST_F(Cli, PredictOutbreakDayIsMonotone) {
    const Outcome o = run("predict");
    ASSERT_EQ(o.code, 0);
    const auto rows = lines(o.out);
    ASSERT_EQ(rows.size(), 74U);
    double prev_S = 1e300, prev_R = -1;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double S, I, R;
        long t;
        ASSERT_EQ(std::sscanf(rows[i].c_str(), "%ld,%lf,%lf,%lf", &t, &S, &I, &R), 4);
        EXPECT_LE(S, prev_S);
        EXPECT_GE(R, prev_R);
        prev_S = S;
        prev_R = R;
    }
}

TEST_F(Cli, PredictImmediateRecovery) {
    const Outcome o = run("predict --gamma 1 --beta-g 0 --beta-l 0 --beta-n 0 --steps 2");
    ASSERT_EQ(o.code, 0);
    const auto rows = lines(o.out);
    ASSERT_EQ(rows.size(), 4U);
    EXPECT_EQ(rows[2], "1,423899,0,6236");
    EXPECT_EQ(rows[3], "2,423899,0,6236");
}

TEST_F(Cli, ConfigPrecedence) {
    write("p.cfg", "# override two values\ngamma=1\nbeta_l=0\n");
    const Outcome from_file = run("predict --steps 1 --beta-g 0 --beta-n 0 --config " + path("p.cfg"));
    ASSERT_EQ(from_file.code, 0);
    EXPECT_EQ(lines(from_file.out)[2], "1,423899,0,6236");
    const Outcome flag_wins =
        run("predict --steps 1 --beta-g 0 --beta-n 0 --gamma 0.5 --config " + path("p.cfg"));
    ASSERT_EQ(flag_wins.code, 0);
    EXPECT_EQ(lines(flag_wins.out)[2], "1,423899,1972.5,4263.5");
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run("predict --no-such-flag 1").code, 1);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("predict --beta-l abc").code, 1);
    EXPECT_EQ(run("predict --alpha-g 0.5").code, 1);
    EXPECT_EQ(run("predict --preset nimda").code, 1);
    write("bad.cfg", "beta_l=0.3\nbogus_key=1\n");
    EXPECT_EQ(run("predict --config " + path("bad.cfg")).code, 1);
    EXPECT_EQ(run("sweep2 --pair local-global --seed 1").code, 1);
}

TEST_F(Cli, HelpDocumentsEveryFlag) {
    for (const char* sub : {"infer", "predict", "simulate", "sweep2", "sweep3", "whatif-tau", "gen-log"}) {
        const Outcome o = run(std::string(sub) + " --help");
        EXPECT_EQ(o.code, 0) << sub;
        EXPECT_NE(o.out.find("--config"), std::string::npos) << sub;
    }
    EXPECT_NE(run("simulate --help").out.find("--relevant-adjacent"), std::string::npos);
    EXPECT_NE(run("infer --help").out.find("--baseline"), std::string::npos);
}

TEST_F(Cli, SimulateIsReproducibleAndPrintsRandomSeed) {
    const std::string args = "simulate --num-subnets 200 --runs 3 --beta-l 0.9 --beta-n 0.5 --seed 9";
    const Outcome a = run(args + " --jobs 1");
    const Outcome b = run(args + " --jobs 3");
    ASSERT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(lines(a.out).size(), 4U);

    const Outcome unseeded = run("simulate --num-subnets 200", path("err.txt"));
    ASSERT_EQ(unseeded.code, 0);
    EXPECT_EQ(slurp(dir / "err.txt").rfind("seed=", 0), 0U);
}

TEST_F(Cli, SweepsAreReproducible) {
    const std::string common = " --num-subnets 100 --runs 2 --resolution 0.5 --max-steps 200 --seed 4";
    for (const char* sub : {"sweep2 --pair local-neighbourhood", "sweep3"}) {
        const Outcome a = run(std::string(sub) + common);
        const Outcome b = run(std::string(sub) + common + " --jobs 2");
        ASSERT_EQ(a.code, 0) << sub;
        EXPECT_EQ(a.out, b.out) << sub;
    }
    EXPECT_EQ(lines(run("sweep3" + common).out).size(), 7U);
}

TEST_F(Cli, WhatIfRows) {
    const Outcome o = run("whatif-tau --taus 156.25,120");
    ASSERT_EQ(o.code, 0);
    const auto rows = lines(o.out);
    ASSERT_EQ(rows.size(), 3U);
    EXPECT_EQ(rows[0], "tau_minutes,S,I,R");
    EXPECT_EQ(rows[1].rfind("156.25,", 0), 0U);
    EXPECT_EQ(run("whatif-tau --taus 5").code, 1);
}

namespace {

// One long-lived source in 0.0.100.0/24; in window 1 a local and a
// neighbourhood infection appear, later 200 unrelated sources.
std::string hand_log() {
    std::ostringstream log;
    log << "timestamp,source_addr\n";
    for (int t = 0; t <= 6000; t += 300) log << t << ",0.0.100.1\n";
    log << "600,0.0.100.2\n700,0.0.95.1\n";
    for (int k = 0; k < 200; ++k) log << 5400 + k << ",0.0." << 200 + k / 250 << '.' << 1 + k % 250 << "\n";
    return log.str();
}

} // namespace

TEST_F(Cli, InferWritesParamsAndDiagnostics) {
    write("hand.csv", hand_log());
    const Outcome inferred =
        run("infer --log " + path("hand.csv") + " --begin 0 --end 1 --diagnostics " + path("diag.txt"));
    ASSERT_EQ(inferred.code, 0);
    std::set<std::string> keys;
    for (const auto& l : lines(inferred.out)) keys.insert(l.substr(0, l.find('=')));
    EXPECT_EQ(keys, (std::set<std::string>{"alpha_g", "alpha_l", "alpha_n", "beta_g", "beta_l", "beta_n", "gamma",
                                           "lambda", "tau_minutes"}));
    EXPECT_NE(inferred.out.find("alpha_g=0\n"), std::string::npos);
    const std::string diag = slurp(dir / "diag.txt");
    EXPECT_NE(diag.find("usable_windows=1\n"), std::string::npos);
    EXPECT_NE(diag.find("attributed_infections=202\n"), std::string::npos);
    EXPECT_EQ(run("infer --log " + path("hand.csv") + " --begin 04:00 --end 03:00").code, 1);
}

TEST_F(Cli, GenLogIsReproducibleAndFeedsInfer) {
    const std::string gen = "gen-log --num-subnets 2000 --alpha-g 0.6 --alpha-l 0.2 --alpha-n 0.2 --beta-g 2e-4 "
                            "--beta-l 0.9 --beta-n 0.5 --initial-infected 5 --steps 150 --seed 21 --out ";
    ASSERT_EQ(run(gen + path("log.csv") + " --truth " + path("truth.csv")).code, 0);
    ASSERT_EQ(run(gen + path("log2.csv")).code, 0);
    EXPECT_EQ(slurp(dir / "log.csv"), slurp(dir / "log2.csv"));
    EXPECT_EQ(lines(slurp(dir / "log.csv")).front(), "timestamp,source_addr");
    EXPECT_EQ(lines(slurp(dir / "truth.csv")).front(), "t,S,I,R");

    // at this population global attributions dominate and lambda exceeds 256: a data error, not a usage error
    EXPECT_EQ(run("infer --log " + path("log.csv") + " --begin 0 --end 150").code, 2);
    // every source is background: nothing left to estimate from
    const Outcome empty =
        run("infer --log " + path("log.csv") + " --baseline " + path("log.csv"), path("err.txt"));
    EXPECT_EQ(empty.code, 2);
    EXPECT_NE(slurp(dir / "err.txt").find("no usable windows"), std::string::npos);
    EXPECT_EQ(run("infer --log " + path("missing.csv")).code, 2);
}
