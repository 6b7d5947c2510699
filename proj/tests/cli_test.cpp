#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Invocation {
    int code;
    std::string out;
};

// stdout and stderr merged, so error lines are visible.
Invocation run(const std::string& args) {
    const std::string cmd = std::string(TTPF_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    std::string out;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("ttpf_cli_" + std::to_string(::getpid()) + "_" +
                                           ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string at(const std::string& name) const { return (dir / name).string(); }
    fs::path dir;
};

} // namespace

TEST_F(Cli, SynthTrainEvalIsDeterministic) {
    ASSERT_EQ(run("synth-data --out " + at("task.ttpt")).code, 0);
    const Invocation t = run("train --task " + at("task.ttpt") + " --out " + at("ctx.ttpt"));
    ASSERT_EQ(t.code, 0) << t.out;
    EXPECT_NE(t.out.find("new_class_reads=0"), std::string::npos) << t.out;
    ASSERT_EQ(run("eval --task " + at("task.ttpt") + " --context " + at("ctx.ttpt") + " --out " + at("a.txt")).code, 0);
    ASSERT_EQ(run("eval --task " + at("task.ttpt") + " --context " + at("ctx.ttpt") + " --out " + at("b.txt")).code, 0);
    const std::string a = ttpf::read_text_file(at("a.txt"));
    EXPECT_EQ(a, ttpf::read_text_file(at("b.txt")));
    const auto reports = ttpf::read_reports(a);
    ASSERT_EQ(reports.size(), 5u);
    EXPECT_EQ(reports[0].seed, 7u);
    EXPECT_EQ(reports[0].epochs, 200);
}

TEST_F(Cli, EvalSingleAlphaModeAndConfigFile) {
    ttpf::write_text_file(at("cfg.txt"), "n_classes = 4\ntrain_per_class = 8\ntest_per_class = 10\nshots = 4\nepochs = 10\n");
    ASSERT_EQ(run("synth-data --config " + at("cfg.txt") + " --seed 3 --out " + at("task.ttpt")).code, 0);
    ASSERT_EQ(run("train --config " + at("cfg.txt") + " --seed 3 --task " + at("task.ttpt") + " --out " + at("ctx.ttpt")).code, 0);
    const Invocation r = run("eval --alpha-mode fixed:0.25 --task " + at("task.ttpt") + " --context " + at("ctx.ttpt"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("report=fixed-alpha\nalpha_mode=fixed:0.25\nseed=3\nshots=4\nepochs=10\n"), std::string::npos) << r.out;
}

TEST_F(Cli, AblateAndSweeps) {
    const std::string small = " --set n_classes=4 --set train_per_class=8 --set test_per_class=10 --set shots=4 --set epochs=10";
    const Invocation ab = run("ablate --alpha-mode fixed:0.3" + small);
    ASSERT_EQ(ab.code, 0) << ab.out;
    EXPECT_NE(ab.out.find("alpha_mode=fixed:0.3\n"), std::string::npos);
    EXPECT_NE(ab.out.find("report=classifier-combo\n"), std::string::npos);
    const Invocation t = run("sweep --temperatures 1,0.1,0.01 --out " + at("t.txt") + small);
    ASSERT_EQ(t.code, 0) << t.out;
    EXPECT_EQ(ttpf::read_reports(ttpf::read_text_file(at("t.txt"))).size(), 3u);
    const Invocation s = run("sweep --shots 2,1" + small);
    ASSERT_EQ(s.code, 0) << s.out;
    EXPECT_LT(s.out.find("shots=1\n"), s.out.find("shots=2\n"));
}

TEST_F(Cli, ErrorsAreOneMachineReadableLine) {
    struct Case {
        std::string args, category;
    };
    const Case cases[] = {
        {"eval --task " + at("missing.ttpt"), "IoError"},
        {"ablate --alpha-mode fixed:1.5", "RangeError"},
        {"ablate --alpha-mode sideways", "ConfigError"},
        {"sweep --temperatures 1,0", "RangeError"},
        {"sweep", "ConfigError"},
        {"synth-data --set nope=1", "ConfigError"},
        {"synth-data --set template=no_placeholder", "TemplateError"},
        {"frobnicate", "UsageError"},
    };
    for (const Case& c : cases) {
        const Invocation r = run(c.args);
        EXPECT_NE(r.code, 0) << c.args;
        EXPECT_EQ(r.out.rfind("error=" + c.category + " message=", 0), 0u) << c.args << ": " << r.out;
        EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << c.args << ": " << r.out;
    }
}

TEST_F(Cli, CorruptArchiveIsDataError) {
    ttpf::write_text_file(at("bad.ttpt"), "not an archive");
    const Invocation r = run("train --task " + at("bad.ttpt"));
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.out.rfind("error=DataError", 0), 0u) << r.out;
}
