#include "gridstore/csv.hpp"
#include "gridstore/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace gridstore;
namespace fs = std::filesystem;

namespace {

fs::path workdir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "gridstore_harness_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const auto path = dir / "experiment.ini";
    std::ofstream(path) << text;
    return path;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Runs the installed CLI binary; returns its exit status.
int cli(const std::string& command, const fs::path& config, const fs::path& out) {
    const char* exe = std::getenv("GRIDSTORE_CLI");
    if (!exe) return -1;
    const std::string line = std::string("\"") + exe + "\" " + command + " --config \"" + config.string() +
                             "\" --out \"" + out.string() + "\" > \"" + (out.parent_path() / "log.txt").string() +
                             "\" 2>&1";
    const int status = std::system(line.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<fs::path> csv_files(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::exists(dir)) return files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path().filename());
    std::sort(files.begin(), files.end());
    return files;
}

const char* kSimulateConfig = R"([grid]
side = 32
[physics]
capacity = 1.5
storage = 1
mean = 0.5
variance = 1
[sim]
horizon = 2000
replicas = 3
record_traces = true
)";

}  // namespace

class CliCommand : public ::testing::TestWithParam<std::pair<std::string, std::string>> {};

TEST_P(CliCommand, RerunIsByteIdentical) {
    if (!std::getenv("GRIDSTORE_CLI")) GTEST_SKIP() << "GRIDSTORE_CLI not set";
    const auto& [command, config_text] = GetParam();
    const auto dir = workdir("rerun_" + command);
    const auto config = write_config(dir, config_text);
    ASSERT_EQ(cli(command, config, dir / "a"), 0) << slurp(dir / "log.txt");
    ASSERT_EQ(cli(command, config, dir / "b"), 0) << slurp(dir / "log.txt");
    const auto files = csv_files(dir / "a");
    ASSERT_FALSE(files.empty());
    EXPECT_EQ(files, csv_files(dir / "b"));
    for (const auto& f : files) {
        EXPECT_EQ(f.extension(), ".csv");
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
}

INSTANTIATE_TEST_SUITE_P(
    AllCommands, CliCommand,
    ::testing::Values(std::make_pair(std::string("design"), std::string("[grid]\nside = 16\n[physics]\nstorage = 2\n")),
                      std::make_pair(std::string("simulate"), std::string(kSimulateConfig)),
                      std::make_pair(std::string("bounds"), std::string("[physics]\ncapacity = 2\nmean = 0.5\n")),
                      std::make_pair(std::string("sweep"),
                                     std::string("[grid]\nside = 32\n[sim]\nhorizon = 1500\nburn_in = 500\nreplicas = 2\nforce = true\n"
                                                 "[sweep]\ncapacity = 1, 2\nmethod = both\n")),
                      std::make_pair(std::string("conjecture"),
                                     std::string("[conjecture]\nsides = 4, 8\nsamples = 100\nbrute_force_instances = 5\n"))),
    [](const auto& info) { return info.param.first; });

TEST(Cli, InvalidConfigExitsOneAndWritesNothing) {
    if (!std::getenv("GRIDSTORE_CLI")) GTEST_SKIP() << "GRIDSTORE_CLI not set";
    const auto dir = workdir("invalid");
    const auto config = write_config(dir, "[grid]\nside = 2\nside = 5\nbogus = 1\n");
    EXPECT_EQ(cli("simulate", config, dir / "out"), 1);
    EXPECT_TRUE(csv_files(dir / "out").empty());
    const auto log = slurp(dir / "log.txt");
    EXPECT_NE(log.find("line 2"), std::string::npos);
    EXPECT_NE(log.find("line 3"), std::string::npos);
    EXPECT_NE(log.find("line 4"), std::string::npos);
}

TEST(Cli, UnknownCommandAndMissingConfigExitOne) {
    if (!std::getenv("GRIDSTORE_CLI")) GTEST_SKIP() << "GRIDSTORE_CLI not set";
    const auto dir = workdir("usage");
    EXPECT_EQ(cli("plot", dir / "none.ini", dir / "out"), 1);
    EXPECT_EQ(cli("design", dir / "none.ini", dir / "out"), 1);
}

TEST(Cli, UnresolvableSimulationIsRefused) {
    if (!std::getenv("GRIDSTORE_CLI")) GTEST_SKIP() << "GRIDSTORE_CLI not set";
    const auto dir = workdir("numeric");
    const auto config =
        write_config(dir, "[grid]\nside = 16\n[physics]\ncapacity = 6\nmean = 3\n[sim]\nhorizon = 200\nburn_in = 50\nreplicas = 1\n");
    EXPECT_EQ(cli("simulate", config, dir / "out"), 1);
    EXPECT_TRUE(csv_files(dir / "out").empty());
    EXPECT_NE(slurp(dir / "log.txt").find("force"), std::string::npos);
}

TEST(Harness, FailureDiscardsEarlierArtifacts) {
    const auto dir = workdir("discard");
    detail::Artifacts out(dir, {"header"});
    const Schema schema{{"x", ColumnType::Real}};
    out.write("first.csv", schema, {{1.0}});
    ASSERT_TRUE(fs::exists(dir / "first.csv"));
    EXPECT_THROW(out.write("second.csv", schema, {{std::string("oops")}}), FormatError);
    out.discard();
    EXPECT_TRUE(csv_files(dir).empty());
}

TEST(Harness, InvalidParametersWriteNothing) {
    const auto dir = workdir("invalid_params");
    const auto c = parse_config("[grid]\nside = 16\n[physics]\nvariance = 0\n[sweep]\ncapacity = 1\n");
    const auto result = run_command(c, Command::Sweep, dir);
    EXPECT_EQ(result.exit_code, kExitValidation);
    EXPECT_TRUE(csv_files(dir).empty());
    EXPECT_TRUE(result.artifacts.empty());
}

TEST(Harness, CommandMismatchIsValidationError) {
    const auto c = parse_config("[run]\ncommand = bounds\n");
    const auto result = run_command(c, Command::Design, workdir("mismatch"));
    EXPECT_EQ(result.exit_code, kExitValidation);
}

TEST(Harness, ExitCodeMapping) {
    EXPECT_EQ(exit_code_for(ConfigError(std::vector<std::string>{"x"})), kExitValidation);
    EXPECT_EQ(exit_code_for(ParameterError("x")), kExitValidation);
    EXPECT_EQ(exit_code_for(ResolutionError("x")), kExitValidation);
    EXPECT_EQ(exit_code_for(NumericError("x")), kExitNumeric);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), kExitNumeric);
}

TEST(Harness, SweepBoundDecreasesInCapacity) {
    const auto dir = workdir("sweep");
    const auto c = parse_config("[grid]\nside = 64\n[physics]\nmean = 0.5\n[sweep]\ncapacity = 1, 2, 3\nmethod = bound\n");
    const auto result = run_command(c, Command::Sweep, dir);
    ASSERT_EQ(result.exit_code, 0) << result.message;
    const auto t = read_csv(dir / "sweep.csv");
    ASSERT_EQ(t.rows.size(), 3u);
    EXPECT_EQ(t.comments.front(), "gridstore sweep");
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(t.text(i, "mc_status"), "skipped");
        EXPECT_LE(t.real(i, "lower_eps_tot"), t.real(i, "bound_eps_tot"));
        if (i) EXPECT_LT(t.real(i, "bound_eps_tot"), t.real(i - 1, "bound_eps_tot"));
    }
}

TEST(Harness, ConjectureCurveCorrelatesWithLog) {
    const auto dir = workdir("conjecture");
    const auto c = parse_config("[conjecture]\nsides = 8, 16, 32, 64, 128\nsamples = 400\nbrute_force_instances = 100\n");
    const auto result = run_command(c, Command::Conjecture, dir);
    ASSERT_EQ(result.exit_code, 0) << result.message;
    const auto t = read_csv(dir / "conjecture.csv");
    ASSERT_EQ(t.rows.size(), 5u);
    EXPECT_GE(t.real(0, "log_correlation"), 0.99);
    EXPECT_EQ(t.text(0, "brute_force_checked"), "400");
    EXPECT_EQ(t.text(0, "brute_force_mismatches"), "0");
}

TEST(Harness, DesignReportsModesAndSummary) {
    const auto dir = workdir("design");
    const auto c = parse_config("[grid]\nside = 8\n[control]\nmode = explicit\ngamma = 0.1\nxi = 2\n");
    const auto result = run_command(c, Command::Design, dir);
    ASSERT_EQ(result.exit_code, 0) << result.message;
    EXPECT_EQ(read_csv(dir / "design_modes.csv").rows.size(), 8u);
    EXPECT_EQ(read_csv(dir / "design.csv").rows.size(), 1u);
}
