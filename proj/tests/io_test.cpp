#include "gridstore/config.hpp"
#include "gridstore/csv.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

using namespace gridstore;

namespace {

Schema demo_schema() { return {{"id", ColumnType::Integer}, {"value", ColumnType::Real}, {"tag", ColumnType::Text}}; }

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "gridstore_io_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

bool mentions(const ConfigError& e, const std::string& needle) {
    for (const auto& p : e.problems()) {
        if (p.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST(Csv, HeaderOnlyForEmptyRows) {
    std::stringstream ss;
    write_csv(ss, {}, demo_schema());
    EXPECT_EQ(ss.str(), "id,value,tag\n");
}

TEST(Csv, CommentsThenHeaderThenRows) {
    std::stringstream ss;
    write_csv(ss, {{3LL, 0.5, std::string("a")}}, demo_schema(), {"seed = 1"});
    EXPECT_EQ(ss.str(), "# seed = 1\nid,value,tag\n3,0.5,a\n");
}

TEST(Csv, SchemaMismatchWritesNothing) {
    const auto path = scratch("mismatch.csv");
    std::filesystem::remove(path);
    EXPECT_THROW(write_csv(path, {{1LL, 2.0}}, demo_schema()), FormatError);
    EXPECT_THROW(write_csv(path, {{1.0, 2.0, std::string("x")}}, demo_schema()), FormatError);
    EXPECT_THROW(write_csv(path, {{1LL, 2.0, std::string("a,b")}}, demo_schema()), FormatError);
    EXPECT_FALSE(std::filesystem::exists(path));
    std::stringstream ss;
    EXPECT_THROW(write_csv(ss, {{1LL}}, demo_schema()), FormatError);
    EXPECT_TRUE(ss.str().empty());
}

TEST(Csv, SeventeenDigitRoundTrip) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Row> rows;
    std::vector<double> values{0.1, 1.0 / 3.0, std::numeric_limits<double>::min(), std::numeric_limits<double>::max(),
                               -0.0, 5e-324, std::numeric_limits<double>::infinity()};
    for (int i = 0; i < 200; ++i) values.push_back(u(rng) * std::pow(10.0, static_cast<int>(u(rng) * 300)));
    for (std::size_t i = 0; i < values.size(); ++i) {
        rows.push_back({static_cast<long long>(i), values[i], std::string("t")});
    }
    rows.push_back({-7LL, std::numeric_limits<double>::quiet_NaN(), std::string("nan")});
    const auto path = scratch("roundtrip.csv");
    write_csv(path, rows, demo_schema(), {"a comment"});
    const auto table = read_csv(path);
    ASSERT_EQ(table.rows.size(), rows.size());
    EXPECT_EQ(table.comments.front(), "a comment");
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double back = table.real(i, "value");
        EXPECT_EQ(back, values[i]);
        EXPECT_EQ(std::signbit(back), std::signbit(values[i]));
    }
    EXPECT_TRUE(std::isnan(table.real(values.size(), "value")));
    EXPECT_EQ(parse_integer(table.text(values.size(), "id")), -7);
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

TEST(Csv, ReadRejectsRaggedRows) {
    std::stringstream ss("a,b\n1,2\n3\n");
    EXPECT_THROW(read_csv(ss), FormatError);
    std::stringstream empty("");
    EXPECT_THROW(read_csv(empty), FormatError);
}

TEST(Config, MinimalConfigUsesDefaults) {
    const auto c = parse_config("[grid]\nside = 16\n");
    EXPECT_EQ(c.side, 16u);
    EXPECT_EQ(c.dimension, 1);
    EXPECT_EQ(c.replicas, 8);
    EXPECT_EQ(c.horizon, 10000);
    EXPECT_EQ(c.seed, 1u);
    EXPECT_FALSE(c.explicit_control);
    const auto echo = config_echo(c);
    EXPECT_NE(std::find(echo.begin(), echo.end(), "grid.side = 16"), echo.end());
    EXPECT_NE(std::find(echo.begin(), echo.end(), "sim.replicas = 8"), echo.end());
    EXPECT_NE(std::find(echo.begin(), echo.end(), "physics.family = gaussian"), echo.end());
    EXPECT_NO_THROW(parse_config(""));
}

TEST(Config, FullConfig) {
    const auto c = parse_config(R"(# experiment
[run]
seed = 42
[grid]
dimension = 2
side = 8
[physics]
capacity = 2.5
storage = 1
mean = 0.1
variance = 0.5
family = uniform
[control]
mode = explicit
gamma = 0.01
s = 2
[sim]
horizon = 5000
burn_in = 100
replicas = 3
force = true
init = empty
[sweep]
capacity = 1, 2, 3
method = both
[conjecture]
sides = 4, 8
samples = 200
)");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.dimension, 2);
    EXPECT_EQ(c.family, Family::BoundedUniform);
    EXPECT_DOUBLE_EQ(c.xi, 0.005);
    EXPECT_EQ(c.init, StorageInit::Empty);
    EXPECT_EQ(c.sweep_capacity, (std::vector<double>{1.0, 2.0, 3.0}));
    EXPECT_EQ(c.sweep_method, SweepMethod::Both);
    EXPECT_EQ(c.conjecture_sides, (std::vector<std::size_t>{4, 8}));
    const auto g = c.generation();
    EXPECT_NEAR(g.variance, 0.5, 1e-15);
    EXPECT_NEAR(g.kappa(), 3.0, 1e-12);
    EXPECT_EQ(c.sim().seed, 42u);
}

TEST(Config, ZeroStorageWeightMeansInfiniteXi) {
    const auto c = parse_config("[control]\nmode = explicit\ngamma = 0.5\ns = 0\n");
    EXPECT_TRUE(std::isinf(c.xi));
}

TEST(Config, RejectsSmallSide) {
    try {
        parse_config("[grid]\nside = 2\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_TRUE(mentions(e, "line 2: grid.side"));
    }
}

TEST(Config, DuplicateKeyNamesBothLines) {
    try {
        parse_config("[physics]\nmean = 1\n\nmean = 2\n");
        FAIL();
    } catch (const ConfigError& e) {
        ASSERT_EQ(e.problems().size(), 1u);
        EXPECT_TRUE(mentions(e, "line 4"));
        EXPECT_TRUE(mentions(e, "line 2"));
    }
}

TEST(Config, CollectsEveryError) {
    try {
        parse_config("stray = 1\n[grid]\nside = x\nwidth = 3\n[nowhere]\n[sim]\nreplicas = 0\nforce = maybe\nnonsense\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_TRUE(mentions(e, "line 1: key 'stray' outside any section"));
        EXPECT_TRUE(mentions(e, "line 3: grid.side"));
        EXPECT_TRUE(mentions(e, "line 4: unknown key 'grid.width'"));
        EXPECT_TRUE(mentions(e, "line 5: unknown section"));
        EXPECT_TRUE(mentions(e, "line 7: sim.replicas: must be >= 1"));
        EXPECT_TRUE(mentions(e, "line 8: sim.force"));
        EXPECT_TRUE(mentions(e, "line 9: expected key = value"));
        EXPECT_GE(e.problems().size(), 7u);
    }
}

TEST(Config, CrossFieldConstraints) {
    EXPECT_THROW(parse_config("[control]\ngamma = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[control]\nmode = explicit\n"), ConfigError);
    EXPECT_THROW(parse_config("[control]\nmode = explicit\ngamma = 1\nxi = 1\ns = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[sim]\nhorizon = 100\nburn_in = 100\n"), ConfigError);
    EXPECT_THROW(parse_config("[physics]\ncapacity = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("[physics]\nfamily = cauchy\n"), ConfigError);
    EXPECT_THROW(parse_config("[conjecture]\nsamples = 50\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\ncommand = plot\n"), ConfigError);
}
