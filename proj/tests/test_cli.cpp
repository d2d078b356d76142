#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sdjr/cli.hpp"

namespace fs = std::filesystem;
using sdjr::Json;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

// Runs the executable with stderr folded into the captured text.
Run run(const std::string& args) {
    const std::string cmd = std::string(SDJR_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[512];
    while (fgets(buf, sizeof buf, pipe)) r.output += buf;
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string config(const std::string& name) { return std::string(SDJR_CONFIG_DIR) + "/" + name; }

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("sdjr_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const auto p = dir / "scenario.json";
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

} // namespace

TEST(Cli, Version) {
    const auto r = run("--version");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.output.find(sdjr::kVersion), std::string::npos);
}

TEST(Cli, UnknownCommandIsUsageError) {
    EXPECT_EQ(run("integrate --config " + config("minimal.json")).code, 2);
    EXPECT_EQ(run("simulate").code, 2);
}

TEST(Cli, GeneratorRowSumIsNamed) {
    const auto dir = scratch("badgen");
    const auto r = run("validate --config " + config("bad_generator.json") + " --out " + dir.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("row 1"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("0.1"), std::string::npos) << r.output;
}

TEST(Cli, SeedIsRequired) {
    const auto dir = scratch("noseed");
    const auto p = write_config(dir, R"({"grid": {"K": 8}, "run": {"n_paths": 4}})");
    const auto r = run("simulate --config " + p.string() + " --out " + dir.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("config.run.seed"), std::string::npos);
    EXPECT_EQ(run("simulate --config " + p.string() + " --seed 3 --out " + dir.string()).code, 0);
}

TEST(Cli, UnknownKeyAndParseErrorsCarryLocation) {
    const auto dir = scratch("badkeys");
    auto p = write_config(dir, R"({"grid": {"K": 8, "M": 2}, "run": {"seed": 1}})");
    auto r = run("simulate --config " + p.string() + " --out " + dir.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("config.grid.M: unknown key"), std::string::npos) << r.output;

    p = write_config(dir, "{\n  \"grid\": {\"K\": 8},\n  \"run\": {\"seed\": 1,}\n}\n");
    r = run("simulate --config " + p.string() + " --out " + dir.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("scenario.json:3:"), std::string::npos) << r.output;

    p = write_config(dir, R"({"grid": {"K": 6, "T": 1}, "delay": {"delta": 0.25}, "run": {"seed": 1}})");
    r = run("simulate --config " + p.string() + " --out " + dir.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("config.delay.delta"), std::string::npos) << r.output;
}

TEST(Cli, ZeroDriverDualityReturnsXi) {
    const auto dir = scratch("zero");
    const auto r = run("duality --config " + config("zero_driver.json") + " --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = read_json(dir / "duality.json");
    EXPECT_EQ(j.at("y").get<double>(), 1.75);
    EXPECT_EQ(j.at("se").get<double>(), 0.0);
    EXPECT_EQ(j.at("version").get<std::string>(), sdjr::kVersion);
    EXPECT_EQ(j.at("config_digest").get<std::string>().size(), 64u);
}

TEST(Cli, OracleGapHalvesWithTheStep) {
    const auto dir = scratch("gap");
    ASSERT_EQ(run("oracle-gap --config " + config("mixed_gap.json") + " --grid-k 4 --out " + (dir / "k4").string()).code, 0);
    ASSERT_EQ(run("oracle-gap --config " + config("mixed_gap.json") + " --grid-k 8 --out " + (dir / "k8").string()).code, 0);
    const double g4 = read_json(dir / "k4" / "oracle_gap.json").at("gap").get<double>();
    const double g8 = read_json(dir / "k8" / "oracle_gap.json").at("gap").get<double>();
    EXPECT_GT(g4, 0.0);
    EXPECT_GE(g8 / g4, 0.3);
    EXPECT_LE(g8 / g4, 0.7);
}

TEST(Cli, OracleLimitsMapToExitCodes) {
    const auto dir = scratch("limits");
    EXPECT_EQ(run("oracle-gap --config " + config("mixed_gap.json") + " --grid-k 16 --out " + dir.string()).code, 4);
    const auto p = write_config(dir, R"({"jumps": {"rate": 30, "marks": [0.5]}, "grid": {"T": 0.5, "K": 4},
                                         "run": {"seed": 1}})");
    EXPECT_EQ(run("oracle-gap --config " + p.string() + " --out " + dir.string()).code, 3);
}

TEST(Cli, OutputsDoNotDependOnWorkers) {
    const auto dir = scratch("workers");
    for (const char* cmd : {"simulate", "duality", "check-ito", "picard"}) {
        const std::string cfg = std::string(cmd) == "duality"    ? config("mixed_gap.json")
                                : std::string(cmd) == "picard"   ? config("lipschitz_picard.json")
                                                                 : config("check_ito.json");
        const auto a = dir / (std::string(cmd) + "_1");
        const auto b = dir / (std::string(cmd) + "_4");
        ASSERT_EQ(run(std::string(cmd) + " --config " + cfg + " --paths 64 --workers 1 --out " + a.string()).code, 0);
        ASSERT_EQ(run(std::string(cmd) + " --config " + cfg + " --paths 64 --workers 4 --out " + b.string()).code, 0);
        for (const auto& entry : fs::directory_iterator(a)) {
            const auto other = b / entry.path().filename();
            ASSERT_TRUE(fs::exists(other)) << other;
            EXPECT_EQ(slurp(entry.path()), slurp(other)) << entry.path();
        }
    }
}

TEST(Cli, DigestTracksTheSeed) {
    const auto dir = scratch("digest");
    ASSERT_EQ(run("duality --config " + config("zero_driver.json") + " --out " + (dir / "a").string()).code, 0);
    ASSERT_EQ(run("duality --config " + config("zero_driver.json") + " --seed 8 --out " + (dir / "b").string()).code, 0);
    EXPECT_NE(read_json(dir / "a" / "duality.json").at("config_digest"),
              read_json(dir / "b" / "duality.json").at("config_digest"));
}

TEST(Cli, SimulateCsvLayout) {
    const auto dir = scratch("simulate");
    ASSERT_EQ(run("simulate --config " + config("delay_oracle.json") + " --out " + dir.string()).code, 0);
    std::istringstream is(slurp(dir / "paths.csv"));
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line.rfind(std::string("# sdjr ") + sdjr::kVersion + " config_digest=", 0), 0u) << line;
    std::getline(is, line);
    EXPECT_EQ(line, "path,k,t,regime,X");
    std::getline(is, line);
    EXPECT_EQ(line, "0,-16,-0.25,0,1");
    // X' = X(t - 1/4) with unit history: X(1) by the Euler recursion is the
    // terminal entry of simulate.json.
    const auto j = read_json(dir / "simulate.json");
    std::vector<double> x(81, 1.0);
    for (int k = 16; k < 80; ++k) x[k + 1] = x[k] + x[k - 16] / 64.0;
    EXPECT_NEAR(j.at("terminal_mean").get<double>(), x[80], 1e-12);
}

TEST(Cli, ValidateReportsLipschitzViolation) {
    const auto dir = scratch("validate");
    EXPECT_EQ(run("validate --config " + config("lipschitz_picard.json") + " --out " + dir.string()).code, 0);
    EXPECT_TRUE(read_json(dir / "validate.json").at("valid").get<bool>());
    auto j = Json::parse(slurp(config("lipschitz_picard.json")));
    j["model"]["lipschitz_C"] = 0.1;
    const auto p = write_config(dir, j.dump());
    const auto r = run("validate --config " + p.string() + " --out " + dir.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("Lipschitz"), std::string::npos);
}

TEST(Cli, PicardReportsContraction) {
    const auto dir = scratch("picard");
    ASSERT_EQ(run("picard --config " + config("lipschitz_picard.json") + " --paths 100 --out " + dir.string()).code, 0);
    const auto j = read_json(dir / "picard.json");
    EXPECT_TRUE(j.at("converged").get<bool>());
    EXPECT_EQ(j.at("beta").get<double>(), 9.0);
    EXPECT_LE(j.at("max_abs_diff_direct_euler").get<double>(), 1e-10);
}

TEST(Cli, CheckCsvHasOneRowPerRefinement) {
    const auto dir = scratch("check");
    ASSERT_EQ(run("check-ito --config " + config("check_ito.json") + " --paths 200 --out " + dir.string()).code, 0);
    std::istringstream is(slurp(dir / "check_ito.csv"));
    std::string line;
    int rows = 0;
    std::getline(is, line);
    std::getline(is, line);
    EXPECT_EQ(line, "dt,mean_abs_residual,se,n_paths");
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 3);
}

TEST(Config, RegimeTableTerms) {
    const auto c = sdjr::config_from_json(Json::parse(R"({
        "chain": {"generator": [[-1, 1], [2, -2]]},
        "model": {"drift": [{"preset": "regime-table", "values": [0.5, -1.5], "of": "lag"}, 2.0],
                  "diffusion": {"preset": "linear-in-x", "coef": 0.3}},
        "run": {"seed": 5}})"));
    const auto k = c.model.coefficients();
    EXPECT_DOUBLE_EQ(k.drift(0.0, 1.0, 4.0, 0), 0.5 * 4.0 + 2.0);
    EXPECT_DOUBLE_EQ(k.drift(0.0, 1.0, 4.0, 1), -1.5 * 4.0 + 2.0);
    EXPECT_DOUBLE_EQ(k.diffusion(0.0, 2.0, 9.0, 1), 0.6);
    EXPECT_DOUBLE_EQ(k.jump(0.0, 2.0, 9.0, 1, 0.3), 0.0);

    EXPECT_THROW(sdjr::config_from_json(Json::parse(R"({
        "chain": {"generator": [[-1, 1], [2, -2]]},
        "model": {"drift": {"preset": "regime-table", "values": [1, 2, 3]}},
        "run": {"seed": 5}})")),
                 sdjr::InvalidSpec);
}

TEST(Config, WorkersDoNotEnterTheDigest) {
    const auto base = Json::parse(R"({"run": {"seed": 5, "workers": 1}})");
    auto other = base;
    other["run"]["workers"] = 8;
    EXPECT_EQ(sdjr::config_digest(base), sdjr::config_digest(other));
    other["run"]["seed"] = 6;
    EXPECT_NE(sdjr::config_digest(base), sdjr::config_digest(other));
    EXPECT_EQ(sdjr::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
