// Configuration loading, artifact stamping and the command-line front end.

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "hybridid/pipeline.hpp"

using namespace hybridid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("hybridid_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(HYBRIDID_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string error_path(const json& j) {
    try {
        config_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
    }
    return files;
}

fs::path small_tank_config(const fs::path& dir) {
    json j = {{"case", "three-tank"}, {"data", {{"scenarios", 2}}}, {"training", {{"epochs", 50}}}};
    const fs::path p = dir / "config.json";
    write_json(p, j);
    return p;
}

}  // namespace

TEST(Config, CanonicalDumpRoundTrips) {
    for (auto kind : {CaseKind::cstr, CaseKind::three_tank}) {
        const auto c = default_config(kind);
        const auto back = config_from_json(config_to_json(c));
        EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
        EXPECT_EQ(config_hash(back), config_hash(c));
    }
}

TEST(Config, UnknownKeysAndWrongTypesNameTheField) {
    EXPECT_NE(error_path({{"estimation", {{"w_regg", 1.0}}}}).find("/estimation/w_regg"), std::string::npos);
    EXPECT_NE(error_path({{"analysis", {{"tau", "high"}}}}).find("/analysis/tau"), std::string::npos);
    EXPECT_NE(error_path({{"case", "pendulum"}}).find("/case"), std::string::npos);
    EXPECT_NE(error_path({{"schema_version", 2}}).find("/schema_version"), std::string::npos);
    EXPECT_NE(error_path({{"seed", -1}}).find("/seed"), std::string::npos);
    EXPECT_THROW(config_from_json(json::array()), ConfigError);
}

TEST(Config, ValidationRejectsOutOfRangeValues) {
    auto c = default_config(CaseKind::cstr);
    c.analysis.tau = 1.5;
    EXPECT_THROW(validate_config(c), ConfigError);
    c = default_config(CaseKind::cstr);
    c.data.meas_period = 0.0;
    EXPECT_THROW(validate_config(c), ConfigError);
    EXPECT_NO_THROW(validate_config(default_config(CaseKind::three_tank)));
}

TEST(Config, HashTracksSettingsButNotOutputDirectory) {
    auto a = default_config(CaseKind::cstr);
    auto b = a;
    b.out = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.analysis.tau = 0.6;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(default_config(CaseKind::three_tank)));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, OverlayKeepsUnspecifiedDefaults) {
    const auto c = config_from_json({{"case", "three-tank"}, {"seed", 11}, {"analysis", {{"tau", 0.4}}}});
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.analysis.tau, 0.4);
    EXPECT_EQ(c.data.scenarios, default_config(CaseKind::three_tank).data.scenarios);
    EXPECT_EQ(config_from_json({{"case", "three-tank"}}, std::string("cstr")).kind, CaseKind::cstr);
}

TEST(Cli, ExitCodesByErrorCategory) {
    const auto dir = scratch("exit");
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli("gen-data --case pendulum --out " + (dir / "a").string()), 2);
    EXPECT_EQ(run_cli("estimate --case cstr --out " + (dir / "empty").string()), 3);
    EXPECT_EQ(run_cli("train --case three-tank --out " + (dir / "empty").string()), 3);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_EQ(run_cli("gen-data --config " + (dir / "bad.json").string()), 2);
    write_json(dir / "unknown.json", {{"analysis", {{"tauu", 0.3}}}});
    EXPECT_EQ(run_cli("gen-data --config " + (dir / "unknown.json").string()), 2);
    EXPECT_EQ(run_cli("correlate --case cstr --tau 0 --out " + (dir / "a").string()), 2);
}

TEST(Cli, StagesAreDeterministicAndStamped) {
    const auto dir = scratch("determinism");
    const auto cfg = small_tank_config(dir);
    for (const char* sub : {"a", "b"}) {
        const std::string out = (dir / sub).string();
        for (const char* stage : {"gen-data", "estimate", "table", "correlate", "train", "assemble"}) {
            ASSERT_EQ(run_cli(std::string(stage) + " --config " + cfg.string() + " --out " + out), 0) << stage;
        }
    }
    const auto a = tree(dir / "a"), b = tree(dir / "b");
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    const auto hash = config_hash(load_config(cfg));
    const std::string stamp = "# config_hash=" + hash + ";seed=7";
    EXPECT_EQ(a.at("data/dataset_000.csv").rfind(stamp, 0), 0u);
    EXPECT_EQ(read_json(dir / "a" / "hybrid" / "manifest.json").at("config_hash"), hash);
    EXPECT_EQ(read_json(dir / "a" / "correlate" / "report.json").at("seed"), 7);
}

TEST(Cli, SeedChangesGeneratedData) {
    const auto dir = scratch("seed");
    ASSERT_EQ(run_cli("gen-data --case three-tank --seed 1 --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run_cli("gen-data --case three-tank --seed 2 --out " + (dir / "b").string()), 0);
    EXPECT_NE(read_file(dir / "a" / "data" / "dataset_000.csv"), read_file(dir / "b" / "data" / "dataset_000.csv"));
}
