#include "mfne/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mfne;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mfne_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

io::json parse(const std::string& path) { return io::json::parse(io::read_file(path)); }

std::string small_pipeline(const std::string& out) {
    return R"({
  "kind": "full-pipeline",
  "seed": 7,
  "output_dir": ")" + out + R"(",
  "game": {"name": "quadratic_bilinear", "params": {"a": 0.5}},
  "sim": {"n": 40, "T": 0.3, "h": 0.01, "beta": 4,
          "init_x": {"kind": "gaussian", "mean": [0.3], "variance": 0.1}},
  "pde": {"resolution": 16, "T": 0.3},
  "search": {"grid_per_dim": 9, "refine_iters": 1},
  "basis": {"order": 2},
  "deviation": {"n_ladder": [5, 10], "replicas": 4, "delta": 0.3, "t": 0.2},
  "gradcheck": {"n_points": 20},
  "control": {"amplitude": 0.3}
})";
}

std::string message_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Config, MinimalSimulateEchoesDefaults) {
    const auto c = parse_config(R"({"kind": "simulate", "seed": 3, "sim": {"n": 10}})");
    require_sections(c, "simulate");
    const auto j = config_echo(c);
    EXPECT_EQ(j["seed"], 3);
    EXPECT_EQ(j["sim"]["n"], 10);
    EXPECT_EQ(j["sim"]["h"], 1e-2);
    EXPECT_EQ(j["sim"]["drift_mode"], "automatic");
    EXPECT_EQ(j["game"]["name"], "quadratic_bilinear");
    EXPECT_DOUBLE_EQ(j["game"]["box_radius"].get<double>(), 4.0 / std::sqrt(10.0));
    EXPECT_FALSE(j.contains("pde"));
}

TEST(Config, EchoRoundTrips) {
    const auto c = parse_config(small_pipeline("o"));
    const auto j = config_echo(c);
    const auto again = config_echo(parse_config(j.dump()));
    EXPECT_EQ(j.dump(), again.dump());
}

TEST(Config, InfiniteBetaAccepted) {
    const auto c = parse_config(R"({"seed": 1, "sim": {"beta": "inf"}, "game": {"box_radius": 2}})");
    EXPECT_TRUE(std::isinf(c.sim->beta));
    EXPECT_EQ(config_echo(c)["sim"]["beta"], "inf");
}

TEST(Config, SeedIsRequired) {
    EXPECT_NE(message_of(R"({"kind": "simulate", "sim": {}})").find("seed"), std::string::npos);
}

TEST(Config, UnknownKeyNamedWithPath) {
    const std::string m = message_of(R"({"seed": 1, "sim": {"betaa": 4}})");
    EXPECT_NE(m.find("sim.betaa"), std::string::npos) << m;
    EXPECT_NE(message_of(R"({"seed": 1, "colour": 4})").find("colour"), std::string::npos);
    EXPECT_NE(message_of(R"({"seed": 1, "sim": {"init_x": {"means": [0]}}})").find("sim.init_x.means"),
              std::string::npos);
}

TEST(Config, UnknownGameParamRejected) {
    EXPECT_THROW(parse_config(R"({"seed": 1, "game": {"name": "bilinear", "params": {"a": 1}}})"), ConfigError);
}

TEST(Config, WrongTypeNamesField) {
    const std::string m = message_of(R"({"seed": 1, "sim": {"n": "many"}})");
    EXPECT_NE(m.find("sim.n"), std::string::npos) << m;
}

TEST(Config, ParseErrorReportsLineAndColumn) {
    const std::string m = message_of("{\n  \"seed\": 1,\n  \"sim\": {\"n\": 10,}\n}");
    EXPECT_NE(m.find("line 3"), std::string::npos) << m;
    EXPECT_NE(m.find("column"), std::string::npos) << m;
}

TEST(Config, CflViolationNamesBound) {
    const std::string m = message_of(R"({"seed": 1, "pde": {"resolution": 256, "h_t": 0.5, "beta": 10}})");
    EXPECT_NE(m.find("CFL bound"), std::string::npos) << m;
    EXPECT_NE(m.find("h_t"), std::string::npos) << m;
}

TEST(Config, InvalidSimValues) {
    EXPECT_THROW(parse_config(R"({"seed": 1, "sim": {"h": 0}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"seed": 1, "sim": {"n": 0}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"seed": 1, "deviation": {"n_ladder": [20, 10]}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"seed": 1, "kind": "sample"})"), ConfigError);
}

TEST(Config, MissingSectionsForKind) {
    const auto c = parse_config(R"({"seed": 1, "sim": {}})");
    EXPECT_NO_THROW(require_sections(c, "simulate"));
    EXPECT_THROW(require_sections(c, "meanfield"), ConfigError);
    EXPECT_THROW(require_sections(c, "ni"), ConfigError);
    EXPECT_THROW(require_sections(c, "full-pipeline"), ConfigError);
}

TEST(Sha256, KnownDigests) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Run, FullPipelineManifestListsHashedArtifacts) {
    const fs::path dir = scratch("full");
    const auto c = parse_config(small_pipeline(dir.string()));
    const RunResult res = run_experiment(c);
    const auto m = parse((dir / "manifest.json").string());
    EXPECT_EQ(m["schema_version"], 1);
    EXPECT_EQ(m["kind"], "full-pipeline");
    EXPECT_EQ(m["config"]["seed"], 7);
    EXPECT_TRUE(m.contains("git_revision"));
    EXPECT_GE(m["wall_time_seconds"].get<double>(), 0.0);
    std::set<std::string> listed;
    for (const auto& a : m["artifacts"]) {
        const std::string rel = a["path"];
        listed.insert(rel);
        const std::string content = io::read_file((dir / rel).string());
        EXPECT_EQ(a["sha256"], sha256_hex(content)) << rel;
        EXPECT_EQ(a["bytes"], content.size()) << rel;
    }
    for (const char* want : {"trajectory.json", "trajectory_summary.csv", "meanfield/path.json", "meanfield/x_0000.json",
                             "meanfield_density_x.csv", "meanfield_summary.csv", "quantiles_x.csv", "ni_particles.csv",
                             "ni_meanfield.csv", "rate_report.json", "rate_integrand.csv", "controlled_rate_report.json",
                             "ni_rate_pairs.csv", "deviation_table.json", "deviation_table.csv", "deviation_long.csv",
                             "gradcheck.json"})
        EXPECT_TRUE(listed.count(want)) << want;
    EXPECT_EQ(res.artifacts.size(), listed.size());
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (rel != "manifest.json") {
            EXPECT_TRUE(listed.count(rel)) << "unlisted file " << rel;
        }
    }
}

TEST(Run, ArtifactsReloadConsistently) {
    const fs::path dir = scratch("reload");
    auto c = parse_config(small_pipeline(dir.string()));
    c.kind = "simulate";
    run_experiment(c);
    const auto rec = io::trajectory_from_json(parse((dir / "trajectory.json").string()));
    EXPECT_EQ(rec.states.front().n, 40u);
    EXPECT_EQ(rec.config.seed, 7u);
    EXPECT_EQ(io::to_json(rec).dump(1) + "\n", io::read_file((dir / "trajectory.json").string()));
}

TEST(Run, RepeatedRunsGiveIdenticalHashes) {
    const fs::path a = scratch("rep_a"), b = scratch("rep_b");
    run_experiment(parse_config(small_pipeline(a.string())));
    run_experiment(parse_config(small_pipeline(b.string())));
    const auto ma = parse((a / "manifest.json").string()), mb = parse((b / "manifest.json").string());
    ASSERT_EQ(ma["artifacts"].size(), mb["artifacts"].size());
    for (std::size_t k = 0; k < ma["artifacts"].size(); ++k)
        EXPECT_EQ(ma["artifacts"][k]["sha256"], mb["artifacts"][k]["sha256"]) << ma["artifacts"][k]["path"];
}

TEST(Run, SubcommandMustMatchKind) {
    const auto c = parse_config(small_pipeline(scratch("mismatch").string()));
    EXPECT_THROW(run_experiment(c, "simulate"), UsageError);
}

TEST(Run, CensoredDeviationRowsHaveEmptyRate) {
    const fs::path dir = scratch("censored");
    const auto c = parse_config(R"({"kind": "deviation", "seed": 2, "output_dir": ")" + dir.string() + R"(",
      "sim": {"n": 10, "h": 0.01, "beta": 4}, "pde": {"resolution": 16},
      "deviation": {"n_ladder": [4, 8], "replicas": 5, "delta": 50, "t": 0.1}})");
    run_experiment(c);
    std::istringstream csv(io::read_file((dir / "deviation_table.csv").string()));
    std::string header, row;
    std::getline(csv, header);
    EXPECT_EQ(header, "n,replicas,hits,p_hat,rate,ci_lo,ci_hi,censored\r");
    std::getline(csv, row);
    EXPECT_EQ(row.substr(0, 13), "4,5,0,0,,0,0.");
    EXPECT_NE(row.find("true"), std::string::npos);
    const auto j = parse((dir / "deviation_table.json").string());
    EXPECT_TRUE(j["rows"][0]["rate"].is_null());
    EXPECT_NEAR(j["rows"][0]["ci_hi"].get<double>(), 1.0 - std::pow(0.05, 1.0 / 5.0), 1e-12);
}

TEST(Run, DeviationLadderWithCensoredTail) {
    const fs::path dir = scratch("ladder");
    const auto c = parse_config(R"({"kind": "deviation", "seed": 11, "output_dir": ")" + dir.string() + R"(",
      "sim": {"h": 0.01, "beta": 10}, "pde": {"resolution": 64},
      "deviation": {"replicas": 200, "n_ladder": [10, 20, 40, 80, 160], "delta": 0.3, "t": 5}})");
    run_experiment(c);
    const auto j = parse((dir / "deviation_table.json").string());
    ASSERT_EQ(j["rows"].size(), 5u);
    bool seen_censored = false;
    for (const auto& r : j["rows"]) {
        EXPECT_EQ(r["replicas"], 200);
        if (r["censored"].get<bool>()) {
            seen_censored = true;
            EXPECT_EQ(r["hits"], 0);
            EXPECT_TRUE(r["rate"].is_null());
        } else {
            EXPECT_TRUE(r["rate"].is_number());
        }
    }
    EXPECT_TRUE(seen_censored);
    EXPECT_TRUE(j["rows"][4]["censored"].get<bool>());
    std::istringstream lng(io::read_file((dir / "deviation_long.csv").string()));
    std::string line;
    std::getline(lng, line);
    EXPECT_EQ(line, "n,p_hat,rate,ci_lo,ci_hi\r");
    std::size_t rows = 0;
    while (std::getline(lng, line)) ++rows;
    EXPECT_EQ(rows, 5u);
}

TEST(Run, ErrorReportCarriesBlowupLocation) {
    const auto r = error_report(NumericalBlowup("x diverged", 3, 17));
    EXPECT_EQ(r["error"]["kind"], "numerical_blowup");
    EXPECT_EQ(r["error"]["particle"], 3);
    EXPECT_EQ(r["error"]["step"], 17);
    EXPECT_EQ(error_report(std::runtime_error("boom"))["error"]["kind"], "internal");
}

// ------------------------------------------------------------ the binary

namespace {

std::string cli() {
    const char* p = std::getenv("MFNE_CLI");
    return p ? p : "";
}

int run_cli(const std::string& args) {
    const int rc = std::system((cli() + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write(const fs::path& p, const std::string& s) { io::write_file(p.string(), s); }

} // namespace

TEST(Binary, SimulateSucceeds) {
    if (cli().empty()) GTEST_SKIP() << "MFNE_CLI not set";
    const fs::path dir = scratch("bin_ok");
    write(dir / "c.json", R"({"seed": 1, "sim": {"n": 5, "T": 0.1}})");
    EXPECT_EQ(run_cli("simulate " + (dir / "c.json").string() + " --out " + (dir / "out").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
    EXPECT_TRUE(fs::exists(dir / "out" / "trajectory.json"));
}

TEST(Binary, ConfigErrorExitsTwoWithErrorJson) {
    if (cli().empty()) GTEST_SKIP() << "MFNE_CLI not set";
    const fs::path dir = scratch("bin_bad");
    write(dir / "c.json", R"({"seed": 1, "sim": {"betaa": 4}})");
    EXPECT_EQ(run_cli("simulate " + (dir / "c.json").string() + " --out " + (dir / "out").string()), 2);
    const auto e = parse((dir / "out" / "error.json").string());
    EXPECT_EQ(e["error"]["kind"], "config");
    EXPECT_NE(e["error"]["message"].get<std::string>().find("sim.betaa"), std::string::npos);
}

TEST(Binary, BlowupExitsOneWithLocation) {
    if (cli().empty()) GTEST_SKIP() << "MFNE_CLI not set";
    const fs::path dir = scratch("bin_blowup");
    write(dir / "c.json", R"({"seed": 1, "game": {"name": "quadratic_bilinear", "params": {"a": -2000}, "box_radius": 1},
                             "sim": {"n": 3, "T": 50, "h": 0.1, "beta": "inf",
                                     "init_x": {"kind": "point", "mean": [0.5]}}})");
    EXPECT_EQ(run_cli("simulate " + (dir / "c.json").string() + " --out " + (dir / "out").string()), 1);
    const auto e = parse((dir / "out" / "error.json").string());
    EXPECT_EQ(e["error"]["kind"], "numerical_blowup");
    EXPECT_TRUE(e["error"].contains("particle"));
    EXPECT_TRUE(e["error"].contains("step"));
}

TEST(Binary, UsageErrors) {
    if (cli().empty()) GTEST_SKIP() << "MFNE_CLI not set";
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("frobnicate x.json"), 2);
    EXPECT_EQ(run_cli("simulate /nonexistent/config.json"), 2);
}

TEST(Binary, ValidatePrintsEcho) {
    if (cli().empty()) GTEST_SKIP() << "MFNE_CLI not set";
    const fs::path dir = scratch("bin_validate");
    write(dir / "c.json", R"({"seed": 1, "kind": "simulate", "sim": {}})");
    EXPECT_EQ(run_cli("validate " + (dir / "c.json").string()), 0);
    write(dir / "d.json", R"({"seed": 1, "kind": "meanfield", "sim": {}})");
    EXPECT_EQ(run_cli("validate " + (dir / "d.json").string()), 2);
}
