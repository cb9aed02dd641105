#include "probint/harness/config.hpp"
#include "probint/harness/experiment.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace probint;
using namespace probint::harness;
namespace fs = std::filesystem;

namespace {

const nlohmann::json kMinimal = nlohmann::json::parse(R"({
  "problem": "linear_decay",
  "integrator": "euler",
  "noise": {"kind": "gauss_endpoint", "p": 1}
})");

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("probint_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Exec {
    int code = -1;
    std::string out;
};

Exec cli(const std::string& args) {
    const std::string cmd = std::string(PROBINT_CLI) + " " + args + " 2>&1";
    Exec r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string config_path(const std::string& name) { return std::string(PROBINT_CONFIG_DIR) + "/" + name; }

ExperimentConfig small_config() {
    auto doc = kMinimal;
    doc["tau_grid"] = {0.125, 0.0625, 0.03125};
    doc["reps"] = 40;
    return parse_config(doc);
}

}  // namespace

TEST(Config, MinimalFillsDefaults) {
    const auto cfg = parse_config(kMinimal);
    validate(cfg);
    EXPECT_EQ(cfg.mode, Mode::Convergence);
    EXPECT_EQ(cfg.T, 1.0);
    EXPECT_EQ(cfg.reps, 200U);
    EXPECT_EQ(cfg.tau_grid, dyadic_grid(4, 9));
    EXPECT_EQ(cfg.tau_grid.front(), 0.0625);
    EXPECT_EQ(cfg.tau_grid.back(), 1.0 / 512);
    EXPECT_EQ(cfg.moment_orders, std::vector<int>{1});
}

TEST(Config, EchoRoundTrips) {
    auto doc = kMinimal;
    doc["problem"] = {{"name", "cubic_dissipative"}, {"u0", {2.0}}, {"beta", 0.5}, {"alpha", 1.0}};
    doc["integrator"] = {{"name", "implicit_euler"}, {"newton_tol", 1e-13}};
    doc["noise"] = {{"kind", "biased"}, {"p", 2.0}, {"bias_fraction", 0.25}, {"C_xi", 3.0}};
    doc["moment_orders"] = {1, 2};
    doc["override_c2"] = 4.0;
    const auto cfg = parse_config(doc);
    const auto echo = to_json(cfg);
    EXPECT_EQ(to_json(parse_config(echo)), echo);
    EXPECT_EQ(echo["noise"]["bias_fraction"], 0.25);
    EXPECT_EQ(echo["reps"], 200);
}

TEST(Config, UnknownKeysAreListed) {
    auto doc = kMinimal;
    doc["repz"] = 3;
    doc["tau_gird"] = {0.1};
    try {
        (void)parse_config(doc);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("repz"), std::string::npos);
        EXPECT_NE(msg.find("tau_gird"), std::string::npos);
    }
    auto nested = kMinimal;
    nested["noise"]["sigma"] = 1.0;
    EXPECT_THROW((void)parse_config(nested), ConfigError);
}

TEST(Config, MalformedValues) {
    auto doc = kMinimal;
    doc["reps"] = "many";
    EXPECT_THROW((void)parse_config(doc), ConfigError);
    auto bad_mode = kMinimal;
    bad_mode["mode"] = "sideways";
    EXPECT_THROW((void)parse_config(bad_mode), Error);
    auto missing = kMinimal;
    missing.erase("noise");
    EXPECT_THROW((void)parse_config(missing), ConfigError);
}

TEST(Config, MeshError) {
    auto doc = kMinimal;
    doc["tau_grid"] = {0.3};
    EXPECT_THROW(validate(parse_config(doc)), MeshError);
}

TEST(Config, ImplicitCapError) {
    auto doc = kMinimal;
    doc["problem"] = {{"name", "cubic_dissipative"}, {"beta", 1.0}};
    doc["integrator"] = "implicit_euler";
    doc["tau_grid"] = {0.9};
    try {
        validate(parse_config(doc));
        FAIL() << "expected cap error";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("0.5"), std::string::npos) << msg;
        EXPECT_NE(msg.find("1/(2|beta|)"), std::string::npos) << msg;
    }
    doc["tau_grid"] = {0.25};
    EXPECT_NO_THROW(validate(parse_config(doc)));
}

TEST(Config, GridMustDecrease) {
    auto doc = kMinimal;
    doc["tau_grid"] = {0.0625, 0.125};
    EXPECT_THROW(validate(parse_config(doc)), ConfigError);
}

TEST(Config, CommentsAllowedInFiles) {
    const auto dir = scratch("comments");
    std::ofstream(dir / "c.json") << "// experiment\n{\"problem\": \"harmonic\", /* d = 2 */ \"integrator\": \"rk4\","
                                     " \"noise\": \"zero\"}\n";
    const auto cfg = load_config((dir / "c.json").string());
    EXPECT_EQ(cfg.problem.name, "harmonic");
    EXPECT_EQ(cfg.noise.kind, NoiseKind::Zero);
    EXPECT_THROW((void)load_config((dir / "missing.json").string()), ConfigError);
}

TEST(Experiment, ConvergenceReportFields) {
    const auto res = run_experiment(small_config());
    EXPECT_TRUE(res.report.contains("convergence"));
    EXPECT_FALSE(res.report["convergence"][0]["fitted_order"].is_null());
    EXPECT_EQ(res.table.size(), 3U);
    EXPECT_EQ(res.tau_seeds.size(), 3U);
    EXPECT_NE(res.tau_seeds[0].second, res.tau_seeds[1].second);
}

TEST(Experiment, ThreadCountDoesNotChangeOutput) {
    const auto cfg = small_config();
    auto render = [&](unsigned threads) {
        const auto res = run_experiment(cfg, threads);
        std::ostringstream os;
        write_table_csv(os, res.table);
        return os.str() + res.report.dump();
    };
    const auto one = render(1);
    EXPECT_EQ(one, render(3));
    EXPECT_EQ(one, render(8));
}

TEST(Experiment, SameSeedByteIdenticalFiles) {
    const auto cfg = small_config();
    const auto a = scratch("det_a");
    const auto b = scratch("det_b");
    (void)execute(cfg, {a, "csv", 1});
    (void)execute(cfg, {b, "csv", 4});
    EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
    EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
    auto other = cfg;
    other.seed += 1;
    const auto c = scratch("det_c");
    (void)execute(other, {c, "csv", 1});
    EXPECT_NE(slurp(a / "results.csv"), slurp(c / "results.csv"));
}

TEST(Experiment, ManifestContents) {
    const auto dir = scratch("manifest");
    const auto m = execute(small_config(), {dir, "json", 2});
    EXPECT_EQ(m["status"], "ok");
    EXPECT_EQ(m["tool"], "probint");
    EXPECT_EQ(m["version"], kVersion);
    EXPECT_EQ(m["config"], to_json(small_config()));
    EXPECT_EQ(m["tau_seeds"].size(), 3U);
    EXPECT_TRUE(m.contains("started"));
    EXPECT_TRUE(m.contains("finished"));
    for (const auto& out : m["outputs"]) {
        EXPECT_EQ(out["fnv1a64"], fnv1a_file(dir / out["path"].get<std::string>()));
    }
    EXPECT_TRUE(fs::exists(dir / "results.json"));
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "manifest.json"))["overall"], m["overall"]);
}

TEST(Experiment, ErrorWritesPartialManifest) {
    auto doc = kMinimal;
    doc["problem"] = {{"name", "cubic_dissipative"}};
    doc["mode"] = "bounds";
    doc["reps"] = 10;
    const auto dir = scratch("partial");
    EXPECT_THROW((void)execute(parse_config(doc), {dir, "csv", 1}), Error);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    EXPECT_EQ(m["status"], "error");
    EXPECT_FALSE(m["error"].get<std::string>().empty());
}

TEST(Experiment, NoiseCheckOnIbm) {
    auto doc = nlohmann::json::parse(slurp(config_path("noise_ibm_p1.json")));
    doc["reps"] = 2000;
    const auto res = run_experiment(parse_config(doc));
    EXPECT_TRUE(res.all_pass());
}

TEST(Output, CsvHeader) {
    std::ostringstream os;
    write_table_csv(os, {TableRow{0.5, 1, 1.0, 0.5, 1.5, std::numeric_limits<double>::infinity(), true}});
    std::istringstream is(os.str());
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    EXPECT_EQ(header, "tau,n,mean,ci_lo,ci_hi,bound,pass");
    EXPECT_EQ(row.rfind("0.5,1,1,0.5,1.5,", 0), 0U) << row;
}

TEST(Cli, Selfcheck) {
    const auto r = cli("selfcheck");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("cases=100000"), std::string::npos);
    EXPECT_NE(r.out.find("peter_paul_n6"), std::string::npos);
}

TEST(Cli, ListProblemsMatchesCatalog) {
    const auto r = cli("list-problems");
    EXPECT_EQ(r.code, 0);
    std::istringstream is(r.out);
    std::string line;
    std::vector<std::string> keys;
    while (std::getline(is, line)) keys.push_back(line.substr(0, line.find(' ')));
    EXPECT_EQ(keys, problem_catalog());
}

TEST(Cli, ListNoise) {
    const auto r = cli("list-noise");
    EXPECT_EQ(r.code, 0);
    for (const auto& k : noise_catalog()) EXPECT_NE(r.out.find(k), std::string::npos);
}

TEST(Cli, RunPassesAndReplayReproduces) {
    const auto dir = scratch("cli_run");
    const auto r = cli("run " + config_path("convergence_euler_gauss.json") + " --out-dir " + dir.string() +
                       " --threads 4");
    EXPECT_EQ(r.code, 0) << r.out;
    const auto rep = cli("replay " + (dir / "manifest.json").string() + " --threads 2");
    EXPECT_EQ(rep.code, 0) << rep.out;
    EXPECT_NE(rep.out.find("replay: reproduced"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "replay" / "results.csv"));
}

TEST(Cli, OverrideC2FailsVerdict) {
    const auto dir = scratch("cli_c2");
    const auto r = cli("run " + config_path("bounds_implicit_cubic.json") + " --override-c2=0.001 --reps 1000"
                       " --threads 4 --out-dir " + dir.string());
    EXPECT_EQ(r.code, 2) << r.out;
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    EXPECT_EQ(m["overall"], "fail");
    EXPECT_EQ(m["config"]["override_c2"], 0.001);
}

TEST(Cli, BadConfigExitsOneWithSchemaHelp) {
    const auto dir = scratch("cli_bad");
    std::ofstream(dir / "bad.json") << R"({"problem": "linear_decay", "integrator": "euler", "noise": "zero", "bogus": 1})";
    const auto r = cli("run " + (dir / "bad.json").string() + " --out-dir " + dir.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("bogus"), std::string::npos);
    EXPECT_NE(r.out.find("Config schema"), std::string::npos);
    EXPECT_EQ(cli("frobnicate").code, 1);
}

TEST(Cli, FormatJson) {
    const auto dir = scratch("cli_json");
    const auto r = cli("run " + config_path("convergence_euler_gauss.json") + " --reps 20 --format json --out-dir " +
                       dir.string());
    EXPECT_NE(r.code, 1) << r.out;
    const auto table = nlohmann::json::parse(slurp(dir / "results.json"));
    EXPECT_EQ(table.size(), 6U);
}
