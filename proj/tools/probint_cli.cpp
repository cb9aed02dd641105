#include "probint/analysis/inequalities.hpp"
#include "probint/harness/experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

namespace fs = std::filesystem;
using namespace probint;
using namespace probint::harness;

constexpr int kExitPass = 0;
constexpr int kExitError = 1;
constexpr int kExitVerdict = 2;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> reps;
    std::optional<double> override_c2;
};

void apply(ExperimentConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.seed = *o.seed;
    if (o.reps) cfg.reps = *o.reps;
    if (o.override_c2) cfg.override_c2 = *o.override_c2;
}

void print_verdicts(const nlohmann::json& manifest) {
    for (const auto& [name, v] : manifest.at("verdicts").items()) {
        fmt::print("  {:<24} {}\n", name, v.get<std::string>());
    }
    fmt::print("overall: {}\n", manifest.at("overall").get<std::string>());
}

int cmd_run(const std::string& config_path, const Overrides& o, const RunOptions& opt) {
    ExperimentConfig cfg = load_config(config_path);
    apply(cfg, o);
    validate(cfg);
    const auto manifest = execute(cfg, opt);
    fmt::print("wrote {}\n", (opt.out_dir / "manifest.json").string());
    print_verdicts(manifest);
    return manifest.at("overall") == "pass" ? kExitPass : kExitVerdict;
}

int cmd_replay(const std::string& manifest_path, RunOptions opt, bool out_dir_given) {
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("replay: cannot open '" + manifest_path + "'");
    const auto original = nlohmann::json::parse(in);
    if (original.value("status", "") != "ok") {
        throw ConfigError("replay: manifest did not complete (status " + original.value("status", "?") + ")");
    }
    ExperimentConfig cfg = parse_config(original.at("config"));
    validate(cfg);
    opt.format = original.value("format", std::string("csv"));
    if (!out_dir_given) opt.out_dir = fs::path(manifest_path).parent_path() / "replay";
    const auto manifest = execute(cfg, opt);
    bool same = manifest.at("verdicts") == original.at("verdicts");
    for (const auto& out : original.at("outputs")) {
        const auto h = fnv1a_file(opt.out_dir / out.at("path").get<std::string>());
        const bool match = h == out.at("fnv1a64").get<std::string>();
        fmt::print("  {:<24} {}\n", out.at("path").get<std::string>(), match ? "identical" : "DIFFERS");
        same = same && match;
    }
    print_verdicts(manifest);
    fmt::print("replay: {}\n", same ? "reproduced" : "NOT reproduced");
    return same ? kExitPass : kExitVerdict;
}

int cmd_selfcheck(std::size_t cases, std::uint64_t seed) {
    const auto results = inequalities::run_inequality_suite(cases, seed);
    std::size_t failures = 0;
    for (const auto& r : results) {
        fmt::print("{:<26} cases={:<8} failures={:<4} worst lhs/rhs={:.6f}\n", r.name, r.cases, r.failures,
                   r.worst_ratio);
        failures += r.failures;
    }
    fmt::print("selfcheck: {}\n", failures == 0 ? "pass" : "fail");
    return failures == 0 ? kExitPass : kExitVerdict;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"probint: probabilistic ODE integrator laboratory"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.footer(config_schema_help());

    Overrides ov;
    RunOptions opt;
    std::string out_dir = "out";
    std::string path;

    auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
    run->add_option("config", path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", ov.seed, "Override the config seed");
    run->add_option("--reps", ov.reps, "Override the replicate count")->check(CLI::PositiveNumber);
    run->add_option("--override-c2", ov.override_c2, "Replace the computed C_2 constant");

    auto* replay = app.add_subcommand("replay", "Re-run a stored manifest and compare outputs");
    replay->add_option("manifest", path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);

    for (auto* sub : {run, replay}) {
        sub->add_option("--out-dir", out_dir, "Output directory");
        sub->add_option("--threads", opt.threads, "Worker threads (results do not depend on it)")
            ->check(CLI::PositiveNumber);
    }
    run->add_option("--format", opt.format, "Table format")->check(CLI::IsMember({"csv", "json"}));

    auto* list_problems = app.add_subcommand("list-problems", "List the problem catalog");
    auto* list_noise = app.add_subcommand("list-noise", "List the noise models");

    std::size_t cases = 100000;
    std::uint64_t check_seed = 1;
    auto* selfcheck = app.add_subcommand("selfcheck", "Run the inequality property suite");
    selfcheck->add_option("--cases", cases, "Randomised cases per inequality")->check(CLI::PositiveNumber);
    selfcheck->add_option("--seed", check_seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitPass : kExitError;
    }

    try {
        opt.out_dir = out_dir;
        if (run->parsed()) return cmd_run(path, ov, opt);
        if (replay->parsed()) return cmd_replay(path, opt, replay->count("--out-dir") > 0);
        if (selfcheck->parsed()) return cmd_selfcheck(cases, check_seed);
        if (list_problems->parsed()) {
            for (const auto& key : problem_catalog()) fmt::print("{:<20} {}\n", key, problem_description(key));
            return kExitPass;
        }
        if (list_noise->parsed()) {
            for (const auto& key : noise_catalog()) {
                fmt::print("{:<16} {}\n", key, noise_description(parse_noise_kind(key)));
            }
            return kExitPass;
        }
    } catch (const probint::ConfigError& e) {
        fmt::print(stderr, "error: {}\n\n{}", e.what(), config_schema_help());
        return kExitError;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitError;
    }
    return kExitError;
}
