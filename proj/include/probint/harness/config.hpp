#pragma once

#include "probint/analysis/constants.hpp"
#include "probint/core.hpp"
#include "probint/integrators.hpp"
#include "probint/noise.hpp"
#include "probint/problems.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace probint::harness {

inline constexpr const char* kVersion = "0.1.0";

enum class Mode { Convergence, ConvergenceContinuous, Bounds, NoiseCheck, Coverage };

[[nodiscard]] inline std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Convergence: return "convergence";
        case Mode::ConvergenceContinuous: return "convergence_continuous";
        case Mode::Bounds: return "bounds";
        case Mode::NoiseCheck: return "noise_check";
        case Mode::Coverage: return "coverage";
    }
    return "unknown";
}

[[nodiscard]] inline Mode parse_mode(const std::string& s) {
    for (Mode m : {Mode::Convergence, Mode::ConvergenceContinuous, Mode::Bounds, Mode::NoiseCheck, Mode::Coverage}) {
        if (mode_name(m) == s) return m;
    }
    throw ConfigError("config: unknown mode '" + s +
                      "' (expected convergence, convergence_continuous, bounds, noise_check, coverage)");
}

struct ProblemConfig {
    std::string name;
    std::optional<double> lambda;
    std::optional<double> omega;
    std::optional<std::vector<double>> u0;
    std::optional<double> tau_star;
    std::optional<double> alpha;
    std::optional<double> beta;
};

struct ExperimentConfig {
    Mode mode = Mode::Convergence;
    ProblemConfig problem;
    std::string integrator;
    ImplicitOptions implicit_options;
    NoiseParams noise;
    std::vector<double> tau_grid = dyadic_grid(4, 9);
    std::size_t reps = 200;
    std::vector<int> moment_orders{1};
    double T = 1.0;
    std::uint64_t seed = 20240611;
    int subgrid = 16;
    /// Half-width of the accepted band around the theoretical order.
    double order_tolerance = 0.25;
    std::optional<double> theoretical_order;
    /// RMS errors at or below this are excluded from the fit.
    double precision_floor = 1e-12;
    std::optional<double> coverage_tau;
    int r_max = 4;
    std::size_t variance_draws = 100000;
    std::vector<std::pair<int, int>> noise_sums{{2, 1}};
    CStarChoice c_star = CStarChoice::C2;
    std::optional<double> override_c2;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
        throw ConfigError(fmt::format("config: unknown key(s) in {}: {}", where, fmt::join(unknown, ", ")));
    }
}

template <typename V>
std::optional<V> optional_field(const nlohmann::json& obj, const char* key) {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    return obj.at(key).get<V>();
}

}  // namespace detail

/// Builds the catalog problem and applies the config's overrides.
[[nodiscard]] inline Problem make_problem(const ExperimentConfig& cfg) {
    ProblemOptions opt;
    opt.lambda = cfg.problem.lambda;
    opt.omega = cfg.problem.omega;
    if (cfg.problem.u0) opt.u0 = Eigen::Map<const State>(cfg.problem.u0->data(), static_cast<Eigen::Index>(cfg.problem.u0->size()));
    opt.horizon_T = cfg.T;
    Problem pb = builtin_problem(cfg.problem.name, opt);
    auto& reg = pb.field.regularity;
    if (cfg.problem.tau_star) reg.tau_star = *cfg.problem.tau_star;
    if (cfg.problem.alpha || cfg.problem.beta) {
        Dissipativity d = reg.dissipativity.value_or(Dissipativity{});
        if (cfg.problem.alpha) d.alpha = *cfg.problem.alpha;
        if (cfg.problem.beta) d.beta = *cfg.problem.beta;
        reg.dissipativity = d;
    }
    return pb;
}

/// Checks the invariants: the tau cap for implicit schemes, then mesh integrality.
inline void validate(const ExperimentConfig& cfg) {
    if (cfg.tau_grid.empty()) throw ConfigError("config: tau_grid must not be empty");
    for (std::size_t i = 0; i < cfg.tau_grid.size(); ++i) {
        if (!(cfg.tau_grid[i] > 0.0)) throw ConfigError("config: tau_grid entries must be positive");
        if (i > 0 && !(cfg.tau_grid[i] < cfg.tau_grid[i - 1])) {
            throw ConfigError("config: tau_grid must be strictly decreasing");
        }
    }
    if (cfg.reps < 1) throw ConfigError("config: reps must be >= 1");
    if (!(cfg.T > 0.0)) throw ConfigError("config: T must be positive");
    if (cfg.subgrid < 1) throw ConfigError("config: subgrid must be >= 1");
    if (cfg.moment_orders.empty()) throw ConfigError("config: moment_orders must not be empty");
    for (int n : cfg.moment_orders) {
        if (n < 1) throw ConfigError("config: moment orders must be >= 1");
    }
    if (!(cfg.problem.tau_star.value_or(1.0) > 0.0 && cfg.problem.tau_star.value_or(1.0) <= 1.0)) {
        throw ConfigError("config: tau_star must lie in (0, 1]");
    }
    const Problem pb = make_problem(cfg);
    const IntegratorSpec spec = integrator_spec(cfg.integrator, cfg.implicit_options);
    (void)NoiseModel(cfg.noise, pb.dimension());
    if (spec.kind == IntegratorKind::Implicit) {
        const double cap = pb.field.regularity.implicit_cap();
        for (double tau : cfg.tau_grid) {
            if (!(tau < cap)) {
                throw ConfigError(fmt::format(
                    "config: implicit_euler requires tau < tau' = min{{tau*, 1/(2|beta|)}} = {}, got tau = {}", cap,
                    tau));
            }
        }
    }
    for (double tau : cfg.tau_grid) (void)step_count(cfg.T, tau);
    if (cfg.coverage_tau) (void)step_count(cfg.T, *cfg.coverage_tau);
}

/// Parses and validates a JSON config document. Unknown keys are errors.
[[nodiscard]] inline ExperimentConfig parse_config(const nlohmann::json& doc) {
    using detail::optional_field;
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    detail::reject_unknown(doc,
                           {"mode", "problem", "integrator", "noise", "tau_grid", "reps", "moment_orders", "T",
                            "seed", "subgrid", "order_tolerance", "theoretical_order", "precision_floor",
                            "coverage_tau", "r_max", "variance_draws", "noise_sums", "c_star", "override_c2"},
                           "top level");
    ExperimentConfig cfg;
    try {
        if (doc.contains("mode")) cfg.mode = parse_mode(doc.at("mode").get<std::string>());

        if (!doc.contains("problem")) throw ConfigError("config: missing section 'problem'");
        const auto& pj = doc.at("problem");
        if (pj.is_string()) {
            cfg.problem.name = pj.get<std::string>();
        } else {
            detail::reject_unknown(pj, {"name", "lambda", "omega", "u0", "tau_star", "alpha", "beta"}, "problem");
            cfg.problem.name = pj.at("name").get<std::string>();
            cfg.problem.lambda = optional_field<double>(pj, "lambda");
            cfg.problem.omega = optional_field<double>(pj, "omega");
            cfg.problem.u0 = optional_field<std::vector<double>>(pj, "u0");
            cfg.problem.tau_star = optional_field<double>(pj, "tau_star");
            cfg.problem.alpha = optional_field<double>(pj, "alpha");
            cfg.problem.beta = optional_field<double>(pj, "beta");
        }

        if (!doc.contains("integrator")) throw ConfigError("config: missing section 'integrator'");
        const auto& ij = doc.at("integrator");
        if (ij.is_string()) {
            cfg.integrator = ij.get<std::string>();
        } else {
            detail::reject_unknown(ij, {"name", "newton_tol", "max_newton_iters", "fixed_point_fallback"}, "integrator");
            cfg.integrator = ij.at("name").get<std::string>();
            cfg.implicit_options.newton_tol = ij.value("newton_tol", cfg.implicit_options.newton_tol);
            cfg.implicit_options.max_newton_iters = ij.value("max_newton_iters", cfg.implicit_options.max_newton_iters);
            cfg.implicit_options.fixed_point_fallback =
                ij.value("fixed_point_fallback", cfg.implicit_options.fixed_point_fallback);
        }

        if (!doc.contains("noise")) throw ConfigError("config: missing section 'noise'");
        const auto& nj = doc.at("noise");
        if (nj.is_string()) {
            cfg.noise.kind = parse_noise_kind(nj.get<std::string>());
        } else {
            detail::reject_unknown(nj, {"kind", "p", "R", "C_xi", "as_bounded", "bias_fraction"}, "noise");
            cfg.noise.kind = parse_noise_kind(nj.at("kind").get<std::string>());
            cfg.noise.p = nj.value("p", cfg.noise.p);
            cfg.noise.R = nj.value("R", cfg.noise.R);
            cfg.noise.C_xi = optional_field<double>(nj, "C_xi");
            cfg.noise.as_bounded = optional_field<double>(nj, "as_bounded");
            cfg.noise.bias_fraction = nj.value("bias_fraction", cfg.noise.bias_fraction);
        }

        if (doc.contains("tau_grid")) cfg.tau_grid = doc.at("tau_grid").get<std::vector<double>>();
        if (doc.contains("reps")) cfg.reps = doc.at("reps").get<std::size_t>();
        if (doc.contains("moment_orders")) cfg.moment_orders = doc.at("moment_orders").get<std::vector<int>>();
        cfg.T = doc.value("T", cfg.T);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.subgrid = doc.value("subgrid", cfg.subgrid);
        cfg.order_tolerance = doc.value("order_tolerance", cfg.order_tolerance);
        cfg.theoretical_order = optional_field<double>(doc, "theoretical_order");
        cfg.precision_floor = doc.value("precision_floor", cfg.precision_floor);
        cfg.coverage_tau = optional_field<double>(doc, "coverage_tau");
        cfg.r_max = doc.value("r_max", cfg.r_max);
        cfg.variance_draws = doc.value("variance_draws", cfg.variance_draws);
        if (doc.contains("noise_sums")) {
            cfg.noise_sums.clear();
            for (const auto& e : doc.at("noise_sums")) {
                detail::reject_unknown(e, {"w", "v"}, "noise_sums entry");
                cfg.noise_sums.emplace_back(e.at("w").get<int>(), e.at("v").get<int>());
            }
        }
        if (doc.contains("c_star")) {
            const auto s = doc.at("c_star").get<std::string>();
            if (s != "C1" && s != "C2") throw ConfigError("config: c_star must be \"C1\" or \"C2\"");
            cfg.c_star = s == "C1" ? CStarChoice::C1 : CStarChoice::C2;
        }
        cfg.override_c2 = optional_field<double>(doc, "override_c2");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: malformed value: ") + e.what());
    }
    return cfg;
}

/// Full echo with every default filled in; parse_config(to_json(cfg)) reproduces cfg.
[[nodiscard]] inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["mode"] = mode_name(cfg.mode);
    nlohmann::json pj{{"name", cfg.problem.name}};
    if (cfg.problem.lambda) pj["lambda"] = *cfg.problem.lambda;
    if (cfg.problem.omega) pj["omega"] = *cfg.problem.omega;
    if (cfg.problem.u0) pj["u0"] = *cfg.problem.u0;
    if (cfg.problem.tau_star) pj["tau_star"] = *cfg.problem.tau_star;
    if (cfg.problem.alpha) pj["alpha"] = *cfg.problem.alpha;
    if (cfg.problem.beta) pj["beta"] = *cfg.problem.beta;
    j["problem"] = pj;
    j["integrator"] = {{"name", cfg.integrator},
                       {"newton_tol", cfg.implicit_options.newton_tol},
                       {"max_newton_iters", cfg.implicit_options.max_newton_iters},
                       {"fixed_point_fallback", cfg.implicit_options.fixed_point_fallback}};
    nlohmann::json nj{{"kind", noise_name(cfg.noise.kind)}, {"p", cfg.noise.p}, {"R", cfg.noise.R},
                      {"bias_fraction", cfg.noise.bias_fraction}};
    if (cfg.noise.C_xi) nj["C_xi"] = *cfg.noise.C_xi;
    if (cfg.noise.as_bounded) nj["as_bounded"] = *cfg.noise.as_bounded;
    j["noise"] = nj;
    j["tau_grid"] = cfg.tau_grid;
    j["reps"] = cfg.reps;
    j["moment_orders"] = cfg.moment_orders;
    j["T"] = cfg.T;
    j["seed"] = cfg.seed;
    j["subgrid"] = cfg.subgrid;
    j["order_tolerance"] = cfg.order_tolerance;
    if (cfg.theoretical_order) j["theoretical_order"] = *cfg.theoretical_order;
    j["precision_floor"] = cfg.precision_floor;
    if (cfg.coverage_tau) j["coverage_tau"] = *cfg.coverage_tau;
    j["r_max"] = cfg.r_max;
    j["variance_draws"] = cfg.variance_draws;
    j["noise_sums"] = nlohmann::json::array();
    for (const auto& [w, v] : cfg.noise_sums) j["noise_sums"].push_back({{"w", w}, {"v", v}});
    j["c_star"] = cfg.c_star == CStarChoice::C1 ? "C1" : "C2";
    if (cfg.override_c2) j["override_c2"] = *cfg.override_c2;
    return j;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    auto cfg = parse_config(doc);
    validate(cfg);
    return cfg;
}

/// Documented schema, printed on usage errors.
[[nodiscard]] inline std::string config_schema_help() {
    return R"(Config schema (JSON, comments allowed):
  mode               convergence | convergence_continuous | bounds | noise_check | coverage  [convergence]
  problem            name or {name, lambda, omega, u0, tau_star, alpha, beta}
  integrator         name or {name, newton_tol, max_newton_iters, fixed_point_fallback}
  noise              kind or {kind, p, R, C_xi, as_bounded, bias_fraction}
  tau_grid           strictly decreasing step sizes dividing T     [2^-4 .. 2^-9]
  reps               Monte Carlo replicates M                      [200]
  moment_orders      moment orders n                               [[1]]
  T                  horizon                                       [1]
  seed               64-bit seed                                   [20240611]
  subgrid            dense points per step (continuous mode)       [16]
  order_tolerance    accepted |fitted - theoretical| order         [0.25]
  theoretical_order  override of the predicted order               [derived]
  precision_floor    RMS errors at or below are not fitted         [1e-12]
  coverage_tau       step size for the coverage table              [third tau_grid entry]
  r_max              highest moment in noise_check                 [4]
  variance_draws     endpoint draws for the variance check         [100000]
  noise_sums         [{w, v}] orders for the noise-sum check       [[{w:2, v:1}]]
  c_star             C1 | C2, constant inside C_7                  [C2]
  override_c2        replaces the computed C_2
)";
}

}  // namespace probint::harness
