#pragma once

#include "probint/analysis/bounds.hpp"
#include "probint/analysis/constants.hpp"
#include "probint/analysis/convergence.hpp"
#include "probint/analysis/stats.hpp"
#include "probint/harness/config.hpp"
#include "probint/integrators.hpp"
#include "probint/noise.hpp"
#include "probint/problems.hpp"
#include "probint/solver.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace probint::harness {

/// One row of the tabular output (tau, n, mean, ci_lo, ci_hi, bound, pass).
struct TableRow {
    double tau = 0.0;
    int n = 1;
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double bound = std::numeric_limits<double>::infinity();
    bool pass = true;
};

struct Verdict {
    std::string name;
    bool pass = false;
};

struct ExperimentResult {
    nlohmann::json report;
    std::vector<TableRow> table;
    std::vector<Verdict> verdicts;
    std::vector<std::pair<double, std::uint64_t>> tau_seeds;

    [[nodiscard]] bool all_pass() const {
        return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
    }
};

[[nodiscard]] inline std::uint64_t level_seed(std::uint64_t seed, std::size_t level) {
    return derive_seed(seed, level);
}

struct MeasuredConstants {
    double C_phi = 1.0;
    double C_psi = 1.0;
    double u_inf = 0.0;
};

/// C_phi and C_psi measured on the ball of radius |u|_inf + 1 around the origin, with |u|_inf
/// taken from the reference trajectory on the finest mesh.
[[nodiscard]] inline MeasuredConstants measure_constants(const Problem& pb, const IntegratorSpec& spec,
                                                         const std::vector<double>& taus, std::uint64_t seed) {
    MeasuredConstants mc;
    mc.u_inf = max_norm(reference_trajectory(pb, taus.back()));
    const double radius = mc.u_inf + 1.0;
    mc.C_phi = measure_flow_lipschitz(pb, taus, radius, 64, derive_seed(seed, 0xC0F1));
    mc.C_psi = measure_lte_constant(pb, spec, taus, radius, 64, derive_seed(seed, 0xC051));
    return mc;
}

[[nodiscard]] inline ConstantsLedger build_ledger(const ExperimentConfig& cfg, const Problem& pb,
                                                  const IntegratorSpec& spec, const NoiseModel& noise,
                                                  const MeasuredConstants& mc, int n) {
    const auto& reg = pb.field.regularity;
    LedgerInputs in;
    in.C_phi = reg.poly_growth ? std::max(mc.C_phi, reg.poly_growth->C_phi) : mc.C_phi;
    in.C_psi = mc.C_psi;
    in.C_xi = noise.regularity_constant();
    in.tau_star = reg.tau_star;
    in.tau_prime = std::min(reg.implicit_cap(), cfg.tau_grid.front());
    in.T = cfg.T;
    in.p = cfg.noise.p;
    in.q = spec.order_q;
    in.n = n;
    in.s = reg.poly_growth ? reg.poly_growth->s : 1.0;
    if (reg.dissipativity) {
        in.alpha = reg.dissipativity->alpha;
        in.beta = reg.dissipativity->beta;
    }
    in.u_inf = mc.u_inf;
    in.U0_norm = pb.u0.norm();
    in.c_star = cfg.c_star;
    in.override_c2 = cfg.override_c2;
    return constants_ledger(in, reg.dissipativity.has_value());
}

namespace detail {

inline std::vector<double> discrete_sup_errors(const Problem& pb, const OneStepMap& psi, const NoiseModel& noise,
                                               double tau, std::size_t reps, std::uint64_t seed,
                                               unsigned threads) {
    const Trajectory ref = reference_trajectory(pb, tau);
    return parallel_map<double>(reps, threads, [&](std::size_t i) {
        return sup_error(solve_discrete(pb, psi, noise, tau, seed, i), ref);
    });
}

inline std::vector<double> continuous_sup_errors(const Problem& pb, const OneStepMap& psi,
                                                 const NoiseModel& noise, double tau, int subgrid,
                                                 std::size_t reps, std::uint64_t seed, unsigned threads) {
    const Trajectory ref = reference_trajectory(pb, tau);
    return parallel_map<double>(reps, threads, [&](std::size_t i) {
        return dense_sup_error(solve_continuous(pb, psi, noise, tau, subgrid, seed, i), pb, ref);
    });
}

inline nlohmann::json number(double x) {
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

inline double error_moment_bound(const ConstantsLedger& led, const IntegratorSpec& spec, bool continuous,
                                 bool centred, int n, double tau) {
    if (spec.kind == IntegratorKind::Implicit) {
        return led.has_dissipative_constants ? led.implicit_euler_bound(tau)
                                             : std::numeric_limits<double>::infinity();
    }
    if (continuous) return led.continuous_bound(2 * n, tau);
    if (centred && n == 1) return led.centred_bound(tau);
    return led.noncentred_bound(2 * n, tau);
}

struct Study {
    std::vector<double> taus;
    std::vector<std::vector<double>> sup_errors;
    std::vector<std::size_t> diverged;
};

inline Study run_study(const ExperimentConfig& cfg, const Problem& pb, const OneStepMap& psi,
                       const NoiseModel& noise, bool continuous, unsigned threads) {
    Study st;
    st.taus = cfg.tau_grid;
    for (std::size_t l = 0; l < cfg.tau_grid.size(); ++l) {
        const double tau = cfg.tau_grid[l];
        const std::uint64_t seed = level_seed(cfg.seed, l);
        auto errs = continuous
                        ? continuous_sup_errors(pb, psi, noise, tau, cfg.subgrid, cfg.reps, seed, threads)
                        : discrete_sup_errors(pb, psi, noise, tau, cfg.reps, seed, threads);
        st.diverged.push_back(static_cast<std::size_t>(
            std::count_if(errs.begin(), errs.end(), [](double e) { return !std::isfinite(e); })));
        st.sup_errors.push_back(std::move(errs));
    }
    return st;
}

}  // namespace detail

namespace modes {

inline void convergence(const ExperimentConfig& cfg, const Problem& pb, const IntegratorSpec& spec,
                        const NoiseModel& noise, bool continuous, unsigned threads, ExperimentResult& res) {
    const OneStepMap psi = OneStepMap::from_spec(spec, pb);
    const double theory =
        cfg.theoretical_order.value_or(theoretical_order(spec.order_q, cfg.noise.p, noise.is_zero(), noise.centred(),
                                                         spec.kind == IntegratorKind::Implicit, continuous));
    const auto study = detail::run_study(cfg, pb, psi, noise, continuous, threads);
    const auto mc = measure_constants(pb, spec, cfg.tau_grid, cfg.seed);
    res.report["measured_constants"] = {{"C_phi", mc.C_phi}, {"C_psi", mc.C_psi}, {"u_inf", mc.u_inf}};
    res.report["diverged"] = study.diverged;
    res.report["convergence"] = nlohmann::json::array();
    res.report["ledgers"] = nlohmann::json::array();
    for (int n : cfg.moment_orders) {
        const auto rep = convergence_report(study.taus, study.sup_errors, n, theory, cfg.order_tolerance,
                                            cfg.precision_floor);
        const auto led = build_ledger(cfg, pb, spec, noise, mc, n);
        bool bounds_ok = true;
        for (const auto& level : rep.levels) {
            TableRow row;
            row.tau = level.tau;
            row.n = n;
            row.mean = level.moment.mean;
            row.ci_lo = level.moment.ci_lo();
            row.ci_hi = level.moment.ci_hi();
            row.bound = detail::error_moment_bound(led, spec, continuous, noise.centred(), n, level.tau);
            row.pass = level.moment.mean - 3.0 * level.moment.std_error <= row.bound;
            bounds_ok = bounds_ok && row.pass;
            res.table.push_back(row);
        }
        res.report["convergence"].push_back(to_json(rep));
        res.report["ledgers"].push_back(to_json(led));
        res.verdicts.push_back({fmt::format("order_n{}", n), rep.verdict});
        res.verdicts.push_back({fmt::format("error_bound_n{}", n), bounds_ok});
    }
}

inline void coverage(const ExperimentConfig& cfg, const Problem& pb, const IntegratorSpec& spec,
                     const NoiseModel& noise, unsigned threads, ExperimentResult& res) {
    const OneStepMap psi = OneStepMap::from_spec(spec, pb);
    const double theory =
        cfg.theoretical_order.value_or(theoretical_order(spec.order_q, cfg.noise.p, noise.is_zero(), noise.centred(),
                                                         spec.kind == IntegratorKind::Implicit, false));
    const auto study = detail::run_study(cfg, pb, psi, noise, false, threads);
    const auto rep = convergence_report(study.taus, study.sup_errors, 1, theory, cfg.order_tolerance,
                                        cfg.precision_floor);
    const auto ft = rep.fitted_taus();
    if (ft.empty()) throw PreconditionError("coverage: no fittable step sizes to estimate C_hat");
    const double C_hat = std::exp(2.0 * fixed_slope_intercept(ft, rep.fitted_rms(), theory));

    const double tau_c = cfg.coverage_tau.value_or(cfg.tau_grid[std::min<std::size_t>(2, cfg.tau_grid.size() - 1)]);
    std::vector<double> errs;
    const auto it = std::find_if(cfg.tau_grid.begin(), cfg.tau_grid.end(),
                                 [&](double t) { return std::abs(t - tau_c) <= 1e-15 * tau_c; });
    std::uint64_t seed_c = 0;
    if (it != cfg.tau_grid.end()) {
        const auto idx = static_cast<std::size_t>(std::distance(cfg.tau_grid.begin(), it));
        errs = study.sup_errors[idx];
        seed_c = level_seed(cfg.seed, idx);
    } else {
        seed_c = level_seed(cfg.seed, cfg.tau_grid.size());
        errs = detail::discrete_sup_errors(pb, psi, noise, tau_c, cfg.reps, seed_c, threads);
        res.tau_seeds.emplace_back(tau_c, seed_c);
    }
    std::vector<double> sq;
    sq.reserve(errs.size());
    for (double e : errs) sq.push_back(e * e);
    const double rms = std::sqrt(estimate_mean(sq).mean);
    std::vector<double> radii;
    for (int j = 0; j < 10; ++j) radii.push_back(rms * (0.5 + 0.5 * j));
    const auto rows = coverage_report(errs, radii, C_hat, tau_c, 2.0 * theory);

    nlohmann::json table = nlohmann::json::array();
    bool ok = true;
    for (const auto& r : rows) {
        res.table.push_back({tau_c, 1, r.empirical, r.empirical - 1.96 * r.std_error, r.empirical + 1.96 * r.std_error,
                             r.bound, r.pass});
        table.push_back({{"r", r.r}, {"empirical", r.empirical}, {"std_error", r.std_error}, {"bound", r.bound},
                         {"pass", r.pass}});
        ok = ok && r.pass;
    }
    res.report["convergence"] = to_json(rep);
    res.report["coverage"] = {{"tau", tau_c}, {"C_hat", C_hat}, {"rate", 2.0 * theory}, {"rms", rms}, {"rows", table}};
    res.verdicts.push_back({"coverage", ok});
}

inline void bounds(const ExperimentConfig& cfg, const Problem& pb, const IntegratorSpec& spec,
                   const NoiseModel& noise, unsigned threads, ExperimentResult& res) {
    if (spec.kind != IntegratorKind::Implicit || !pb.field.regularity.dissipativity) {
        throw PreconditionError("bounds mode requires implicit_euler on a problem with declared dissipativity");
    }
    const OneStepMap psi = OneStepMap::from_spec(spec, pb);
    const auto mc = measure_constants(pb, spec, cfg.tau_grid, cfg.seed);
    res.report["measured_constants"] = {{"C_phi", mc.C_phi}, {"C_psi", mc.C_psi}, {"u_inf", mc.u_inf}};
    res.report["ledgers"] = nlohmann::json::array();
    double C2 = 0.0;
    for (int n : cfg.moment_orders) {
        const auto led = build_ledger(cfg, pb, spec, noise, mc, n);
        C2 = led.C2;
        res.report["ledgers"].push_back(to_json(led));
    }
    const double C_xi = noise.regularity_constant();
    std::vector<bool> as_ok(cfg.moment_orders.size(), true);
    std::vector<bool> moment_ok(cfg.moment_orders.size(), true);
    std::vector<bool> sum_ok(cfg.noise_sums.size(), true);
    nlohmann::json levels = nlohmann::json::array();
    for (std::size_t l = 0; l < cfg.tau_grid.size(); ++l) {
        const double tau = cfg.tau_grid[l];
        const std::uint64_t seed = level_seed(cfg.seed, l);
        const auto ens = run_ensemble(pb, psi, noise, tau, cfg.reps, seed, threads);
        nlohmann::json lj{{"tau", tau}, {"diverged", ens.diverged_count()}};
        for (std::size_t ni = 0; ni < cfg.moment_orders.size(); ++ni) {
            const int n = cfg.moment_orders[ni];
            std::size_t failures = 0;
            double worst = 0.0;
            for (const auto& run : ens.runs) {
                const auto c = as_path_bound_check(run, pb, C2, n);
                if (!c.pass || run.diverged()) ++failures;
                worst = std::max(worst, c.lhs / c.rhs);
            }
            as_ok[ni] = as_ok[ni] && failures == 0;
            const auto mb = moment_bound_check(ens, C2, n, cfg.noise.p, C_xi, cfg.T);
            moment_ok[ni] = moment_ok[ni] && mb.pass;
            res.table.push_back({tau, n, mb.lhs, mb.lhs - 1.96 * mb.std_error, mb.lhs + 1.96 * mb.std_error, mb.rhs,
                                 mb.pass});
            lj["as_path"].push_back({{"n", n}, {"paths", ens.runs.size()}, {"failures", failures}, {"worst_ratio", worst}});
            lj["moment"].push_back(to_json(mb));
        }
        for (std::size_t si = 0; si < cfg.noise_sums.size(); ++si) {
            const auto [w, v] = cfg.noise_sums[si];
            const auto c = noise_sum_moment_check(noise, tau, w, v, cfg.T, cfg.reps, derive_seed(seed, 0x5A));
            sum_ok[si] = sum_ok[si] && c.pass;
            lj["noise_sums"].push_back(to_json(c));
        }
        levels.push_back(lj);
    }
    res.report["levels"] = levels;
    for (std::size_t ni = 0; ni < cfg.moment_orders.size(); ++ni) {
        res.verdicts.push_back({fmt::format("as_path_n{}", cfg.moment_orders[ni]), as_ok[ni]});
        res.verdicts.push_back({fmt::format("moment_n{}", cfg.moment_orders[ni]), moment_ok[ni]});
    }
    for (std::size_t si = 0; si < cfg.noise_sums.size(); ++si) {
        res.verdicts.push_back({fmt::format("noise_sum_w{}_v{}", cfg.noise_sums[si].first, cfg.noise_sums[si].second),
                                sum_ok[si]});
    }
}

/// Per-component sample variance of xi(tau) from `draws` independent draws.
[[nodiscard]] inline double endpoint_variance(const NoiseModel& noise, double tau, std::size_t draws,
                                              std::uint64_t seed) {
    const int d = noise.dimension();
    std::vector<std::vector<double>> comps(static_cast<std::size_t>(d), std::vector<double>(draws));
    for (std::size_t i = 0; i < draws; ++i) {
        const State x = noise.draw(tau, NoiseModel::key(seed, i, 0)).value;
        for (int c = 0; c < d; ++c) comps[static_cast<std::size_t>(c)][i] = x[c];
    }
    double total = 0.0;
    for (const auto& v : comps) total += sample_variance(v);
    return total / d;
}

inline void noise_check(const ExperimentConfig& cfg, const NoiseModel& noise, ExperimentResult& res) {
    const bool variance_law =
        noise.params().kind == NoiseKind::GaussEndpoint || noise.params().kind == NoiseKind::IbmPath;
    bool rows_ok = true;
    bool variance_ok = true;
    nlohmann::json levels = nlohmann::json::array();
    for (std::size_t l = 0; l < cfg.tau_grid.size(); ++l) {
        const double tau = cfg.tau_grid[l];
        const std::uint64_t seed = level_seed(cfg.seed, l);
        const auto table = verify_regularity(noise, tau, cfg.r_max, cfg.reps, seed, cfg.subgrid);
        nlohmann::json lj{{"tau", tau}, {"sup_over_path", table.sup_over_path}, {"rows", nlohmann::json::array()}};
        for (const auto& r : table.rows) {
            res.table.push_back({tau, r.r, r.empirical, r.empirical - 1.96 * r.std_error,
                                 r.empirical + 1.96 * r.std_error, r.bound, r.pass});
            lj["rows"].push_back({{"r", r.r}, {"empirical", r.empirical}, {"std_error", r.std_error},
                                  {"bound", r.bound}, {"empirical_constant", r.empirical_constant}, {"asserted", r.asserted},
                                  {"pass", r.pass}});
            rows_ok = rows_ok && r.pass;
        }
        if (variance_law) {
            const double var = endpoint_variance(noise, tau, cfg.variance_draws, derive_seed(seed, 0x7A));
            const double expected = std::pow(tau, 2.0 * cfg.noise.p + 1.0) / 3.0;
            const double rel = std::abs(var / expected - 1.0);
            variance_ok = variance_ok && rel <= 0.03;
            lj["endpoint_variance"] = {{"draws", cfg.variance_draws}, {"empirical", var}, {"expected", expected},
                                       {"relative_error", rel}, {"pass", rel <= 0.03}};
        }
        levels.push_back(lj);
    }
    res.report["regularity_constant"] = noise.regularity_constant();
    res.report["levels"] = levels;
    res.verdicts.push_back({"regularity", rows_ok});
    if (variance_law) res.verdicts.push_back({"endpoint_variance", variance_ok});
}

}  // namespace modes

/// Dispatches on the mode. The result is a pure function of `cfg`; `threads` affects speed only.
[[nodiscard]] inline ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned threads = 1) {
    validate(cfg);
    const Problem pb = make_problem(cfg);
    const IntegratorSpec spec = integrator_spec(cfg.integrator, cfg.implicit_options);
    const NoiseModel noise(cfg.noise, pb.dimension());
    ExperimentResult res;
    for (std::size_t l = 0; l < cfg.tau_grid.size(); ++l) {
        res.tau_seeds.emplace_back(cfg.tau_grid[l], level_seed(cfg.seed, l));
    }
    res.report["mode"] = mode_name(cfg.mode);
    res.report["problem"] = pb.name;
    res.report["integrator"] = spec.name;
    res.report["noise"] = noise.name();
    switch (cfg.mode) {
        case Mode::Convergence: modes::convergence(cfg, pb, spec, noise, false, threads, res); break;
        case Mode::ConvergenceContinuous: modes::convergence(cfg, pb, spec, noise, true, threads, res); break;
        case Mode::Coverage: modes::coverage(cfg, pb, spec, noise, threads, res); break;
        case Mode::Bounds: modes::bounds(cfg, pb, spec, noise, threads, res); break;
        case Mode::NoiseCheck: modes::noise_check(cfg, noise, res); break;
    }
    nlohmann::json verdicts = nlohmann::json::object();
    for (const auto& v : res.verdicts) verdicts[v.name] = v.pass ? "pass" : "fail";
    res.report["verdicts"] = verdicts;
    return res;
}

// ---- artifacts -------------------------------------------------------------

inline void write_table_csv(std::ostream& os, const std::vector<TableRow>& rows) {
    os << "tau,n,mean,ci_lo,ci_hi,bound,pass\n";
    for (const auto& r : rows) {
        os << fmt::format("{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", r.tau, r.n, r.mean, r.ci_lo, r.ci_hi,
                          r.bound, r.pass ? "true" : "false");
    }
}

[[nodiscard]] inline nlohmann::json table_json(const std::vector<TableRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        j.push_back({{"tau", r.tau}, {"n", r.n}, {"mean", detail::number(r.mean)}, {"ci_lo", detail::number(r.ci_lo)},
                     {"ci_hi", detail::number(r.ci_hi)}, {"bound", detail::number(r.bound)}, {"pass", r.pass}});
    }
    return j;
}

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
[[nodiscard]] inline std::string fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
        h ^= static_cast<unsigned char>(*it);
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

[[nodiscard]] inline std::string utc_timestamp() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

struct RunOptions {
    std::filesystem::path out_dir = "out";
    std::string format = "csv";
    unsigned threads = 1;
};

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

/// Manifest skeleton written before the run starts; completed (or marked failed) afterwards.
[[nodiscard]] inline nlohmann::json start_manifest(const ExperimentConfig& cfg, const RunOptions& opt) {
    nlohmann::json m;
    m["tool"] = "probint";
    m["version"] = kVersion;
    m["config"] = to_json(cfg);
    m["format"] = opt.format;
    m["threads"] = opt.threads;
    m["started"] = utc_timestamp();
    m["status"] = "running";
    m["tau_seeds"] = nlohmann::json::array();
    for (std::size_t l = 0; l < cfg.tau_grid.size(); ++l) {
        m["tau_seeds"].push_back({{"tau", cfg.tau_grid[l]}, {"seed", level_seed(cfg.seed, l)}});
    }
    return m;
}

/// Runs the experiment, writes the table, report and manifest into `opt.out_dir`, and returns
/// the manifest. On an exception the partial manifest is written with status "error" and the
/// exception is rethrown.
inline nlohmann::json execute(const ExperimentConfig& cfg, const RunOptions& opt) {
    if (opt.format != "csv" && opt.format != "json") throw ConfigError("format must be csv or json");
    std::filesystem::create_directories(opt.out_dir);
    const auto manifest_path = opt.out_dir / "manifest.json";
    nlohmann::json manifest = start_manifest(cfg, opt);
    try {
        const ExperimentResult res = run_experiment(cfg, std::max(1U, opt.threads));
        const std::string table_name = opt.format == "csv" ? "results.csv" : "results.json";
        {
            std::ofstream out(opt.out_dir / table_name, std::ios::binary);
            if (opt.format == "csv") {
                write_table_csv(out, res.table);
            } else {
                out << table_json(res.table).dump(2) << '\n';
            }
        }
        write_json_file(opt.out_dir / "report.json", res.report);
        manifest["tau_seeds"] = nlohmann::json::array();
        for (const auto& [tau, seed] : res.tau_seeds) manifest["tau_seeds"].push_back({{"tau", tau}, {"seed", seed}});
        manifest["outputs"] = nlohmann::json::array();
        for (const auto& name : {table_name, std::string("report.json")}) {
            manifest["outputs"].push_back({{"path", name}, {"fnv1a64", fnv1a_file(opt.out_dir / name)}});
        }
        manifest["verdicts"] = res.report["verdicts"];
        manifest["overall"] = res.all_pass() ? "pass" : "fail";
        manifest["status"] = "ok";
    } catch (const std::exception& e) {
        manifest["status"] = "error";
        manifest["error"] = e.what();
        manifest["finished"] = utc_timestamp();
        write_json_file(manifest_path, manifest);
        throw;
    }
    manifest["finished"] = utc_timestamp();
    write_json_file(manifest_path, manifest);
    return manifest;
}

}  // namespace probint::harness
