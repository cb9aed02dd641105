#pragma once

#include "probint/analysis/constants.hpp"
#include "probint/analysis/fit.hpp"
#include "probint/analysis/stats.hpp"
#include "probint/core.hpp"
#include "probint/integrators.hpp"
#include "probint/noise.hpp"
#include "probint/problems.hpp"
#include "probint/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace probint {

struct BoundCheck {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass = false;
    double slack = 0.0;
    /// Monte Carlo standard error of lhs (0 for per-path checks).
    double std_error = 0.0;
};

/// pass <=> lhs <= rhs (1 + slack) + abs_tol.
[[nodiscard]] inline BoundCheck make_check(std::string name, double lhs, double rhs, double slack,
                                           double abs_tol = 0.0) {
    BoundCheck c{std::move(name), lhs, rhs, false, slack, 0.0};
    c.pass = lhs <= rhs * (1.0 + slack) + abs_tol;
    return c;
}

[[nodiscard]] inline nlohmann::json to_json(const BoundCheck& c) {
    return {{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"pass", c.pass}, {"slack", c.slack},
            {"std_error", c.std_error}};
}

/// max_k |u_k - U_k|; +infinity for a diverged run.
[[nodiscard]] inline double sup_error(const RandomisedRun& run, const Trajectory& reference) {
    if (run.diverged()) return std::numeric_limits<double>::infinity();
    if (reference.size() != run.states.size()) {
        throw MeshError("sup_error: run and reference are on different meshes");
    }
    double m = 0.0;
    for (std::size_t k = 0; k < reference.size(); ++k) {
        m = std::max(m, (reference[k] - run.states[k]).norm());
    }
    return m;
}

/// sup over the dense grid of |u(t) - U(t)|, with u(t_k + h) = Phi^h(u_k).
[[nodiscard]] inline double dense_sup_error(const InterpolantRun& irun, const Problem& problem,
                                            const Trajectory& reference) {
    if (irun.base.diverged()) return std::numeric_limits<double>::infinity();
    const double tau = irun.base.tau;
    const int m = irun.subgrid;
    double worst = (reference.front() - irun.base.states.front()).norm();
    for (std::size_t k = 0; k < irun.dense_states.size(); ++k) {
        for (int j = 0; j <= m; ++j) {
            const double h = (j == m) ? tau : tau * static_cast<double>(j) / static_cast<double>(m);
            const State exact = (j == m) ? reference[k + 1] : flow_map(problem, h, reference[k], 1000);
            worst = std::max(worst, (exact - irun.dense_states[k][static_cast<std::size_t>(j)]).norm());
        }
    }
    return worst;
}

/// Almost-sure bound on implicit Euler paths:
/// max_i |U_i|^(2n) <= (2 C_2)^n [1 + tau^(-n) (sum_i |xi_i|^2)^n]. Zero slack, 1e-9 absolute.
[[nodiscard]] inline BoundCheck as_path_bound_check(const RandomisedRun& run, const Problem& problem,
                                                    double C2, int n) {
    const auto& reg = problem.field.regularity;
    if (!reg.dissipativity) {
        throw PreconditionError("as_path_bound_check: problem '" + problem.name + "' declares no dissipativity");
    }
    if (run.integrator != "implicit_euler") {
        throw PreconditionError("as_path_bound_check: run was not produced by implicit_euler");
    }
    if (run.tau >= reg.implicit_cap()) {
        throw PreconditionError("as_path_bound_check: tau must be below tau'");
    }
    double lhs = 0.0;
    for (const auto& U : run.states) lhs = std::max(lhs, std::pow(U.squaredNorm(), n));
    double noise_sq = 0.0;
    for (const auto& xi : run.noise_draws) noise_sq += xi.value.squaredNorm();
    const double rhs = std::pow(2.0 * C2, n) * (1.0 + std::pow(noise_sq / run.tau, n));
    return make_check("as_path_n" + std::to_string(n), lhs, rhs, 0.0, 1e-9);
}

/// E[max_i |U_i|^(2n)] <= (2 C_2)^n (1 + (T C_xi^2 tau^(2p-1))^n); pass when mean - 3 SE <= rhs.
[[nodiscard]] inline BoundCheck moment_bound_check(const Ensemble& ensemble, double C2, int n, double p,
                                                   double C_xi, double T) {
    if (ensemble.runs.size() < 1000) {
        throw StatisticalPowerError("moment_bound_check: need at least 1000 replicates, got " +
                                    std::to_string(ensemble.runs.size()));
    }
    std::vector<double> maxima;
    maxima.reserve(ensemble.runs.size());
    for (const auto& run : ensemble.runs) {
        double m = 0.0;
        for (const auto& U : run.states) m = std::max(m, std::pow(U.squaredNorm(), n));
        if (run.diverged()) m = std::numeric_limits<double>::infinity();
        maxima.push_back(m);
    }
    const auto est = estimate_mean(maxima);
    const double tau = ensemble.runs.front().tau;
    const double rhs = std::pow(2.0 * C2, n) * (1.0 + std::pow(T * C_xi * C_xi * std::pow(tau, 2.0 * p - 1.0), n));
    if (2.0 * 1.96 * est.std_error > rhs) {
        throw StatisticalPowerError("moment_bound_check: confidence interval wider than the bound");
    }
    BoundCheck c{"moment_n" + std::to_string(n), est.mean, rhs, est.mean - 3.0 * est.std_error <= rhs, 0.0,
                 est.std_error};
    return c;
}

/// E[(sum_{i<K} |xi_i|^w)^v] <= (T C_xi^w tau^(w(p+1/2)-1))^v, 3-SE slack.
[[nodiscard]] inline BoundCheck noise_sum_moment_check(const NoiseModel& noise, double tau, int w, int v,
                                                       double T, std::size_t reps, std::uint64_t seed) {
    if (static_cast<long long>(w) * v > noise.params().R) {
        throw PreconditionError("noise_sum_moment_check: w v exceeds the model's R");
    }
    if (reps < 1000) {
        throw StatisticalPowerError("noise_sum_moment_check: need at least 1000 replicates");
    }
    const std::size_t K = step_count(T, tau);
    std::vector<double> samples(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            sum += std::pow(noise.draw(tau, NoiseModel::key(seed, i, k)).value.norm(), w);
        }
        samples[i] = std::pow(sum, v);
    }
    const auto est = estimate_mean(samples);
    const double C = noise.regularity_constant();
    const double rhs = std::pow(T * std::pow(C, w) * std::pow(tau, w * (noise.params().p + 0.5) - 1.0), v);
    BoundCheck c{"noise_sum_w" + std::to_string(w) + "_v" + std::to_string(v), est.mean, rhs,
                 est.mean - 3.0 * est.std_error <= rhs, 0.0, est.std_error};
    return c;
}

struct MomentProbe {
    FitResult fit;
    std::vector<double> taus;
    std::vector<double> moments;
    std::vector<double> excluded_taus;
    /// max over tau of moment / tau^(2n(q+1)).
    double empirical_constant = 0.0;
};

/// Fits log E|Psi^tau(U_k) - Phi^tau(U_k)|^(2n) against log tau at the mid-trajectory step
/// k = K/2, with U_k drawn from M randomised runs per tau.
[[nodiscard]] inline MomentProbe local_truncation_moment_probe(const Problem& problem, const IntegratorSpec& spec,
                                                               const NoiseModel& noise,
                                                               const std::vector<double>& taus, int n,
                                                               std::size_t reps, std::uint64_t seed,
                                                               unsigned threads = 1,
                                                               double precision_floor = 1e-13) {
    const OneStepMap psi = OneStepMap::from_spec(spec, problem);
    MomentProbe probe;
    for (std::size_t level = 0; level < taus.size(); ++level) {
        const double tau = taus[level];
        const auto ens = run_ensemble(problem, psi, noise, tau, reps, derive_seed(seed, level), threads);
        const std::size_t mid = ens.runs.front().K / 2;
        std::vector<double> values;
        values.reserve(reps);
        for (const auto& run : ens.runs) {
            if (run.diverged() || run.states.size() <= mid) continue;
            const State& U = run.states[mid];
            const double err = (psi(U, tau).state - flow_map(problem, tau, U, 1000)).norm();
            values.push_back(std::pow(err, 2 * n));
        }
        const double mean = estimate_mean(values).mean;
        if (!(mean > std::pow(precision_floor, 2 * n))) {
            probe.excluded_taus.push_back(tau);
            continue;
        }
        probe.taus.push_back(tau);
        probe.moments.push_back(mean);
        probe.empirical_constant =
            std::max(probe.empirical_constant, mean / std::pow(tau, 2.0 * n * (spec.order_q + 1)));
    }
    probe.fit = fit_order(probe.taus, probe.moments);
    return probe;
}

struct CoverageRow {
    double r = 0.0;
    double empirical = 0.0;
    double std_error = 0.0;
    double bound = 0.0;  // max(0, 1 - C_hat tau^rate / r^2)
    bool pass = false;
};

/// Empirical P[max|e| <= r] against the Chebyshev lower bound, 3-SE slack.
[[nodiscard]] inline std::vector<CoverageRow> coverage_report(const std::vector<double>& sup_errors,
                                                              const std::vector<double>& radii, double C_hat,
                                                              double tau, double rate) {
    std::vector<CoverageRow> rows;
    const auto M = static_cast<double>(sup_errors.size());
    for (double r : radii) {
        const auto inside = static_cast<double>(
            std::count_if(sup_errors.begin(), sup_errors.end(), [r](double e) { return e <= r; }));
        CoverageRow row;
        row.r = r;
        row.empirical = inside / M;
        row.std_error = std::sqrt(row.empirical * (1.0 - row.empirical) / M);
        row.bound = std::max(0.0, 1.0 - C_hat * std::pow(tau, rate) / (r * r));
        row.pass = row.empirical + 3.0 * row.std_error >= row.bound;
        rows.push_back(row);
    }
    return rows;
}

/// Uniform samples in the ball of `radius` about the origin (first sample: origin).
[[nodiscard]] inline std::vector<State> sample_ball(int d, double radius, std::size_t count, std::uint64_t seed) {
    NormalSource rng(StreamKey{seed, 0, 0, 0xBA11});
    std::vector<State> pts;
    pts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        State v(d);
        for (int c = 0; c < d; ++c) v[c] = rng();
        v *= radius * std::pow(rng.uniform(), 1.0 / d) / v.norm();
        pts.push_back(std::move(v));
    }
    return pts;
}

/// Measured C_phi: max over sampled pairs and taus of (Lip ratio - 1)/tau, floored at 1.
[[nodiscard]] inline double measure_flow_lipschitz(const Problem& problem, const std::vector<double>& taus,
                                                   double radius, std::size_t samples, std::uint64_t seed) {
    const auto pts = sample_ball(problem.dimension(), radius, 2 * samples, seed);
    double c = 1.0;
    for (double tau : taus) {
        for (std::size_t i = 0; i < samples; ++i) {
            const State& a = pts[2 * i];
            const State& b = pts[2 * i + 1];
            const double dist = (a - b).norm();
            if (dist == 0.0) continue;
            const double ratio = (flow_map(problem, tau, a) - flow_map(problem, tau, b)).norm() / dist;
            c = std::max(c, (ratio - 1.0) / tau);
        }
    }
    return c;
}

/// Measured C_psi: max over sampled states and taus of |Psi^tau(x) - Phi^tau(x)| / tau^(q+1), floored at 1.
[[nodiscard]] inline double measure_lte_constant(const Problem& problem, const IntegratorSpec& spec,
                                                 const std::vector<double>& taus, double radius,
                                                 std::size_t samples, std::uint64_t seed) {
    const auto pts = sample_ball(problem.dimension(), radius, samples, seed);
    double c = 1.0;
    for (double tau : taus) {
        for (const auto& x : pts) {
            const double err = (step(spec, problem.field, x, tau).state - flow_map(problem, tau, x, 1000)).norm();
            c = std::max(c, err / std::pow(tau, spec.order_q + 1));
        }
    }
    return c;
}

}  // namespace probint
