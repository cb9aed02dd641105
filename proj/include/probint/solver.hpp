#pragma once

#include "probint/core.hpp"
#include "probint/integrators.hpp"
#include "probint/noise.hpp"
#include "probint/problems.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace probint {

/// One realisation of U_{k+1} = Psi^tau(U_k) + xi_k(tau), U_0 = u0.
struct RandomisedRun {
    double tau = 0.0;
    std::size_t K = 0;
    Trajectory states;              // U_0..U_K (fewer if diverged)
    std::vector<NoiseDraw> noise_draws;  // xi_0..xi_{K-1}
    std::uint64_t seed = 0;
    std::string integrator;
    std::size_t replicate_index = 0;
    /// Step index whose state left the admissible region (or went non-finite).
    std::optional<std::size_t> diverged_at;

    [[nodiscard]] bool diverged() const { return diverged_at.has_value(); }
};

struct InterpolantRun {
    RandomisedRun base;
    int subgrid = 1;
    /// dense_states[k][j] = U(t_k + j tau / m), j = 0..m, for each completed segment k.
    std::vector<std::vector<State>> dense_states;
};

namespace detail {

inline bool outside_region(const State& x, double radius) {
    return !x.allFinite() || x.norm() > radius;
}

}  // namespace detail

/// Runs the randomised recursion for K = T/tau steps. Divergence is recorded, not thrown;
/// implicit-solver failures and step-size violations propagate.
[[nodiscard]] inline RandomisedRun solve_discrete(const Problem& problem, const OneStepMap& psi,
                                                  const NoiseModel& noise, double tau, std::uint64_t seed,
                                                  std::size_t replicate_index) {
    RandomisedRun run;
    run.tau = tau;
    run.K = step_count(problem.horizon_T, tau);
    run.seed = seed;
    run.integrator = psi.name();
    run.replicate_index = replicate_index;
    run.states.reserve(run.K + 1);
    run.noise_draws.reserve(run.K);
    run.states.push_back(problem.u0);
    const double radius = problem.field.regularity.admissible_radius;
    for (std::size_t k = 0; k < run.K; ++k) {
        State next;
        NoiseDraw xi = noise.draw(tau, NoiseModel::key(seed, replicate_index, k));
        try {
            next = psi(run.states.back(), tau).state;
        } catch (const DivergenceError&) {
            run.diverged_at = k + 1;
            break;
        }
        next += xi.value;
        run.noise_draws.push_back(std::move(xi));
        const bool out = detail::outside_region(next, radius);
        run.states.push_back(std::move(next));
        if (out) {
            run.diverged_at = k + 1;
            break;
        }
    }
    return run;
}

[[nodiscard]] inline RandomisedRun solve_discrete(const Problem& problem, const IntegratorSpec& spec,
                                                  const NoiseModel& noise, double tau, std::uint64_t seed,
                                                  std::size_t replicate_index) {
    return solve_discrete(problem, OneStepMap::from_spec(spec, problem), noise, tau, seed, replicate_index);
}

/// Continuous interpolant U(t) = Psi^(t - t_k)(U_k) + xi_k(t - t_k) on each segment, evaluated
/// at t_k + j tau / m. The sub-horizon map is a single step of size j tau / m.
[[nodiscard]] inline InterpolantRun solve_continuous(const Problem& problem, const OneStepMap& psi,
                                                     const NoiseModel& noise, double tau, int subgrid,
                                                     std::uint64_t seed, std::size_t replicate_index) {
    if (subgrid < 1) {
        throw PreconditionError("solve_continuous: subgrid must be >= 1");
    }
    if (!noise.supports_path()) {
        throw PreconditionError("solve_continuous: noise model '" + noise.name() + "' has no path sampler");
    }
    InterpolantRun out;
    out.subgrid = subgrid;
    RandomisedRun& run = out.base;
    run.tau = tau;
    run.K = step_count(problem.horizon_T, tau);
    run.seed = seed;
    run.integrator = psi.name();
    run.replicate_index = replicate_index;
    run.states.push_back(problem.u0);
    const double radius = problem.field.regularity.admissible_radius;
    for (std::size_t k = 0; k < run.K; ++k) {
        const State& Uk = run.states.back();
        const auto path = noise.draw_path(tau, subgrid, NoiseModel::key(seed, replicate_index, k));
        std::vector<State> segment;
        segment.reserve(static_cast<std::size_t>(subgrid) + 1);
        bool diverged = false;
        for (int j = 0; j <= subgrid; ++j) {
            const double h = (j == subgrid) ? tau : tau * static_cast<double>(j) / static_cast<double>(subgrid);
            State value;
            try {
                value = psi(Uk, h).state;
            } catch (const DivergenceError&) {
                diverged = true;
                break;
            }
            value += path[static_cast<std::size_t>(j)];
            segment.push_back(std::move(value));
        }
        if (diverged) {
            run.diverged_at = k + 1;
            break;
        }
        State next = segment.back();
        run.noise_draws.push_back(NoiseDraw{path.back(), k});
        out.dense_states.push_back(std::move(segment));
        const bool outside = detail::outside_region(next, radius);
        run.states.push_back(std::move(next));
        if (outside) {
            run.diverged_at = k + 1;
            break;
        }
    }
    return out;
}

/// Runs `fn(i)` for i in [0, count) on `threads` workers; each result lands at index i.
template <typename Result, typename Fn>
[[nodiscard]] std::vector<Result> parallel_map(std::size_t count, unsigned threads, Fn&& fn) {
    std::vector<std::optional<Result>> slots(count);
    const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&]() {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                const std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(count);
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
    std::vector<Result> results;
    results.reserve(count);
    for (auto& slot : slots) results.push_back(std::move(*slot));
    return results;
}

struct Ensemble {
    std::vector<RandomisedRun> runs;

    [[nodiscard]] std::size_t diverged_count() const {
        return static_cast<std::size_t>(
            std::count_if(runs.begin(), runs.end(), [](const RandomisedRun& r) { return r.diverged(); }));
    }
};

/// M replicates; replicate i uses substreams (seed, i, k). The output is a function of the
/// arguments only, whatever `threads` is.
[[nodiscard]] inline Ensemble run_ensemble(const Problem& problem, const OneStepMap& psi,
                                           const NoiseModel& noise, double tau, std::size_t reps,
                                           std::uint64_t seed, unsigned threads = 1) {
    if (reps < 1) {
        throw PreconditionError("run_ensemble: reps must be >= 1");
    }
    Ensemble ens;
    ens.runs = parallel_map<RandomisedRun>(
        reps, threads, [&](std::size_t i) { return solve_discrete(problem, psi, noise, tau, seed, i); });
    return ens;
}

[[nodiscard]] inline std::vector<InterpolantRun> run_continuous_ensemble(const Problem& problem,
                                                                         const OneStepMap& psi,
                                                                         const NoiseModel& noise, double tau,
                                                                         int subgrid, std::size_t reps,
                                                                         std::uint64_t seed,
                                                                         unsigned threads = 1) {
    return parallel_map<InterpolantRun>(reps, threads, [&](std::size_t i) {
        return solve_continuous(problem, psi, noise, tau, subgrid, seed, i);
    });
}

struct RunValidation {
    bool ok = true;
    std::string message;
};

/// Re-checks states[0] = u0 and states[k+1] == Psi(states[k]) + xi_k bit-for-bit.
[[nodiscard]] inline RunValidation validate_run(const RandomisedRun& run, const Problem& problem,
                                                const OneStepMap& psi) {
    if (run.states.empty() || run.states.front() != problem.u0) {
        return {false, "states[0] differs from u0"};
    }
    for (std::size_t k = 0; k < run.noise_draws.size(); ++k) {
        const State expected = psi(run.states[k], run.tau).state + run.noise_draws[k].value;
        if (expected != run.states[k + 1]) {
            return {false, fmt::format("recursion identity fails at k = {}", k)};
        }
    }
    return {};
}

/// CSV with columns k, t, U_1..U_d, xi_1..xi_d (xi blank on the last row).
inline void write_run_csv(std::ostream& os, const RandomisedRun& run) {
    const int d = run.states.empty() ? 0 : static_cast<int>(run.states.front().size());
    os << "k,t";
    for (int c = 1; c <= d; ++c) os << ",U_" << c;
    for (int c = 1; c <= d; ++c) os << ",xi_" << c;
    os << '\n';
    for (std::size_t k = 0; k < run.states.size(); ++k) {
        os << k << ',' << fmt::format("{:.17g}", static_cast<double>(k) * run.tau);
        for (int c = 0; c < d; ++c) os << ',' << fmt::format("{:.17g}", run.states[k][c]);
        for (int c = 0; c < d; ++c) {
            os << ',';
            if (k < run.noise_draws.size()) os << fmt::format("{:.17g}", run.noise_draws[k].value[c]);
        }
        os << '\n';
    }
}

[[nodiscard]] inline nlohmann::json run_manifest_json(const RandomisedRun& run) {
    nlohmann::json j;
    j["tau"] = run.tau;
    j["K"] = run.K;
    j["seed"] = run.seed;
    j["integrator"] = run.integrator;
    j["replicate_index"] = run.replicate_index;
    j["diverged_at"] = run.diverged_at ? nlohmann::json(*run.diverged_at) : nlohmann::json(nullptr);
    return j;
}

}  // namespace probint
