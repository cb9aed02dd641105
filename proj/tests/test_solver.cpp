#include "probint/analysis/stats.hpp"
#include "probint/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace probint;

namespace {

NoiseModel make_noise(NoiseKind kind, double p, int d) {
    NoiseParams np;
    np.kind = kind;
    np.p = p;
    return NoiseModel(np, d);
}

Problem zero_field_problem() {
    Problem pb;
    pb.name = "zero";
    pb.field.dimension = 1;
    pb.field.eval = [](const State& x) { return State::Zero(x.size()); };
    pb.field.regularity.admissible_radius = 1e6;
    pb.u0 = State::Constant(1, 0.5);
    pb.horizon_T = 1.0;
    return pb;
}

}  // namespace

TEST(Discrete, ZeroNoiseEqualsDeterministicIteration) {
    for (const auto& name : {"linear_decay", "harmonic", "lorenz63"}) {
        const Problem pb = builtin_problem(name);
        for (const auto& integ : {"euler", "heun", "rk4"}) {
            const auto psi = OneStepMap::from_spec(integrator_spec(integ), pb);
            const NoiseModel zero = make_noise(NoiseKind::Zero, 1.0, pb.dimension());
            const double tau = 1.0 / 64;
            const auto run = solve_discrete(pb, psi, zero, tau, 7, 0);
            ASSERT_FALSE(run.diverged());
            State x = pb.u0;
            ASSERT_EQ(run.states.size(), 65U);
            for (std::size_t k = 0; k < run.states.size(); ++k) {
                EXPECT_EQ(run.states[k], x) << name << ' ' << integ << " k=" << k;
                x = psi(x, tau).state;
            }
        }
    }
}

TEST(Discrete, ZeroFieldTelescopes) {
    const Problem pb = zero_field_problem();
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 1);
    const auto run = solve_discrete(pb, psi, noise, 0.125, 3, 2);
    double sum = pb.u0[0];
    for (std::size_t k = 0; k < run.noise_draws.size(); ++k) {
        sum += run.noise_draws[k].value[0];
        EXPECT_NEAR(run.states[k + 1][0], sum, 1e-15);
    }
}

TEST(Discrete, RecordsNoiseAndMetadata) {
    const Problem pb = builtin_problem("linear_decay");
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 1);
    const auto run = solve_discrete(pb, integrator_spec("heun"), noise, 0.25, 11, 4);
    EXPECT_EQ(run.K, 4U);
    EXPECT_EQ(run.states.size(), 5U);
    EXPECT_EQ(run.noise_draws.size(), 4U);
    EXPECT_EQ(run.integrator, "heun");
    EXPECT_EQ(run.seed, 11U);
    EXPECT_EQ(run.replicate_index, 4U);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(run.noise_draws[k].value, noise.draw(0.25, NoiseModel::key(11, 4, k)).value);
    }
    EXPECT_TRUE(validate_run(run, pb, OneStepMap::from_spec(integrator_spec("heun"), pb)).ok);
}

TEST(Discrete, MeshMismatchThrows) {
    const Problem pb = builtin_problem("linear_decay");
    const NoiseModel noise = make_noise(NoiseKind::Zero, 1.0, 1);
    EXPECT_THROW((void)solve_discrete(pb, integrator_spec("euler"), noise, 0.3, 1, 0), MeshError);
}

TEST(Discrete, DivergenceIsRecorded) {
    const Problem pb = builtin_problem("cubic_dissipative", {.u0 = State::Constant(1, 10.0)});
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel zero = make_noise(NoiseKind::Zero, 1.0, 1);
    const auto run = solve_discrete(pb, psi, zero, 0.5, 1, 0);
    EXPECT_EQ(run.diverged_at, std::optional<std::size_t>(1));
    ASSERT_TRUE(run.diverged());
    EXPECT_EQ(run.states.size(), *run.diverged_at + 1);
    EXPECT_LT(run.states.size(), run.K + 1);
}

TEST(Validation, DetectsTampering) {
    const Problem pb = builtin_problem("harmonic");
    const auto psi = OneStepMap::from_spec(integrator_spec("rk4"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.5, 2);
    auto run = solve_discrete(pb, psi, noise, 0.0625, 5, 0);
    EXPECT_TRUE(validate_run(run, pb, psi).ok);
    run.states[3][1] += 1e-12;
    const auto v = validate_run(run, pb, psi);
    EXPECT_FALSE(v.ok);
    EXPECT_NE(v.message.find("k = 2"), std::string::npos);
}

TEST(Continuous, SingleSubstepMatchesDiscrete) {
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel noise = make_noise(NoiseKind::IbmPath, 1.0, 1);
    const auto cont = solve_continuous(pb, psi, noise, 0.125, 1, 9, 3);
    const auto disc = solve_discrete(pb, psi, noise, 0.125, 9, 3);
    ASSERT_EQ(cont.base.states.size(), disc.states.size());
    for (std::size_t k = 0; k < disc.states.size(); ++k) EXPECT_EQ(cont.base.states[k], disc.states[k]);
}

TEST(Continuous, ZeroNoiseExactFlowIsExact) {
    const Problem pb = builtin_problem("harmonic");
    const auto psi = OneStepMap::exact_flow(pb);
    const NoiseModel zero = make_noise(NoiseKind::Zero, 1.0, 2);
    const double tau = 0.125;
    const int m = 8;
    const auto run = solve_continuous(pb, psi, zero, tau, m, 1, 0);
    ASSERT_EQ(run.dense_states.size(), 8U);
    for (std::size_t k = 0; k < run.dense_states.size(); ++k) {
        for (int j = 0; j <= m; ++j) {
            const double t = static_cast<double>(k) * tau + j * tau / m;
            EXPECT_LT((run.dense_states[k][static_cast<std::size_t>(j)] - pb.analytic_flow(t, pb.u0)).norm(), 1e-12);
        }
    }
}

TEST(Continuous, SegmentsAreConsistent) {
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::from_spec(integrator_spec("rk4"), pb);
    const NoiseModel noise = make_noise(NoiseKind::IbmPath, 2.0, 1);
    const auto run = solve_continuous(pb, psi, noise, 0.0625, 16, 2, 0);
    for (std::size_t k = 0; k < run.dense_states.size(); ++k) {
        EXPECT_EQ(run.dense_states[k].front(), run.base.states[k]);
        EXPECT_EQ(run.dense_states[k].back(), run.base.states[k + 1]);
    }
}

TEST(Continuous, RequiresPathSampler) {
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 1);
    EXPECT_THROW((void)solve_continuous(pb, psi, noise, 0.125, 4, 1, 0), PreconditionError);
    const NoiseModel ibm = make_noise(NoiseKind::IbmPath, 1.0, 1);
    EXPECT_THROW((void)solve_continuous(pb, psi, ibm, 0.125, 0, 1, 0), PreconditionError);
}

TEST(Ensemble, SingleReplicateIsSolveDiscrete) {
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 1);
    const auto ens = run_ensemble(pb, psi, noise, 0.125, 1, 13);
    ASSERT_EQ(ens.runs.size(), 1U);
    EXPECT_EQ(ens.runs[0].states, solve_discrete(pb, psi, noise, 0.125, 13, 0).states);
}

TEST(Ensemble, ThreadCountInvariantOutput) {
    const Problem pb = builtin_problem("lorenz63");
    const auto psi = OneStepMap::from_spec(integrator_spec("rk4"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 3);
    auto serialise = [&](unsigned threads) {
        const auto ens = run_ensemble(pb, psi, noise, 1.0 / 128, 40, 21, threads);
        std::ostringstream os;
        for (const auto& r : ens.runs) write_run_csv(os, r);
        return os.str();
    };
    const std::string one = serialise(1);
    EXPECT_EQ(one, serialise(4));
    EXPECT_EQ(one, serialise(7));
}

TEST(Ensemble, ReplicatesUseDisjointStreams) {
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 1);
    const auto ens = run_ensemble(pb, psi, noise, 0.0625, 200, 1, 2);
    std::vector<double> firsts;
    for (const auto& r : ens.runs) firsts.push_back(r.noise_draws[0].value[0]);
    std::sort(firsts.begin(), firsts.end());
    EXPECT_EQ(std::adjacent_find(firsts.begin(), firsts.end()), firsts.end());
}

TEST(Ensemble, ZeroNoiseHasZeroVariance) {
    const Problem pb = builtin_problem("harmonic");
    const auto psi = OneStepMap::from_spec(integrator_spec("heun"), pb);
    const NoiseModel zero = make_noise(NoiseKind::Zero, 1.0, 2);
    const auto ens = run_ensemble(pb, psi, zero, 0.0625, 50, 3, 3);
    for (const auto& r : ens.runs) EXPECT_EQ(r.states.back(), ens.runs[0].states.back());
}

TEST(Ensemble, CentredNoiseMeanMatchesLinearPropagation) {
    // Linear Euler map: E U_K = (1 - lambda tau)^K u0 for centred noise.
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::from_spec(integrator_spec("euler"), pb);
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 0.5, 1);
    const double tau = 0.125;
    const auto ens = run_ensemble(pb, psi, noise, tau, 10000, 17, 4);
    std::vector<double> finals;
    for (const auto& r : ens.runs) finals.push_back(r.states.back()[0]);
    const auto est = estimate_mean(finals);
    const double expected = std::pow(1.0 - tau, 8) * pb.u0[0];
    EXPECT_LT(std::abs(est.mean - expected), 4 * est.std_error);
    EXPECT_EQ(ens.diverged_count(), 0U);
}

TEST(ParallelMap, PropagatesExceptions) {
    EXPECT_THROW((void)parallel_map<int>(10, 3,
                                         [](std::size_t i) -> int {
                                             if (i == 6) throw DomainError("boom");
                                             return static_cast<int>(i);
                                         }),
                 DomainError);
    const auto v = parallel_map<int>(5, 8, [](std::size_t i) { return static_cast<int>(i * i); });
    EXPECT_EQ(v, (std::vector<int>{0, 1, 4, 9, 16}));
}

TEST(Output, CsvLayout) {
    const Problem pb = builtin_problem("harmonic");
    const NoiseModel noise = make_noise(NoiseKind::GaussEndpoint, 1.0, 2);
    const auto run = solve_discrete(pb, integrator_spec("euler"), noise, 0.5, 1, 0);
    std::ostringstream os;
    write_run_csv(os, run);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "k,t,U_1,U_2,xi_1,xi_2");
    int rows = 0;
    std::string last;
    while (std::getline(is, line)) {
        ++rows;
        last = line;
    }
    EXPECT_EQ(rows, 3);
    EXPECT_EQ(last.substr(last.size() - 2), ",,");
    const auto j = run_manifest_json(run);
    EXPECT_EQ(j["K"], 2);
    EXPECT_TRUE(j["diverged_at"].is_null());
}
