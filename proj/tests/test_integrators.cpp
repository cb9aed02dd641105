#include "probint/integrators.hpp"
#include "probint/problems.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace probint;

namespace {

State scalar(double v) { return State::Constant(1, v); }

VectorField linear_field(double a) {
    VectorField f;
    f.dimension = 1;
    f.eval = [a](const State& x) -> State { return a * x; };
    f.jacobian = [a](const State&) -> Matrix { return Matrix::Constant(1, 1, a); };
    return f;
}

VectorField zero_field(int d) {
    VectorField f;
    f.dimension = d;
    f.eval = [d](const State&) -> State { return State::Zero(d); };
    return f;
}

}  // namespace

TEST(Catalog, ShippedOrders) {
    EXPECT_EQ(integrator_spec("euler").order_q, 1);
    EXPECT_EQ(integrator_spec("heun").order_q, 2);
    EXPECT_EQ(integrator_spec("rk4").order_q, 4);
    EXPECT_EQ(integrator_spec("implicit_euler").order_q, 1);
    EXPECT_EQ(integrator_spec("implicit_euler").kind, IntegratorKind::Implicit);
    EXPECT_THROW((void)integrator_spec("leapfrog"), CatalogError);
    EXPECT_EQ(integrator_catalog().size(), 4U);
}

TEST(Explicit, EulerOnDecay) {
    EXPECT_DOUBLE_EQ(explicit_step(integrator_spec("euler"), linear_field(-1), scalar(1), 0.5).state[0], 0.5);
}

TEST(Explicit, HeunOnDecay) {
    // x + tau/2 (-x + -(x - tau x)) = 1 - tau + tau^2/2
    EXPECT_DOUBLE_EQ(explicit_step(integrator_spec("heun"), linear_field(-1), scalar(1), 0.5).state[0], 0.625);
}

TEST(Explicit, Rk4ZeroFieldIsIdentity) {
    State x(3);
    x << 1.5, -2.0, 7.25;
    for (double tau : {0.0, 0.1, 3.0}) {
        EXPECT_EQ(explicit_step(integrator_spec("rk4"), zero_field(3), x, tau).state, x);
    }
}

TEST(Explicit, Rk4OnDecayMatchesExponential) {
    const double got = explicit_step(integrator_spec("rk4"), linear_field(-1), scalar(1), 0.1).state[0];
    EXPECT_LE(std::abs(got - std::exp(-0.1)), 1e-7);
    // RK4 on a linear field is the degree-4 Taylor polynomial.
    const double t = 0.1;
    EXPECT_NEAR(got, 1 - t + t * t / 2 - t * t * t / 6 + t * t * t * t / 24, 4e-16);
}

TEST(Explicit, NonFiniteStageIsDivergence) {
    VectorField f;
    f.dimension = 1;
    f.eval = [](const State& x) -> State { return x.array().exp().exp(); };
    EXPECT_THROW((void)explicit_step(integrator_spec("rk4"), f, scalar(10.0), 1.0), DivergenceError);
}

TEST(Explicit, RejectsImplicitSpec) {
    EXPECT_THROW((void)explicit_step(integrator_spec("implicit_euler"), linear_field(-1), scalar(1), 0.1),
                 PreconditionError);
}

TEST(Implicit, LinearSolve) {
    const auto r = implicit_euler_step(integrator_spec("implicit_euler"), linear_field(-1), scalar(1), 0.5);
    EXPECT_NEAR(r.state[0], 2.0 / 3.0, 1e-14);
}

TEST(Implicit, ZeroFieldIdentity) {
    State x(2);
    x << 3.0, -4.0;
    const auto r = implicit_euler_step(integrator_spec("implicit_euler"), zero_field(2), x, 0.5);
    EXPECT_EQ(r.state, x);
    EXPECT_LE(r.diagnostics.newton_iterations, 1);
}

TEST(Implicit, CubicResidualByBackSubstitution) {
    const Problem pb = builtin_problem("cubic_dissipative");
    const auto r = implicit_euler_step(integrator_spec("implicit_euler"), pb.field, scalar(2.0), 0.1);
    const double U = r.state[0];
    EXPECT_LE(std::abs(U - 2.0 - 0.1 * (U - U * U * U)), 1e-12);
    EXPECT_LE(r.diagnostics.residual_norm, 1e-12);
}

TEST(Implicit, FiniteDifferenceJacobianPath) {
    VectorField f = builtin_problem("lorenz63").field;
    f.jacobian = nullptr;
    State x(3);
    x << 1.0, 2.0, 3.0;
    const auto r = implicit_euler_step(integrator_spec("implicit_euler"), f, x, 0.01);
    EXPECT_LE((r.state - x - 0.01 * f.eval(r.state)).norm(), 1e-10);
}

TEST(Implicit, StepSizeCap) {
    Problem pb = builtin_problem("cubic_dissipative");
    pb.field.regularity.dissipativity->beta = 1.0;  // tau' = 1/2
    const auto spec = integrator_spec("implicit_euler");
    EXPECT_NO_THROW((void)implicit_euler_step(spec, pb.field, scalar(0.5), 0.4));
    try {
        (void)implicit_euler_step(spec, pb.field, scalar(0.5), 0.9);
        FAIL() << "expected StepSizeError";
    } catch (const StepSizeError& e) {
        EXPECT_DOUBLE_EQ(e.cap(), 0.5);
    }
    EXPECT_THROW((void)implicit_euler_step(spec, pb.field, scalar(0.5), 0.5), StepSizeError);
}

TEST(Implicit, NoRealRootIsNonconvergence) {
    VectorField f;
    f.dimension = 1;
    f.eval = [](const State& x) -> State { return (1.0 + x.array().square()).matrix(); };
    f.jacobian = [](const State& x) -> Matrix { return Matrix::Constant(1, 1, 2 * x[0]); };
    // U = 1 + 0.9 (1 + U^2) has negative discriminant.
    try {
        (void)implicit_euler_step(integrator_spec("implicit_euler"), f, scalar(1.0), 0.9);
        FAIL() << "expected NonconvergenceError";
    } catch (const NonconvergenceError& e) {
        EXPECT_GT(e.last_residual(), 0.0);
    }
}

TEST(Implicit, ContinuationKeepsTheBranchThroughX) {
    // U = x + tau (U - U^3) at x = 0.05: roots near 0.0556 and +-1.05; the continued one is the small root.
    const Problem pb = builtin_problem("cubic_dissipative");
    const double tau = 0.1;
    const double U = implicit_euler_step(integrator_spec("implicit_euler"), pb.field, scalar(0.05), tau).state[0];
    EXPECT_LT(std::abs(U - 0.05), 0.01);
}

TEST(Implicit, ZeroStepReturnsInput) {
    const Problem pb = builtin_problem("cubic_dissipative");
    EXPECT_EQ(implicit_euler_step(integrator_spec("implicit_euler"), pb.field, scalar(1.7), 0.0).state[0], 1.7);
}

TEST(Implicit, ContractiveOnDecay) {
    const auto f = linear_field(-1);
    const auto spec = integrator_spec("implicit_euler");
    NormalSource rng(StreamKey{21, 0, 0, 0});
    for (int i = 0; i < 200; ++i) {
        const State x = scalar(5 * rng()), y = scalar(5 * rng());
        const double tau = 0.99 * rng.uniform();
        const double d1 = (implicit_euler_step(spec, f, x, tau).state - implicit_euler_step(spec, f, y, tau).state).norm();
        EXPECT_LE(d1, (x - y).norm() * (1 + 1e-12));
    }
}

TEST(Determinism, BitIdenticalSteps) {
    const Problem pb = builtin_problem("lorenz63");
    for (const auto& name : integrator_catalog()) {
        const auto spec = integrator_spec(name);
        const auto a = step(spec, pb.field, pb.u0, 0.01);
        const auto b = step(spec, pb.field, pb.u0, 0.01);
        EXPECT_EQ(a.state, b.state) << name;
    }
}

TEST(Truncation, EulerOnLinearDecay) {
    const auto probe = local_truncation_probe(integrator_spec("euler"), builtin_problem("linear_decay"), scalar(1),
                                              dyadic_grid(4, 9));
    EXPECT_NEAR(probe.fit.slope, 2.0, 0.1);
}

TEST(Truncation, Rk4OnLinearDecay) {
    const auto probe = local_truncation_probe(integrator_spec("rk4"), builtin_problem("linear_decay"), scalar(1),
                                              dyadic_grid(2, 7));
    EXPECT_NEAR(probe.fit.slope, 5.0, 0.3);
}

TEST(Truncation, Rk4FloorExclusion) {
    const auto probe = local_truncation_probe(integrator_spec("rk4"), builtin_problem("linear_decay"), scalar(1),
                                              dyadic_grid(2, 12));
    EXPECT_FALSE(probe.excluded_taus.empty());
    EXPECT_NEAR(probe.fit.slope, 5.0, 0.3);
}

TEST(Truncation, ImplicitEulerOnCubic) {
    const auto probe = local_truncation_probe(integrator_spec("implicit_euler"), builtin_problem("cubic_dissipative"),
                                              scalar(0.5), dyadic_grid(4, 9));
    EXPECT_NEAR(probe.fit.slope, 2.0, 0.2);
}

TEST(Truncation, EveryIntegratorAtLeastQPlusOne) {
    const Problem pb = builtin_problem("linear_decay");
    for (const auto& name : integrator_catalog()) {
        const auto spec = integrator_spec(name);
        const auto probe = local_truncation_probe(spec, pb, scalar(1), dyadic_grid(2, 7));
        EXPECT_GE(probe.fit.slope, spec.order_q + 1 - 0.3) << name;
    }
}

TEST(Truncation, NeedsFourStepSizes) {
    EXPECT_THROW((void)local_truncation_probe(integrator_spec("euler"), builtin_problem("linear_decay"), scalar(1),
                                              {0.1, 0.05, 0.025}),
                 PreconditionError);
}

TEST(OneStep, ExactFlowWrapper) {
    const Problem pb = builtin_problem("linear_decay");
    const auto psi = OneStepMap::exact_flow(pb);
    EXPECT_EQ(psi.order(), 0);
    EXPECT_DOUBLE_EQ(psi(scalar(2.0), 0.5).state[0], 2.0 * std::exp(-0.5));
    EXPECT_THROW((void)OneStepMap::exact_flow(builtin_problem("lorenz63")), PreconditionError);
}
