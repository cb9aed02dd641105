#pragma once

#include "probint/analysis/fit.hpp"
#include "probint/core.hpp"
#include "probint/problems.hpp"

#include <fmt/format.h>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace probint {

enum class IntegratorKind { Explicit, Implicit };

struct ImplicitOptions {
    double newton_tol = 1e-12;
    int max_newton_iters = 50;
    bool fixed_point_fallback = true;
};

struct IntegratorSpec {
    std::string name;
    int order_q = 1;
    IntegratorKind kind = IntegratorKind::Explicit;
    ImplicitOptions implicit_options;
};

struct StepDiagnostics {
    int newton_iterations = 0;
    double residual_norm = 0.0;
};

struct StepResult {
    State state;
    StepDiagnostics diagnostics;
};

[[nodiscard]] inline const std::vector<std::string>& integrator_catalog() {
    static const std::vector<std::string> keys{"euler", "heun", "rk4", "implicit_euler"};
    return keys;
}

[[nodiscard]] inline IntegratorSpec integrator_spec(const std::string& name,
                                                    const ImplicitOptions& implicit = {}) {
    if (name == "euler") return {name, 1, IntegratorKind::Explicit, implicit};
    if (name == "heun") return {name, 2, IntegratorKind::Explicit, implicit};
    if (name == "rk4") return {name, 4, IntegratorKind::Explicit, implicit};
    if (name == "implicit_euler") return {name, 1, IntegratorKind::Implicit, implicit};
    throw CatalogError("catalog: unknown integrator '" + name + "'");
}

namespace detail {

inline void require_finite(const State& x, const char* stage) {
    if (!x.allFinite()) {
        throw DivergenceError(fmt::format("explicit_step: non-finite value at stage {}", stage), 0);
    }
}

}  // namespace detail

[[nodiscard]] inline StepResult explicit_step(const IntegratorSpec& spec, const VectorField& field,
                                              const State& x, double tau) {
    if (spec.kind != IntegratorKind::Explicit) {
        throw PreconditionError("explicit_step: '" + spec.name + "' is not explicit");
    }
    if (tau < 0.0) {
        throw PreconditionError("explicit_step: tau must be nonnegative");
    }
    StepResult out;
    if (spec.name == "euler") {
        const State k1 = field.eval(x);
        detail::require_finite(k1, "k1");
        out.state = x + tau * k1;
    } else if (spec.name == "heun") {
        const State k1 = field.eval(x);
        detail::require_finite(k1, "k1");
        const State k2 = field.eval(x + tau * k1);
        detail::require_finite(k2, "k2");
        out.state = x + (0.5 * tau) * (k1 + k2);
    } else if (spec.name == "rk4") {
        const State k1 = field.eval(x);
        detail::require_finite(k1, "k1");
        const State k2 = field.eval(x + 0.5 * tau * k1);
        detail::require_finite(k2, "k2");
        const State k3 = field.eval(x + 0.5 * tau * k2);
        detail::require_finite(k3, "k3");
        const State k4 = field.eval(x + tau * k3);
        detail::require_finite(k4, "k4");
        out.state = x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    } else {
        throw CatalogError("explicit_step: unknown explicit integrator '" + spec.name + "'");
    }
    detail::require_finite(out.state, "update");
    return out;
}

/// Central/forward difference Jacobian with step 1e-7 (1 + |x|).
[[nodiscard]] inline Matrix finite_difference_jacobian(const VectorField& field, const State& x) {
    const int d = field.dimension;
    const double h = 1e-7 * (1.0 + x.norm());
    Matrix J(d, d);
    State xp = x;
    State xm = x;
    for (int c = 0; c < d; ++c) {
        xp[c] = x[c] + h;
        xm[c] = x[c] - h;
        J.col(c) = (field.eval(xp) - field.eval(xm)) / (2.0 * h);
        xp[c] = x[c];
        xm[c] = x[c];
    }
    return J;
}

/// Solves U = x + tau f(U). Newton from the explicit-Euler predictor, damped fixed-point
/// iteration on stagnation. The accepted root is the one continued from U = x at tau = 0.
[[nodiscard]] inline StepResult implicit_euler_step(const IntegratorSpec& spec, const VectorField& field,
                                                    const State& x, double tau) {
    if (spec.kind != IntegratorKind::Implicit) {
        throw PreconditionError("implicit_euler_step: '" + spec.name + "' is not implicit");
    }
    const double cap = field.regularity.implicit_cap();
    if (tau >= cap) {
        throw StepSizeError(fmt::format("implicit_euler_step: tau = {:.6g} must be below the cap "
                                        "tau' = min{{tau*, 1/(2|beta|)}} = {:.6g}",
                                        tau, cap),
                            cap);
    }
    if (tau < 0.0) {
        throw PreconditionError("implicit_euler_step: tau must be nonnegative");
    }
    StepResult out;
    if (tau == 0.0) {
        out.state = x;
        return out;
    }
    const auto& opt = spec.implicit_options;
    const int d = field.dimension;
    const Matrix I = Matrix::Identity(d, d);
    auto residual = [&](const State& U) -> State { return U - x - tau * field.eval(U); };

    // Newton at step size h from `guess`; nullopt when it stalls or blows up.
    auto newton = [&](const State& guess, double h, int& iters, double& res_norm) -> std::optional<State> {
        State U = guess;
        State r = U - x - h * field.eval(U);
        res_norm = r.norm();
        for (int it = 0; it < opt.max_newton_iters && res_norm > opt.newton_tol; ++it) {
            const Matrix J = field.has_jacobian() ? field.jacobian(U) : finite_difference_jacobian(field, U);
            const State delta = (I - h * J).partialPivLu().solve(r);
            if (!delta.allFinite()) return std::nullopt;
            U -= delta;
            r = U - x - h * field.eval(U);
            const double next = r.norm();
            ++iters;
            if (!std::isfinite(next)) return std::nullopt;
            if (next > 1e3 * std::max(res_norm, 1e-300) && it > 2) return std::nullopt;
            res_norm = next;
        }
        if (res_norm <= opt.newton_tol) return U;
        return std::nullopt;
    };

    int iters = 0;
    double res_norm = 0.0;
    const State predictor = x + tau * field.eval(x);
    State start = predictor.allFinite() ? predictor : x;
    if (auto root = newton(start, tau, iters, res_norm)) {
        out.state = *root;
        out.diagnostics = {iters, res_norm};
        return out;
    }

    // continuation in the step size, h = j tau / 256, keeping the branch through U = x at h = 0
    constexpr int kLevels = 8;
    State U = x;
    bool ok = true;
    for (int j = 1; j <= (1 << kLevels) && ok; ++j) {
        const double h = tau * static_cast<double>(j) / static_cast<double>(1 << kLevels);
        auto root = newton(U, h, iters, res_norm);
        if (root) {
            U = *root;
        } else {
            ok = false;
        }
    }
    if (ok) {
        out.state = U;
        out.diagnostics = {iters, res_norm};
        return out;
    }

    if (opt.fixed_point_fallback) {
        U = x;
        double damping = 0.5;
        State r = residual(U);
        res_norm = r.norm();
        for (int it = 0; it < 100 * opt.max_newton_iters && res_norm > opt.newton_tol; ++it) {
            const State candidate = (1.0 - damping) * U + damping * (x + tau * field.eval(U));
            const State rc = residual(candidate);
            if (!rc.allFinite() || rc.norm() > res_norm) {
                damping *= 0.5;
                if (damping < 1e-8) break;
                continue;
            }
            U = candidate;
            res_norm = rc.norm();
            ++iters;
        }
        if (res_norm <= opt.newton_tol) {
            out.state = U;
            out.diagnostics = {iters, res_norm};
            return out;
        }
    }
    throw NonconvergenceError(
        fmt::format("implicit_euler_step: no convergence within {} Newton iterations (residual {:.3e})",
                    opt.max_newton_iters, res_norm),
        res_norm);
}

/// Psi^tau(x) for any shipped integrator.
[[nodiscard]] inline StepResult step(const IntegratorSpec& spec, const VectorField& field,
                                     const State& x, double tau) {
    return spec.kind == IntegratorKind::Implicit ? implicit_euler_step(spec, field, x, tau)
                                                 : explicit_step(spec, field, x, tau);
}

/// A one-step map bound to a problem. Besides the shipped integrators it can wrap the
/// problem's own flow (Psi = Phi), which has no discretisation error.
class OneStepMap {
public:
    using Fn = std::function<StepResult(const State&, double)>;

    OneStepMap(std::string name, int order, Fn fn)
        : name_(std::move(name)), order_(order), fn_(std::move(fn)) {}

    static OneStepMap from_spec(const IntegratorSpec& spec, const Problem& problem) {
        const VectorField field = problem.field;
        return OneStepMap(spec.name, spec.order_q,
                          [spec, field](const State& x, double tau) { return step(spec, field, x, tau); });
    }

    static OneStepMap exact_flow(const Problem& problem) {
        if (!problem.has_analytic_flow()) {
            throw PreconditionError("exact_flow: problem '" + problem.name + "' has no analytic flow");
        }
        FlowMap flow = problem.analytic_flow;
        return OneStepMap("exact_flow", 0, [flow](const State& x, double tau) {
            return StepResult{tau == 0.0 ? x : flow(tau, x), {}};
        });
    }

    [[nodiscard]] StepResult operator()(const State& x, double tau) const { return fn_(x, tau); }
    [[nodiscard]] const std::string& name() const { return name_; }
    /// Global order q; 0 for the exact flow.
    [[nodiscard]] int order() const { return order_; }

private:
    std::string name_;
    int order_;
    Fn fn_;
};

struct TruncationProbe {
    FitResult fit;
    std::vector<double> taus;
    std::vector<double> errors;
    std::vector<double> excluded_taus;  // below the precision floor
};

/// Fits log |Psi^tau(x) - Phi^tau(x)| against log tau. Expected slope q + 1.
[[nodiscard]] inline TruncationProbe local_truncation_probe(const IntegratorSpec& spec,
                                                            const Problem& problem, const State& x,
                                                            const std::vector<double>& taus,
                                                            double precision_floor = 1e-13) {
    if (taus.size() < 4) {
        throw PreconditionError("local_truncation_probe: need at least 4 step sizes");
    }
    TruncationProbe probe;
    for (double tau : taus) {
        const State psi = step(spec, problem.field, x, tau).state;
        const State phi = flow_map(problem, tau, x, 1000);
        const double err = (psi - phi).norm();
        if (err < precision_floor) {
            probe.excluded_taus.push_back(tau);
            continue;
        }
        probe.taus.push_back(tau);
        probe.errors.push_back(err);
    }
    probe.fit = fit_order(probe.taus, probe.errors);
    return probe;
}

}  // namespace probint
