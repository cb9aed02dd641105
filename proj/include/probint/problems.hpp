#pragma once

#include "probint/core.hpp"
#include "probint/rng.hpp"

#include <fmt/format.h>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace probint {

struct PolyGrowth {
    double C_phi = 1.0;  // >= 1
    double s = 1.0;      // >= 1
};

/// <f(v), v> <= alpha + beta |v|^2.
struct Dissipativity {
    double alpha = 0.0;
    double beta = 0.0;
};

struct RegularityMeta {
    std::optional<double> lipschitz_L;
    std::optional<double> one_sided_mu;
    std::optional<PolyGrowth> poly_growth;
    std::optional<Dissipativity> dissipativity;
    double tau_star = 1.0;
    /// States with norm beyond this are treated as divergence.
    double admissible_radius = 100.0;
    /// Ball on which the dissipativity pair was certified by sampling (0 = proved globally).
    double certified_radius = 0.0;

    /// Step-size cap tau' = min{tau*, 1/(2|beta|)} for implicit Euler (tau* alone when beta = 0).
    [[nodiscard]] double implicit_cap() const {
        if (dissipativity && dissipativity->beta != 0.0) {
            return std::min(tau_star, 1.0 / (2.0 * std::abs(dissipativity->beta)));
        }
        return tau_star;
    }
};

struct VectorField {
    int dimension = 1;
    std::function<State(const State&)> eval;
    std::function<Matrix(const State&)> jacobian;  // empty when unavailable
    RegularityMeta regularity;

    [[nodiscard]] bool has_jacobian() const { return static_cast<bool>(jacobian); }
};

using FlowMap = std::function<State(double t, const State& x)>;

struct Problem {
    std::string name;
    VectorField field;
    State u0;
    double horizon_T = 1.0;
    FlowMap analytic_flow;  // empty when unavailable

    [[nodiscard]] int dimension() const { return field.dimension; }
    [[nodiscard]] bool has_analytic_flow() const { return static_cast<bool>(analytic_flow); }
};

/// Tunable knobs of the catalog problems; unset entries take the documented defaults.
struct ProblemOptions {
    std::optional<double> lambda;  // linear_decay rate, default 1
    std::optional<double> omega;   // harmonic angular frequency, default 1
    std::optional<State> u0;
    std::optional<double> horizon_T;
};

[[nodiscard]] inline const std::vector<std::string>& problem_catalog() {
    static const std::vector<std::string> keys{"linear_decay", "harmonic", "cubic_dissipative",
                                               "lorenz63"};
    return keys;
}

[[nodiscard]] inline std::string problem_description(const std::string& key) {
    if (key == "linear_decay") return "u' = -lambda u (d=1, analytic flow)";
    if (key == "harmonic") return "u' = omega J u, 2-d rotation (analytic flow)";
    if (key == "cubic_dissipative") return "u' = u - u^3 (d=1, s=2, alpha=1/4, beta=0, analytic flow)";
    if (key == "lorenz63") return "Lorenz-63, sigma=10 rho=28 b=8/3 (d=3, RK4 reference)";
    throw CatalogError("catalog: unknown problem '" + key + "'");
}

struct ProbeResult {
    bool pass = true;
    /// max over samples of <f(v),v> - (alpha + beta|v|^2); <= 0 means satisfied.
    double worst_margin = 0.0;
    State worst_point;
};

/// Samples `samples` points uniformly in the ball of radius `radius` (plus the origin) and
/// checks <f(v), v> <= alpha + beta |v|^2 at each one.
[[nodiscard]] inline ProbeResult dissipativity_probe(const VectorField& field, double alpha,
                                                     double beta, std::size_t samples,
                                                     double radius, std::uint64_t rng_seed) {
    if (samples < 1) {
        throw PreconditionError("dissipativity_probe: samples must be >= 1");
    }
    const int d = field.dimension;
    NormalSource normals(StreamKey{rng_seed, 0, 0, 0x0D155});
    ProbeResult result;
    result.worst_margin = -std::numeric_limits<double>::infinity();
    State v(d);
    for (std::size_t i = 0; i < samples; ++i) {
        if (i == 0) {
            v.setZero();
        } else {
            for (int c = 0; c < d; ++c) v[c] = normals();
            const double r = radius * std::pow(normals.uniform(), 1.0 / d);
            v *= r / v.norm();
        }
        const State fv = field.eval(v);
        if (!fv.allFinite()) {
            throw DivergenceError(fmt::format("dissipativity_probe: non-finite field value at sample "
                                              "{} (|v| = {:.6g})",
                                              i, v.norm()),
                                  i);
        }
        const double margin = fv.dot(v) - (alpha + beta * v.squaredNorm());
        if (margin > result.worst_margin) {
            result.worst_margin = margin;
            result.worst_point = v;
        }
    }
    result.pass = result.worst_margin <= 0.0;
    return result;
}

namespace detail {

inline Problem make_linear_decay(const ProblemOptions& opt) {
    const double lambda = opt.lambda.value_or(1.0);
    Problem pb;
    pb.name = "linear_decay";
    pb.field.dimension = 1;
    pb.field.eval = [lambda](const State& x) -> State { return -lambda * x; };
    pb.field.jacobian = [lambda](const State&) -> Matrix { return Matrix::Constant(1, 1, -lambda); };
    auto& reg = pb.field.regularity;
    reg.lipschitz_L = std::abs(lambda);
    reg.one_sided_mu = -lambda;
    reg.poly_growth = PolyGrowth{std::max(1.0, std::abs(lambda)), 1.0};
    reg.dissipativity = Dissipativity{0.0, -lambda};
    pb.u0 = State::Ones(1);
    pb.analytic_flow = [lambda](double t, const State& x) -> State { return std::exp(-lambda * t) * x; };
    return pb;
}

inline Problem make_harmonic(const ProblemOptions& opt) {
    const double omega = opt.omega.value_or(1.0);
    Problem pb;
    pb.name = "harmonic";
    pb.field.dimension = 2;
    pb.field.eval = [omega](const State& x) -> State {
        State out(2);
        out << omega * x[1], -omega * x[0];
        return out;
    };
    pb.field.jacobian = [omega](const State&) -> Matrix {
        Matrix J(2, 2);
        J << 0.0, omega, -omega, 0.0;
        return J;
    };
    auto& reg = pb.field.regularity;
    reg.lipschitz_L = std::abs(omega);
    reg.one_sided_mu = 0.0;
    reg.poly_growth = PolyGrowth{std::max(1.0, std::abs(omega)), 1.0};
    reg.dissipativity = Dissipativity{0.0, 0.0};
    pb.u0 = State(2);
    pb.u0 << 1.0, 0.0;
    pb.analytic_flow = [omega](double t, const State& x) -> State {
        const double c = std::cos(omega * t);
        const double s = std::sin(omega * t);
        State out(2);
        out << c * x[0] + s * x[1], -s * x[0] + c * x[1];
        return out;
    };
    return pb;
}

inline Problem make_cubic(const ProblemOptions&) {
    Problem pb;
    pb.name = "cubic_dissipative";
    pb.field.dimension = 1;
    pb.field.eval = [](const State& x) -> State { return x - x.cwiseProduct(x).cwiseProduct(x); };
    pb.field.jacobian = [](const State& x) -> Matrix {
        return Matrix::Constant(1, 1, 1.0 - 3.0 * x[0] * x[0]);
    };
    auto& reg = pb.field.regularity;
    reg.one_sided_mu = 1.0;
    // |f(a)-f(b)| = |1 - (a^2+ab+b^2)| |a-b| <= 1.5 (1 + a^2 + b^2) |a-b|
    reg.poly_growth = PolyGrowth{1.5, 2.0};
    reg.dissipativity = Dissipativity{0.25, 0.0};
    pb.u0 = State::Constant(1, 0.5);
    pb.analytic_flow = [](double t, const State& x) -> State {
        const double a = x[0];
        const double growth = std::expm1(2.0 * t);
        return State::Constant(1, a * std::exp(t) / std::sqrt(1.0 + a * a * growth));
    };
    return pb;
}

inline Problem make_lorenz(const ProblemOptions&) {
    static constexpr double sigma = 10.0;
    static constexpr double rho = 28.0;
    static constexpr double b = 8.0 / 3.0;
    Problem pb;
    pb.name = "lorenz63";
    pb.field.dimension = 3;
    pb.field.eval = [](const State& v) -> State {
        State out(3);
        out << sigma * (v[1] - v[0]), v[0] * (rho - v[2]) - v[1], v[0] * v[1] - b * v[2];
        return out;
    };
    pb.field.jacobian = [](const State& v) -> Matrix {
        Matrix J(3, 3);
        J << -sigma, sigma, 0.0, rho - v[2], -1.0, -v[0], v[1], v[0], -b;
        return J;
    };
    auto& reg = pb.field.regularity;
    // ||J(v)||_F <= ||J(0)||_F + sqrt(2)|v|, so s = 1 and C_phi = ||J(0)||_F suffices.
    reg.poly_growth = PolyGrowth{31.6, 1.0};
    // <f(v),v> = -sigma x^2 - y^2 - b z^2 + (sigma+rho) xy: a quadratic form whose largest
    // eigenvalue bounds beta with alpha = 0. Rounded up, then certified by the probe.
    const double tr = -(sigma + 1.0);
    const double det = sigma - 0.25 * (sigma + rho) * (sigma + rho);
    const double lam = 0.5 * (tr + std::sqrt(tr * tr - 4.0 * det));
    reg.dissipativity = Dissipativity{0.0, std::ceil(lam * 1000.0) / 1000.0};
    reg.certified_radius = 100.0;
    reg.admissible_radius = 1000.0;
    pb.u0 = State::Ones(3);
    return pb;
}

}  // namespace detail

[[nodiscard]] inline Problem builtin_problem(const std::string& name, const ProblemOptions& opt = {}) {
    Problem pb;
    if (name == "linear_decay") {
        pb = detail::make_linear_decay(opt);
    } else if (name == "harmonic") {
        pb = detail::make_harmonic(opt);
    } else if (name == "cubic_dissipative") {
        pb = detail::make_cubic(opt);
    } else if (name == "lorenz63") {
        pb = detail::make_lorenz(opt);
    } else {
        throw CatalogError("catalog: unknown problem '" + name + "'");
    }
    if (opt.u0) {
        if (opt.u0->size() != pb.field.dimension) {
            throw CatalogError(fmt::format("catalog: u0 for '{}' must have {} components", name,
                                           pb.field.dimension));
        }
        pb.u0 = *opt.u0;
    }
    if (opt.horizon_T) {
        pb.horizon_T = *opt.horizon_T;
    }
    return pb;
}

/// One classical RK4 step of size h.
[[nodiscard]] inline State rk4_substep(const VectorField& field, const State& x, double h) {
    const State k1 = field.eval(x);
    const State k2 = field.eval(x + 0.5 * h * k1);
    const State k3 = field.eval(x + 0.5 * h * k2);
    const State k4 = field.eval(x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Phi^t(x): analytic flow when available, else `refinement` RK4 substeps.
[[nodiscard]] inline State flow_map(const Problem& problem, double t, const State& x,
                                    int refinement = 100) {
    if (problem.has_analytic_flow()) {
        return problem.analytic_flow(t, x);
    }
    State y = x;
    const double h = t / refinement;
    for (int i = 0; i < refinement; ++i) {
        y = rk4_substep(problem.field, y, h);
    }
    return y;
}

/// Exact (or RK4-refined) solution on the mesh t_k = k tau, k = 0..K.
[[nodiscard]] inline Trajectory reference_trajectory(const Problem& problem, double mesh_tau,
                                                     int refinement = 100) {
    if (refinement < 1) {
        throw PreconditionError("reference_trajectory: refinement must be >= 1");
    }
    const std::size_t K = step_count(problem.horizon_T, mesh_tau);
    Trajectory traj;
    traj.reserve(K + 1);
    traj.push_back(problem.u0);
    for (std::size_t k = 1; k <= K; ++k) {
        State next = problem.has_analytic_flow()
                         ? problem.analytic_flow(static_cast<double>(k) * mesh_tau, problem.u0)
                         : flow_map(problem, mesh_tau, traj.back(), refinement);
        if (!next.allFinite()) {
            throw DivergenceError(fmt::format("reference_trajectory: non-finite state at k = {}", k), k);
        }
        traj.push_back(std::move(next));
    }
    return traj;
}

[[nodiscard]] inline double max_norm(const Trajectory& traj) {
    double m = 0.0;
    for (const auto& x : traj) m = std::max(m, x.norm());
    return m;
}

/// CSV with columns k, t, u_1..u_d.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double tau) {
    const int d = traj.empty() ? 0 : static_cast<int>(traj.front().size());
    os << "k,t";
    for (int c = 1; c <= d; ++c) os << ",u_" << c;
    os << '\n';
    for (std::size_t k = 0; k < traj.size(); ++k) {
        os << k << ',' << fmt::format("{:.17g}", static_cast<double>(k) * tau);
        for (int c = 0; c < d; ++c) os << ',' << fmt::format("{:.17g}", traj[k][c]);
        os << '\n';
    }
}

}  // namespace probint
