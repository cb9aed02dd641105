#pragma once

#include "probint/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>

namespace probint {

/// C_1 = 1 + 2 C_phi + C_phi (2 + C_phi) tau* + C_phi^2 tau*^2.
/// Bounds [(1 + tau)(1 + C_phi tau)^2 - 1] / tau for 0 < tau < tau*.
[[nodiscard]] inline double constant_c1(double C_phi, double tau_star) {
    return 1.0 + 2.0 * C_phi + C_phi * (2.0 + C_phi) * tau_star + C_phi * C_phi * tau_star * tau_star;
}

/// Prefactor of the mean-square uniform bound E[max |e_k|^2] <= C tau^(2 min{p,q}).
[[nodiscard]] inline double constant_thm31(double C_phi, double C_psi, double C_xi, double tau_star,
                                           double T) {
    const double c1 = constant_c1(C_phi, tau_star);
    const double a = 4.0 * (1.0 + T) * C_psi * C_psi;
    const double growth = 1.0 + C_phi * tau_star;
    const double b = 2.0 * T * C_xi * C_xi * (1.0 + 18.0 * (1.0 + tau_star) * growth * growth);
    return std::exp(2.0 * T * c1) * std::max(a, b);
}

/// C_phi(n, tau*) = [(1 + tau* 2^(n-1))^2 (1 + tau* C_phi)^n - 1] / tau*.
[[nodiscard]] inline double constant_odeflow_n(int n, double C_phi, double tau_star) {
    const double a = 1.0 + tau_star * std::ldexp(1.0, n - 1);
    return (a * a * std::pow(1.0 + tau_star * C_phi, n) - 1.0) / tau_star;
}

/// C-bar = 2T max{(4 C_psi)^n, (2 C_xi)^n} exp(T C_phi(n, tau*)).
[[nodiscard]] inline double constant_c_bar(int n, double C_phi, double C_psi, double C_xi, double tau_star,
                                           double T) {
    const double m = std::max(std::pow(4.0 * C_psi, n), std::pow(2.0 * C_xi, n));
    return 2.0 * T * m * std::exp(T * constant_odeflow_n(n, C_phi, tau_star));
}

/// C_2 = (1 + tau') max{1, |U_0|^2 + 2 alpha T/(1 - 2|beta| tau')} exp(T (1 + 2|beta|)/(1 - 2|beta| tau')).
[[nodiscard]] inline double constant_c2(double alpha, double beta, double tau_prime, double U0_norm, double T) {
    const double denom = 1.0 - 2.0 * std::abs(beta) * tau_prime;
    if (!(denom > 0.0)) {
        throw DomainError("constants: 1 - 2|beta| tau' must be positive (beta = " + std::to_string(beta) +
                          ", tau' = " + std::to_string(tau_prime) + ")");
    }
    const double inner = std::max(1.0, U0_norm * U0_norm + 2.0 * alpha * T / denom);
    return (1.0 + tau_prime) * inner * std::exp(T * (1.0 + 2.0 * std::abs(beta)) / denom);
}

[[nodiscard]] inline double constant_c6(int n, double C_phi, double s, double u_inf, double tau_prime) {
    const double m = std::max(std::ldexp(1.0, 2 * n - 1), C_phi * (1.0 + std::pow(u_inf, s)));
    return (std::pow(1.0 + tau_prime * m, 2 * n + 1) - 1.0) / tau_prime;
}

/// C_7 = 2^(n(4+s)) C_phi^(2n) (C*)^(ns).
[[nodiscard]] inline double constant_c7(int n, double C_phi, double s, double c_star) {
    return std::pow(2.0, n * (4.0 + s)) * std::pow(C_phi, 2 * n) * std::pow(c_star, n * s);
}

[[nodiscard]] inline double constant_c8(int n, double C2, double C_xi, double p, double tau_prime, double T,
                                        double u_inf) {
    const double noise = 1.0 + T * C_xi * C_xi * std::pow(tau_prime, 2.0 * p - 1.0);
    return std::ldexp(1.0, 4 * n) *
           (std::pow(u_inf, 4 * n) + std::pow(2.0 * C2, 2 * n) * std::pow(noise, 2 * n));
}

enum class CStarChoice { C1, C2 };

struct LedgerInputs {
    double C_phi = 1.0;
    double C_psi = 1.0;
    double C_xi = 1.0;
    double tau_star = 1.0;
    double tau_prime = 1.0;
    double T = 1.0;
    double p = 1.0;
    int q = 1;
    int n = 1;
    double s = 1.0;
    double alpha = 0.0;
    double beta = 0.0;
    double u_inf = 0.0;
    double U0_norm = 0.0;
    CStarChoice c_star = CStarChoice::C2;
    /// Replaces the computed C_2 (used to force a failing almost-sure check).
    std::optional<double> override_c2;
};

struct ConstantsLedger {
    LedgerInputs inputs;
    double C1 = 0.0;
    double C_thm31 = 0.0;
    double C_odeflow_n = 0.0;
    double C_bar = 0.0;
    double C2 = 0.0;
    double C6 = 0.0;
    double C7 = 0.0;
    double C7_with_C1 = 0.0;
    double C7_with_C2 = 0.0;
    double C8 = 0.0;
    bool has_dissipative_constants = false;

    /// exp(T (C6 + tau^(2n-1) C7)) (C7 T / 2) ((T C_xi^2)^(2ns) + C8) tau^(2n).
    [[nodiscard]] double implicit_euler_bound(double tau) const {
        const auto& in = inputs;
        const int n = in.n;
        const double lead = std::exp(in.T * (C6 + std::pow(tau, 2 * n - 1) * C7));
        const double noise = std::pow(in.T * in.C_xi * in.C_xi, 2.0 * n * in.s);
        return lead * 0.5 * C7 * in.T * (noise + C8) * std::pow(tau, 2 * n);
    }

    /// Bound on E[max |e_k|^m] for non-centred noise, m-th moment.
    [[nodiscard]] double noncentred_bound(int m, double tau) const {
        const auto& in = inputs;
        const double rate = std::min(static_cast<double>(in.q), in.p - 0.5);
        return constant_c_bar(m, in.C_phi, in.C_psi, in.C_xi, in.tau_star, in.T) * std::pow(tau, m * rate);
    }

    /// Bound on E[sup_t |e(t)|^m] for the continuous interpolant.
    [[nodiscard]] double continuous_bound(int m, double tau) const {
        const auto& in = inputs;
        const double rate = std::min(static_cast<double>(in.q), in.p - 0.5);
        const double cbar = constant_c_bar(m, in.C_phi, in.C_psi, in.C_xi, in.tau_star, in.T);
        const double pre = std::pow(3.0, m - 1) *
                           (std::pow(1.0 + in.C_phi * in.tau_star, m) * cbar +
                            std::pow(in.C_psi * in.tau_star, m) + in.T * std::pow(in.C_xi, m));
        return pre * std::pow(tau, m * rate);
    }

    /// E[max |e_k|^2] <= C tau^(2 min{p, q}).
    [[nodiscard]] double centred_bound(double tau) const {
        return C_thm31 * std::pow(tau, 2.0 * std::min(inputs.p, static_cast<double>(inputs.q)));
    }
};

/// Evaluates every constant by direct substitution. The dissipative constants (C2, C6-C8) are
/// computed only when `dissipative` is true.
[[nodiscard]] inline ConstantsLedger constants_ledger(const LedgerInputs& in, bool dissipative = true) {
    if (!(in.tau_star > 0.0 && in.tau_star <= 1.0)) {
        throw DomainError("constants: tau* must lie in (0, 1]");
    }
    ConstantsLedger led;
    led.inputs = in;
    led.C1 = constant_c1(in.C_phi, in.tau_star);
    led.C_thm31 = constant_thm31(in.C_phi, in.C_psi, in.C_xi, in.tau_star, in.T);
    led.C_odeflow_n = constant_odeflow_n(in.n, in.C_phi, in.tau_star);
    led.C_bar = constant_c_bar(in.n, in.C_phi, in.C_psi, in.C_xi, in.tau_star, in.T);
    if (dissipative) {
        led.has_dissipative_constants = true;
        led.C2 = in.override_c2 ? *in.override_c2 : constant_c2(in.alpha, in.beta, in.tau_prime, in.U0_norm, in.T);
        led.C6 = constant_c6(in.n, in.C_phi, in.s, in.u_inf, in.tau_prime);
        led.C7_with_C1 = constant_c7(in.n, in.C_phi, in.s, led.C1);
        led.C7_with_C2 = constant_c7(in.n, in.C_phi, in.s, led.C2);
        led.C7 = in.c_star == CStarChoice::C1 ? led.C7_with_C1 : led.C7_with_C2;
        led.C8 = constant_c8(in.n, led.C2, in.C_xi, in.p, in.tau_prime, in.T, in.u_inf);
    }
    return led;
}

[[nodiscard]] inline nlohmann::json to_json(const ConstantsLedger& led) {
    const auto& in = led.inputs;
    nlohmann::json j;
    j["inputs"] = {{"C_phi", in.C_phi}, {"C_psi", in.C_psi}, {"C_xi_R", in.C_xi},   {"tau_star", in.tau_star},
                   {"tau_prime", in.tau_prime}, {"T", in.T}, {"p", in.p},       {"q", in.q},
                   {"n", in.n},         {"s", in.s},         {"alpha", in.alpha}, {"beta", in.beta},
                   {"u_inf", in.u_inf}, {"U0_norm", in.U0_norm},
                   {"c_star", in.c_star == CStarChoice::C1 ? "C1" : "C2"}};
    if (in.override_c2) j["inputs"]["override_c2"] = *in.override_c2;
    j["C1"] = led.C1;
    j["C_thm31"] = led.C_thm31;
    j["C_odeflow_n"] = led.C_odeflow_n;
    j["C_bar"] = led.C_bar;
    if (led.has_dissipative_constants) {
        j["C2"] = led.C2;
        j["C6"] = led.C6;
        j["C7"] = led.C7;
        j["C7_with_C1"] = led.C7_with_C1;
        j["C7_with_C2"] = led.C7_with_C2;
        j["C8"] = led.C8;
    }
    return j;
}

}  // namespace probint
