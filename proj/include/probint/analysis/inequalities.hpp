#pragma once

#include "probint/core.hpp"
#include "probint/rng.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace probint::inequalities {

/// Right-hand side of Young's inequality ab <= (delta/r) a^r + b^(r*) / (r* delta^(r*/r)).
[[nodiscard]] inline double young(double a, double b, double delta, double r) {
    if (!(delta > 0.0)) throw DomainError("young: delta must be positive");
    if (!(r > 1.0)) throw DomainError("young: r must exceed 1");
    if (a < 0.0 || b < 0.0) throw DomainError("young: a, b must be nonnegative");
    const double r_star = r / (r - 1.0);
    return delta / r * std::pow(a, r) + std::pow(b, r_star) / (r_star * std::pow(delta, r_star / r));
}

/// |x - y|^2 <= (1 + delta)|x|^2 + (1 + 1/delta)|y|^2, right-hand side.
[[nodiscard]] inline double young_squared_difference(double x_norm, double y_norm, double delta) {
    if (!(delta > 0.0)) throw DomainError("young_squared_difference: delta must be positive");
    return (1.0 + delta) * x_norm * x_norm + (1.0 + 1.0 / delta) * y_norm * y_norm;
}

/// (x + y)^n <= x^n (1 + delta 2^(n-1)) + y^n (1 + (2/delta)^(n-1)), right-hand side.
/// Valid for 0 < delta <= 1; for n >= 3 it fails for some inputs once delta > 1.
[[nodiscard]] inline double peter_paul(double x, double y, int n, double delta) {
    if (!(delta > 0.0 && delta <= 1.0)) throw DomainError("peter_paul: delta must lie in (0, 1]");
    if (n < 1) throw DomainError("peter_paul: n must be >= 1");
    if (x < 0.0 || y < 0.0) throw DomainError("peter_paul: x, y must be nonnegative");
    return std::pow(x, n) * (1.0 + delta * std::ldexp(1.0, n - 1)) +
           std::pow(y, n) * (1.0 + std::pow(2.0 / delta, n - 1));
}

/// A exp(sum beta_j): bounds x_k whenever x_k <= alpha_k + sum_{j<k} beta_j x_j, alpha_k <= A.
[[nodiscard]] inline double discrete_gronwall_bound(double A, std::span<const double> betas) {
    double s = 0.0;
    for (double b : betas) {
        if (b < 0.0) throw DomainError("discrete_gronwall_bound: betas must be nonnegative");
        s += b;
    }
    return A * std::exp(s);
}

/// N^(m-1) sum |s_j|^m, which dominates |sum s_j|^m for m >= 1.
[[nodiscard]] inline double gen_triangle(std::span<const double> values, double m) {
    if (!(m >= 1.0)) throw DomainError("gen_triangle: m must be >= 1");
    if (values.empty()) return 0.0;
    double acc = 0.0;
    for (double v : values) acc += std::pow(std::abs(v), m);
    return std::pow(static_cast<double>(values.size()), m - 1.0) * acc;
}

struct SuiteResult {
    std::string name;
    std::size_t cases = 0;
    std::size_t failures = 0;
    double worst_ratio = 0.0;  // max lhs / rhs seen
};

namespace detail {

inline bool holds(double lhs, double rhs) {
    return lhs <= rhs * (1.0 + 1e-12) + 1e-300;
}

inline double log_uniform(NormalSource& rng, double lo, double hi) {
    return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * rng.uniform());
}

inline void record(SuiteResult& res, double lhs, double rhs) {
    ++res.cases;
    if (!holds(lhs, rhs)) ++res.failures;
    if (rhs > 0.0) res.worst_ratio = std::max(res.worst_ratio, lhs / rhs);
}

}  // namespace detail

/// Randomised property suite over the inequality toolbox; `cases` inputs per inequality
/// (per n for the peter-paul family, n = 1..6).
[[nodiscard]] inline std::vector<SuiteResult> run_inequality_suite(std::size_t cases, std::uint64_t seed) {
    using detail::log_uniform;
    using detail::record;
    std::vector<SuiteResult> out;

    {
        SuiteResult res{"young"};
        NormalSource rng(StreamKey{seed, 0, 0, 1});
        for (std::size_t i = 0; i < cases; ++i) {
            const double a = log_uniform(rng, 1e-3, 1e3);
            const double b = log_uniform(rng, 1e-3, 1e3);
            const double delta = log_uniform(rng, 1e-3, 1e3);
            const double r = 1.0 + log_uniform(rng, 1e-2, 9.0);
            record(res, a * b, young(a, b, delta, r));
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"young_squared_difference"};
        NormalSource rng(StreamKey{seed, 0, 0, 2});
        for (std::size_t i = 0; i < cases; ++i) {
            const double x0 = rng(), x1 = rng(), y0 = rng(), y1 = rng();
            const double delta = log_uniform(rng, 1e-3, 1e3);
            const double lhs = (x0 - y0) * (x0 - y0) + (x1 - y1) * (x1 - y1);
            record(res, lhs, young_squared_difference(std::hypot(x0, x1), std::hypot(y0, y1), delta));
        }
        out.push_back(res);
    }
    for (int n = 1; n <= 6; ++n) {
        SuiteResult res{"peter_paul_n" + std::to_string(n)};
        NormalSource rng(StreamKey{seed, static_cast<std::uint32_t>(n), 0, 3});
        for (std::size_t i = 0; i < cases; ++i) {
            const double x = log_uniform(rng, 1e-3, 1e3);
            const double y = log_uniform(rng, 1e-3, 1e3);
            const double delta = log_uniform(rng, 1e-3, 1.0);
            record(res, std::pow(x + y, n), peter_paul(x, y, n, delta));
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"discrete_gronwall"};
        NormalSource rng(StreamKey{seed, 0, 0, 4});
        std::vector<double> betas;
        std::vector<double> xs;
        for (std::size_t i = 0; i < cases; ++i) {
            const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 40.0);
            const double A = log_uniform(rng, 1e-2, 1e2);
            betas.clear();
            xs.clear();
            // weighted = sum_{j<k} beta_j x_j; even cases follow the extremal (equality) sequence
            double weighted = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double x = (i % 2 == 0) ? A + weighted : rng.uniform() * (A * rng.uniform() + weighted);
                xs.push_back(x);
                betas.push_back(0.2 * rng.uniform());
                record(res, x, discrete_gronwall_bound(A, std::span<const double>(betas).first(k)));
                weighted += betas.back() * x;
            }
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"gen_triangle"};
        NormalSource rng(StreamKey{seed, 0, 0, 5});
        std::vector<double> values;
        for (std::size_t i = 0; i < cases; ++i) {
            const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 50.0);
            const double m = 1.0 + 7.0 * rng.uniform();
            values.resize(len);
            double sum = 0.0;
            for (auto& v : values) {
                v = rng() * log_uniform(rng, 1e-2, 1e2);
                sum += v;
            }
            record(res, std::pow(std::abs(sum), m), gen_triangle(values, m));
        }
        out.push_back(res);
    }
    return out;
}

}  // namespace probint::inequalities
