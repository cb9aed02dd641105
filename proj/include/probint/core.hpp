#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace probint {

using State = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Trajectory = std::vector<State>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CatalogError : public Error {
public:
    using Error::Error;
};

class MeshError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class StatisticalPowerError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite or out-of-region state. `index` is the step (or sample) where it happened.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t index)
        : Error(what), index_(index) {}
    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class NonconvergenceError : public Error {
public:
    NonconvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    [[nodiscard]] double last_residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Raised when an implicit step is requested at or above the admissible cap tau'.
class StepSizeError : public Error {
public:
    StepSizeError(const std::string& what, double cap) : Error(what), cap_(cap) {}
    [[nodiscard]] double cap() const noexcept { return cap_; }

private:
    double cap_;
};

[[nodiscard]] inline bool all_finite(const State& x) {
    return x.allFinite();
}

/// Number of steps K = T/tau, requiring integrality to within `rel_tol`.
[[nodiscard]] inline std::size_t step_count(double horizon, double tau, double rel_tol = 1e-9) {
    if (!(tau > 0.0) || !(horizon > 0.0)) {
        throw MeshError("mesh: horizon and tau must be positive");
    }
    const double ratio = horizon / tau;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > rel_tol * std::max(1.0, ratio)) {
        throw MeshError("mesh: T/tau = " + std::to_string(ratio) + " is not an integer (T=" +
                        std::to_string(horizon) + ", tau=" + std::to_string(tau) + ")");
    }
    return static_cast<std::size_t>(rounded);
}

/// Dyadic grid 2^-from, ..., 2^-to (decreasing).
[[nodiscard]] inline std::vector<double> dyadic_grid(int from, int to) {
    std::vector<double> taus;
    for (int k = from; k <= to; ++k) {
        taus.push_back(std::ldexp(1.0, -k));
    }
    return taus;
}

}  // namespace probint
