#pragma once

#include "probint/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace probint {

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    /// Root-mean-square residual of the fit in log space.
    double residual = 0.0;
    std::size_t points_used = 0;
    std::vector<std::string> warnings;
};

/// Ordinary least squares of log(error) on log(tau). Non-positive or non-finite errors are
/// dropped with a warning; at least 3 usable points are required.
[[nodiscard]] inline FitResult fit_order(const std::vector<double>& taus, const std::vector<double>& errors) {
    if (taus.size() != errors.size()) {
        throw PreconditionError("fit_order: taus and errors differ in length");
    }
    FitResult fit;
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!(errors[i] > 0.0) || !std::isfinite(errors[i]) || !(taus[i] > 0.0)) {
            fit.warnings.push_back("dropped point tau=" + std::to_string(taus[i]) +
                                   " (error=" + std::to_string(errors[i]) + ")");
            continue;
        }
        xs.push_back(std::log(taus[i]));
        ys.push_back(std::log(errors[i]));
    }
    if (xs.size() < 3) {
        throw PreconditionError("fit_order: need at least 3 finite positive points, got " +
                                std::to_string(xs.size()));
    }
    const auto n = static_cast<double>(xs.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0) {
        throw PreconditionError("fit_order: all step sizes are equal");
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / n);
    fit.points_used = xs.size();
    return fit;
}

/// Intercept of log(error) = c + rate log(tau) with the slope held at `rate`.
[[nodiscard]] inline double fixed_slope_intercept(const std::vector<double>& taus,
                                                  const std::vector<double>& errors, double rate) {
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (errors[i] > 0.0 && std::isfinite(errors[i])) {
            acc += std::log(errors[i]) - rate * std::log(taus[i]);
            ++used;
        }
    }
    if (used == 0) {
        throw PreconditionError("fixed_slope_intercept: no usable points");
    }
    return acc / static_cast<double>(used);
}

}  // namespace probint
