#pragma once

#include "probint/analysis/fit.hpp"
#include "probint/analysis/stats.hpp"
#include "probint/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace probint {

/// Predicted order of the RMS-style error for the given regime.
[[nodiscard]] inline double theoretical_order(int q, double p, bool zero_noise, bool centred, bool implicit,
                                              bool continuous) {
    if (zero_noise) return q;
    if (continuous || !centred || implicit) return std::min(static_cast<double>(q), p - 0.5);
    return std::min(static_cast<double>(q), p);
}

struct ConvergenceLevel {
    double tau = 0.0;
    /// Mean of max_k |e_k|^(2n) over the non-diverged replicates.
    MeanEstimate moment;
    /// moment^(1/(2n)).
    double rms = 0.0;
    double diverged_fraction = 0.0;
    bool fitted = false;
};

struct ConvergenceReport {
    int n = 1;
    std::vector<ConvergenceLevel> levels;
    FitResult fit;
    double fitted_order = std::numeric_limits<double>::quiet_NaN();
    double theoretical_order = 0.0;
    double tolerance = 0.0;
    bool verdict = false;
    std::string note;

    [[nodiscard]] std::vector<double> fitted_taus() const {
        std::vector<double> out;
        for (const auto& l : levels) if (l.fitted) out.push_back(l.tau);
        return out;
    }
    [[nodiscard]] std::vector<double> fitted_rms() const {
        std::vector<double> out;
        for (const auto& l : levels) if (l.fitted) out.push_back(l.rms);
        return out;
    }
};

/// Builds the report from per-tau sup errors (+inf marks a diverged replicate). Levels with any
/// divergence, or with rms at or below `precision_floor`, are not fitted.
[[nodiscard]] inline ConvergenceReport convergence_report(const std::vector<double>& taus,
                                                          const std::vector<std::vector<double>>& sup_errors,
                                                          int n, double theory, double tolerance,
                                                          double precision_floor) {
    if (taus.size() != sup_errors.size()) {
        throw PreconditionError("convergence_report: one error sample per tau required");
    }
    ConvergenceReport rep;
    rep.n = n;
    rep.theoretical_order = theory;
    rep.tolerance = tolerance;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        ConvergenceLevel level;
        level.tau = taus[i];
        std::vector<double> powers;
        powers.reserve(sup_errors[i].size());
        std::size_t diverged = 0;
        for (double e : sup_errors[i]) {
            if (std::isfinite(e)) {
                powers.push_back(std::pow(e, 2 * n));
            } else {
                ++diverged;
            }
        }
        level.diverged_fraction =
            sup_errors[i].empty() ? 0.0 : static_cast<double>(diverged) / static_cast<double>(sup_errors[i].size());
        level.moment = estimate_mean(powers);
        level.rms = std::pow(level.moment.mean, 1.0 / (2.0 * n));
        level.fitted = diverged == 0 && !powers.empty() && level.rms > precision_floor;
        rep.levels.push_back(level);
    }
    const auto ft = rep.fitted_taus();
    if (ft.size() < 3) {
        rep.note = "fewer than 3 fittable step sizes";
        return rep;
    }
    rep.fit = fit_order(ft, rep.fitted_rms());
    rep.fitted_order = rep.fit.slope;
    rep.verdict = std::abs(rep.fitted_order - theory) <= tolerance;
    return rep;
}

[[nodiscard]] inline nlohmann::json to_json(const ConvergenceReport& rep) {
    nlohmann::json j;
    j["n"] = rep.n;
    j["theoretical_order"] = rep.theoretical_order;
    j["tolerance"] = rep.tolerance;
    j["fitted_order"] = std::isfinite(rep.fitted_order) ? nlohmann::json(rep.fitted_order) : nlohmann::json(nullptr);
    j["intercept"] = rep.fit.intercept;
    j["fit_residual"] = rep.fit.residual;
    j["fit_warnings"] = rep.fit.warnings;
    j["verdict"] = rep.verdict ? "pass" : "fail";
    if (!rep.note.empty()) j["note"] = rep.note;
    j["levels"] = nlohmann::json::array();
    for (const auto& l : rep.levels) {
        j["levels"].push_back({{"tau", l.tau},
                               {"mean", l.moment.mean},
                               {"std_error", l.moment.std_error},
                               {"ci_lo", l.moment.ci_lo()},
                               {"ci_hi", l.moment.ci_hi()},
                               {"rms", l.rms},
                               {"diverged_fraction", l.diverged_fraction},
                               {"fitted", l.fitted}});
    }
    return j;
}

}  // namespace probint
