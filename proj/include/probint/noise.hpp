#pragma once

#include "probint/analysis/stats.hpp"
#include "probint/core.hpp"
#include "probint/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace probint {

enum class NoiseKind { Zero, GaussEndpoint, IbmPath, BoundedUniform, Biased };

[[nodiscard]] inline const std::vector<std::string>& noise_catalog() {
    static const std::vector<std::string> keys{"gauss_endpoint", "ibm_path", "bounded_uniform", "biased",
                                               "zero"};
    return keys;
}

[[nodiscard]] inline NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "gauss_endpoint") return NoiseKind::GaussEndpoint;
    if (name == "ibm_path") return NoiseKind::IbmPath;
    if (name == "bounded_uniform") return NoiseKind::BoundedUniform;
    if (name == "biased") return NoiseKind::Biased;
    if (name == "zero") return NoiseKind::Zero;
    throw CatalogError("catalog: unknown noise model '" + name + "'");
}

[[nodiscard]] inline std::string noise_name(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::Zero: return "zero";
        case NoiseKind::GaussEndpoint: return "gauss_endpoint";
        case NoiseKind::IbmPath: return "ibm_path";
        case NoiseKind::BoundedUniform: return "bounded_uniform";
        case NoiseKind::Biased: return "biased";
    }
    return "unknown";
}

[[nodiscard]] inline std::string noise_description(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::Zero: return "xi = 0 (deterministic integrator)";
        case NoiseKind::GaussEndpoint:
            return "centred Gaussian, per-component std tau^(p+1/2)/sqrt(3) (endpoint law of ibm_path)";
        case NoiseKind::IbmPath: return "tau^(p-1) * integral_0^t B_s ds, exact path sampling, C_xi = 4";
        case NoiseKind::BoundedUniform:
            return "uniform in the ball of radius min(C_xi tau^(p+1/2), as_bounded tau), R = inf";
        case NoiseKind::Biased:
            return "bias_fraction C_xi tau^(p+1/2) e_1 + (1 - bias_fraction) Gaussian, non-centred";
    }
    return "";
}

inline constexpr int kUnboundedMoments = std::numeric_limits<int>::max();

struct NoiseParams {
    NoiseKind kind = NoiseKind::GaussEndpoint;
    double p = 1.0;
    /// Highest moment order covered by C_xi; kUnboundedMoments for R = infinity.
    int R = 8;
    /// Explicit regularity constant (Gaussian families) or amplitude (bounded, biased).
    /// Unset means the model default.
    std::optional<double> C_xi;
    std::optional<double> as_bounded;
    double bias_fraction = 0.0;

    [[nodiscard]] bool centred() const { return kind != NoiseKind::Biased || bias_fraction == 0.0; }
    [[nodiscard]] bool iid() const { return true; }
};

struct NoiseDraw {
    State value;
    std::size_t step_index = 0;
};

/// (E|Z|^r)^(1/r) / sqrt(3) for Z standard normal in R^d, i.e. the per-order regularity
/// constant of the Gaussian endpoint law (chi-distribution moments).
[[nodiscard]] inline double gaussian_moment_constant(int d, int r) {
    const double log_moment = 0.5 * r * std::log(2.0) + std::lgamma(0.5 * (d + r)) - std::lgamma(0.5 * d);
    return std::exp(log_moment / r) / std::sqrt(3.0);
}

[[nodiscard]] inline double gaussian_moment_constant_upto(int d, int R) {
    double c = 0.0;
    for (int r = 1; r <= R; ++r) c = std::max(c, gaussian_moment_constant(d, r));
    return c;
}

/// Gaussian with per-component std tau^(p+1/2)/sqrt(3): the law of tau^(p-1) int_0^tau B_s ds.
[[nodiscard]] inline NoiseDraw sample_gaussian_endpoint(const NoiseParams& params, double tau, int d,
                                                        NormalSource& rng) {
    const double sd = std::pow(tau, params.p + 0.5) / std::sqrt(3.0);
    NoiseDraw draw{State(d), 0};
    for (int c = 0; c < d; ++c) draw.value[c] = sd * rng();
    return draw;
}

/// Values of xi(t) = tau^(p-1) int_0^t B_s ds at t_j = j tau / m, j = 0..m, sampled exactly
/// component-wise via the joint Gaussian increment of (B, int B) over each substep.
[[nodiscard]] inline std::vector<State> sample_integrated_bm_path(const NoiseParams& params, double tau,
                                                                  int m, int d, NormalSource& rng) {
    if (m < 1) {
        throw PreconditionError("sample_integrated_bm_path: subgrid m must be >= 1");
    }
    const double h = tau / m;
    const double sqrt_h = std::sqrt(h);
    const double inner_sd = std::sqrt(h * h * h / 12.0);
    const double scale = std::pow(tau, params.p - 1.0);
    std::vector<State> path(static_cast<std::size_t>(m) + 1, State::Zero(d));
    for (int c = 0; c < d; ++c) {
        double b = 0.0;
        double integral = 0.0;
        for (int j = 1; j <= m; ++j) {
            const double db = sqrt_h * rng();
            // Var(dI) = h^3/3, Cov(dB, dI) = h^2/2
            const double di = 0.5 * h * db + inner_sd * rng();
            integral += b * h + di;
            b += db;
            path[static_cast<std::size_t>(j)][c] = scale * integral;
        }
    }
    return path;
}

[[nodiscard]] inline double bounded_radius(const NoiseParams& params, double tau) {
    if (!params.as_bounded) {
        throw PreconditionError("bounded_uniform: as_bounded must be set");
    }
    const double c = params.C_xi.value_or(1.0);
    return std::min(c * std::pow(tau, params.p + 0.5), *params.as_bounded * tau);
}

/// Uniform in the ball of radius min(C_xi tau^(p+1/2), as_bounded tau).
[[nodiscard]] inline NoiseDraw sample_bounded_uniform(const NoiseParams& params, double tau, int d,
                                                      NormalSource& rng) {
    if (params.p + 0.5 < 1.0) {
        throw PreconditionError("bounded_uniform: requires p + 1/2 >= 1");
    }
    const double radius = bounded_radius(params, tau);
    NoiseDraw draw{State(d), 0};
    for (int c = 0; c < d; ++c) draw.value[c] = rng();
    const double n = draw.value.norm();
    const double r = radius * std::pow(rng.uniform(), 1.0 / d);
    draw.value *= (n > 0.0 ? r / n : 0.0);
    return draw;
}

struct BiasedDraw {
    NoiseDraw draw;
    /// C' with E|xi|^r <= (C' tau^(p+1/2))^r for r <= R (Minkowski bound).
    double moment_constant = 0.0;
};

[[nodiscard]] inline double biased_moment_constant(const NoiseParams& params, int d) {
    const double c = params.C_xi.value_or(1.0);
    const int R = std::min(params.R, 64);
    return c * (params.bias_fraction + (1.0 - params.bias_fraction) * gaussian_moment_constant_upto(d, R));
}

[[nodiscard]] inline BiasedDraw sample_biased(const NoiseParams& params, double tau, int d,
                                              double bias_fraction, NormalSource& rng) {
    const double c = params.C_xi.value_or(1.0);
    const double amp = c * std::pow(tau, params.p + 0.5);
    BiasedDraw out;
    out.draw.value = State(d);
    for (int comp = 0; comp < d; ++comp) {
        out.draw.value[comp] = (1.0 - bias_fraction) * (amp / std::sqrt(3.0)) * rng();
    }
    out.draw.value[0] += bias_fraction * amp;
    NoiseParams eff = params;
    eff.bias_fraction = bias_fraction;
    out.moment_constant = biased_moment_constant(eff, d);
    return out;
}

/// A configured noise family in dimension d. Draw k of replicate i comes from the substream
/// (seed, i, k), so runs are reproducible and independent of evaluation order.
class NoiseModel {
public:
    static constexpr std::uint32_t kStreamPurpose = 0x5E15E;

    NoiseModel(NoiseParams params, int d) : params_(std::move(params)), d_(d) {
        if (!(params_.p >= 0.5) || !std::isfinite(params_.p)) {
            throw PreconditionError("noise: p must be finite and >= 1/2");
        }
        if (params_.R < 1) {
            throw PreconditionError("noise: R must be >= 1");
        }
        if (params_.C_xi && !(*params_.C_xi > 0.0 && std::isfinite(*params_.C_xi))) {
            throw PreconditionError("noise: C_xi must be positive and finite");
        }
        if (params_.bias_fraction < 0.0 || params_.bias_fraction > 1.0) {
            throw PreconditionError("noise: bias_fraction must lie in [0, 1]");
        }
        if (params_.kind == NoiseKind::BoundedUniform) {
            (void)bounded_radius(params_, 1.0);
            params_.R = kUnboundedMoments;
        }
    }

    [[nodiscard]] const NoiseParams& params() const { return params_; }
    [[nodiscard]] int dimension() const { return d_; }
    [[nodiscard]] std::string name() const { return noise_name(params_.kind); }
    [[nodiscard]] bool supports_path() const {
        return params_.kind == NoiseKind::IbmPath || params_.kind == NoiseKind::Zero;
    }
    [[nodiscard]] bool centred() const { return params_.centred(); }
    [[nodiscard]] bool is_zero() const { return params_.kind == NoiseKind::Zero; }

    /// Constant C_{xi,R} such that E|xi(tau)|^r <= (C tau^(p+1/2))^r for 1 <= r <= R.
    [[nodiscard]] double regularity_constant() const {
        const int R = std::min(params_.R, 64);
        switch (params_.kind) {
            case NoiseKind::Zero: return 1.0;
            case NoiseKind::GaussEndpoint:
                return params_.C_xi.value_or(std::max(1.0, gaussian_moment_constant_upto(d_, R)));
            case NoiseKind::IbmPath: return params_.C_xi.value_or(4.0);
            case NoiseKind::BoundedUniform: return std::max(1.0, params_.C_xi.value_or(1.0));
            case NoiseKind::Biased: return std::max(1.0, biased_moment_constant(params_, d_));
        }
        return 1.0;
    }

    /// Moment bound used by the verifier: 4 tau^(r(p+1/2)) for integrated BM,
    /// (C tau^(p+1/2))^r otherwise.
    [[nodiscard]] double moment_bound(int r, double tau) const {
        if (params_.kind == NoiseKind::IbmPath && !params_.C_xi) {
            return 4.0 * std::pow(tau, r * (params_.p + 0.5));
        }
        return std::pow(regularity_constant() * std::pow(tau, params_.p + 0.5), r);
    }

    [[nodiscard]] static StreamKey key(std::uint64_t seed, std::size_t replicate, std::size_t step) {
        return StreamKey{seed, static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(step),
                         kStreamPurpose};
    }

    /// xi_k(tau).
    [[nodiscard]] NoiseDraw draw(double tau, const StreamKey& key) const {
        NormalSource rng(key);
        NoiseDraw out;
        switch (params_.kind) {
            case NoiseKind::Zero: out.value = State::Zero(d_); break;
            case NoiseKind::GaussEndpoint: out = sample_gaussian_endpoint(params_, tau, d_, rng); break;
            case NoiseKind::IbmPath: out.value = sample_integrated_bm_path(params_, tau, 1, d_, rng).back(); break;
            case NoiseKind::BoundedUniform: out = sample_bounded_uniform(params_, tau, d_, rng); break;
            case NoiseKind::Biased: out = sample_biased(params_, tau, d_, params_.bias_fraction, rng).draw; break;
        }
        out.step_index = key.step;
        return out;
    }

    /// xi_k(j tau / m), j = 0..m. With m = 1 the endpoint equals `draw(tau, key)`; for other m
    /// it has the same law. Continuous-time runs use entry m as xi_k(tau).
    [[nodiscard]] std::vector<State> draw_path(double tau, int m, const StreamKey& key) const {
        if (!supports_path()) {
            throw PreconditionError("noise: model '" + name() + "' has no continuous-time path sampler");
        }
        if (params_.kind == NoiseKind::Zero) {
            return std::vector<State>(static_cast<std::size_t>(m) + 1, State::Zero(d_));
        }
        NormalSource rng(key);
        return sample_integrated_bm_path(params_, tau, m, d_, rng);
    }

private:
    NoiseParams params_;
    int d_;
};

struct RegularityRow {
    int r = 0;
    double empirical = 0.0;
    double std_error = 0.0;
    double bound = 0.0;
    /// (empirical)^(1/r) / tau^(p+1/2)
    double empirical_constant = 0.0;
    /// False for rows reported without a pass/fail claim (default integrated-BM constant, r > 4).
    bool asserted = true;
    bool pass = false;
};

struct RegularityTable {
    std::string model;
    double tau = 0.0;
    bool sup_over_path = false;
    std::size_t reps = 0;
    std::vector<RegularityRow> rows;

    [[nodiscard]] bool all_pass() const {
        return std::all_of(rows.begin(), rows.end(), [](const RegularityRow& r) { return r.pass; });
    }
};

/// Monte Carlo check of E[sup_{t<=tau} |xi(t)|^r] (path models, subgrid 64) or E|xi(tau)|^r
/// against the model's moment bound, r = 1..r_max. Passes when
/// empirical <= bound (1 + 3 relative standard error). With the default integrated-BM constant
/// only r <= 4 is asserted; higher rows report the empirical constant.
[[nodiscard]] inline RegularityTable verify_regularity(const NoiseModel& model, double tau, int r_max,
                                                       std::size_t reps, std::uint64_t seed,
                                                       int subgrid = 64) {
    if (reps < 1000) {
        throw StatisticalPowerError("verify_regularity: reps must be >= 1000, got " + std::to_string(reps));
    }
    if (r_max < 1 || r_max > 8) {
        throw PreconditionError("verify_regularity: r_max must lie in 1..8");
    }
    RegularityTable table;
    table.model = model.name();
    table.tau = tau;
    table.reps = reps;
    table.sup_over_path = model.supports_path() && !model.is_zero();
    std::vector<double> sup_norms(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const StreamKey key{seed, static_cast<std::uint32_t>(i), 0, NoiseModel::kStreamPurpose};
        double value = 0.0;
        if (table.sup_over_path) {
            for (const auto& x : model.draw_path(tau, subgrid, key)) value = std::max(value, x.norm());
        } else {
            value = model.draw(tau, key).value.norm();
        }
        sup_norms[i] = value;
    }
    const double scale = std::pow(tau, model.params().p + 0.5);
    std::vector<double> powers(reps);
    for (int r = 1; r <= r_max; ++r) {
        for (std::size_t i = 0; i < reps; ++i) powers[i] = std::pow(sup_norms[i], r);
        const auto est = estimate_mean(powers);
        RegularityRow row;
        row.r = r;
        row.empirical = est.mean;
        row.std_error = est.std_error;
        row.bound = model.moment_bound(r, tau);
        row.empirical_constant = std::pow(est.mean, 1.0 / r) / scale;
        row.asserted = !(model.params().kind == NoiseKind::IbmPath && !model.params().C_xi && r > 4);
        row.pass = !row.asserted || est.mean <= row.bound * (1.0 + 3.0 * est.relative_se());
        table.rows.push_back(row);
    }
    return table;
}

}  // namespace probint
