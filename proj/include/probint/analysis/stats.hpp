#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace probint {

/// Pairwise summation; the result depends only on the order of `values`.
[[nodiscard]] inline double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

struct MeanEstimate {
    double mean = 0.0;
    double std_error = 0.0;  // standard error of the mean
    std::size_t count = 0;

    [[nodiscard]] double ci_lo(double z = 1.96) const { return mean - z * std_error; }
    [[nodiscard]] double ci_hi(double z = 1.96) const { return mean + z * std_error; }
    [[nodiscard]] double relative_se() const { return mean != 0.0 ? std_error / std::abs(mean) : 0.0; }
};

[[nodiscard]] inline MeanEstimate estimate_mean(std::span<const double> values) {
    MeanEstimate est;
    est.count = values.size();
    if (values.empty()) return est;
    const auto n = static_cast<double>(values.size());
    est.mean = pairwise_sum(values) / n;
    if (values.size() > 1) {
        std::vector<double> sq(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double dev = values[i] - est.mean;
            sq[i] = dev * dev;
        }
        const double var = pairwise_sum(sq) / (n - 1.0);
        est.std_error = std::sqrt(var / n);
    }
    return est;
}

/// Unbiased sample variance.
[[nodiscard]] inline double sample_variance(std::span<const double> values) {
    const auto est = estimate_mean(values);
    const auto n = static_cast<double>(values.size());
    return est.std_error * est.std_error * n;
}

}  // namespace probint
