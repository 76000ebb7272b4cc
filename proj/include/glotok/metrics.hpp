#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "glotok/error.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

struct UsageDistribution {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    UsageDistribution() = default;
    explicit UsageDistribution(std::vector<std::uint64_t> c)
        : counts(std::move(c)), total(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0})) {}

    std::size_t codes() const noexcept { return counts.size(); }

    std::vector<double> frequencies() const {
        if (total == 0) throw ValueError("usage distribution is empty");
        std::vector<double> p(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
        return p;
    }
};

// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// Peak signal-to-noise ratio for images with values in [0, 1].
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& x_hat) {
    const double e = mse(x, x_hat);
    if (e == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / e);
}

// Population standard deviation over mean of the per-code counts.
inline double density_cv(const UsageDistribution& u) {
    if (u.total == 0 || u.counts.empty()) throw ValueError("density_cv: empty usage distribution");
    const double k = static_cast<double>(u.counts.size());
    const double mean = static_cast<double>(u.total) / k;
    double var = 0;
    for (const auto c : u.counts) {
        const double t = static_cast<double>(c) - mean;
        var += t * t;
    }
    return std::sqrt(var / k) / mean;
}

// Shannon entropy of code frequencies divided by log K.
inline double normalized_entropy(const UsageDistribution& u) {
    if (u.total == 0) throw ValueError("normalized_entropy: empty usage distribution");
    if (u.counts.size() < 2) throw ValueError("normalized_entropy: need K >= 2");
    double h = 0;
    for (const double p : u.frequencies())
        if (p > 0) h -= p * std::log(p);
    return h / std::log(static_cast<double>(u.counts.size()));
}

// Sorted-frequency Gini: sum_i (2i - K - 1) p_(i) / K with ascending p, i from 1.
inline double gini(const UsageDistribution& u) {
    if (u.total == 0) throw ValueError("gini: empty usage distribution");
    auto p = u.frequencies();
    std::sort(p.begin(), p.end());
    const double k = static_cast<double>(p.size());
    double g = 0;
    for (std::size_t i = 0; i < p.size(); ++i) g += (2.0 * static_cast<double>(i + 1) - k - 1.0) * p[i];
    return g / k;
}

} // namespace glotok
