// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cclpol {

double percentile(std::vector<double>& samples, double q) {
    if (samples.empty()) return 0;
    q = std::clamp(q, 0.0, 1.0);
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    const std::size_t idx = rank == 0 ? 0 : rank - 1;
    std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(idx), samples.end());
    return samples[idx];
}

Summary summarize(std::vector<double> samples) {
    Summary s;
    if (samples.empty()) return s;
    s.mean = mean(samples);
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    s.min = *lo;
    s.max = *hi;
    s.p50 = percentile(samples, 0.50);
    s.p99 = percentile(samples, 0.99);
    return s;
}

double mean(std::span<const double> xs) {
    if (xs.empty()) return 0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
    if (xs.size() < 2) return 0;
    const double m = mean(xs);
    double acc = 0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

} // namespace cclpol
