// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace cclpol {

/// Nearest-rank percentile, q in [0, 1]. Reorders `samples`. Empty input
/// returns 0.
double percentile(std::vector<double>& samples, double q);

struct Summary {
    double p50 = 0;
    double p99 = 0;
    double mean = 0;
    double min = 0;
    double max = 0;
};

Summary summarize(std::vector<double> samples);

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1).
double stddev(std::span<const double> xs);

} // namespace cclpol
