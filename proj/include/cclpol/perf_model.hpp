// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cclpol/context.hpp"

namespace cclpol {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Analytic bus-bandwidth model. Per-algorithm anchors are measured at the
/// best channel count; other channel counts scale by channel_curve().
struct PerfModel {
    std::string name;
    std::uint32_t ranks = 8;
    std::uint32_t max_channels = 32;
    // (size in MiB, GB/s), sorted by size; indexed by Algorithm.
    std::array<std::vector<std::pair<double, double>>, NUM_ALGORITHMS> anchors;
    // (channels, efficiency), sorted by channels; log-efficiency is linear
    // in log2(channels) between points and flat outside.
    std::vector<std::pair<double, double>> curve_points;
    double ll_small_factor = 0.5;
    double ll_large_factor = 0.9;
    std::uint64_t ll_threshold_bytes = 1u << 20;

    double channel_curve(std::uint32_t channels) const;
    /// Log2-size piecewise-linear interpolation, clamped to the anchor hull.
    double anchor_bandwidth(Algorithm algo, std::uint64_t msg_size) const;
    double protocol_factor(Protocol proto, std::uint64_t msg_size) const;
    double bus_bandwidth(Algorithm algo, Protocol proto, std::uint32_t channels, std::uint64_t msg_size) const;

    /// Empty when the model is usable, otherwise the first problem found.
    std::string validate() const;

    /// Same values as models/b300_nvlink8.yaml.
    static PerfModel builtin();
};

/// Throws ConfigError on malformed input or a model that fails validate().
PerfModel parse_model(std::string_view yaml_text);
PerfModel load_model(const std::filesystem::path& path);

/// Bytes crossing the bus for one collective (nccl-tests convention).
double bus_bytes(Collective coll, std::uint64_t msg_size, std::uint32_t n_ranks);

/// Nanoseconds for `bus_bytes` at `gbps` (1 GB/s == 1 byte/ns).
double transfer_latency_ns(double bus_bytes, double gbps);

} // namespace cclpol
