// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cclpol/engine.hpp"

namespace cclpol {

struct BenchResult {
    std::string policy_name;
    std::uint64_t calls = 0;
    double p50_ns = 0;
    double p99_ns = 0;
    double mean_ns = 0;
    std::size_t n_lookup = 0; // static helper call counts
    std::size_t n_update = 0;
};

struct BenchOptions {
    std::uint64_t calls = 1'000'000;
    std::uint64_t warmup = 10'000;
    std::uint64_t msg_size = 1ull << 20;
    std::uint64_t comm_handle = 0xB00C;
};

/// Seeds every HASH map of `program` with an entry for the bench
/// communicator so lookups hit. Array maps are left zeroed.
void warm_maps(Engine& engine, const Program& program, std::uint64_t comm_handle);

/// Loads `program` into the engine's tuner slot, warms its maps and times
/// `calls` invocations after `warmup` untimed ones.
BenchResult bench_policy(Engine& engine, const Program& program, const BenchOptions& options = {});

/// Host-compiled size_aware_v2 logic through the same context and output
/// path, without the slot or the VM.
BenchResult bench_native(Engine& engine, const BenchOptions& options = {});

struct OverheadModel {
    double base_ns = 0;
    double per_lookup_ns = 0;
    double per_update_ns = 0;
    double r_squared = 0;
    double residual_rms_ns = 0;
};

struct LadderPoint {
    double delta_ns = 0;
    double n_lookup = 0;
    double n_update = 0;
};

/// Ordinary least squares of delta on (1, n_lookup, n_update). Throws
/// std::invalid_argument with fewer than 4 points or a rank-deficient design.
OverheadModel fit_overhead_model(std::span<const LadderPoint> points);

/// Fits p50 - baseline_p50_ns against each result's helper counts.
OverheadModel fit_overhead_model(std::span<const BenchResult> results, double baseline_p50_ns);

struct LadderReport {
    BenchResult native;
    std::vector<BenchResult> policies; // ladder order
    std::optional<OverheadModel> fit; // needs at least 4 policies
};

/// Shipped ladder: noop, size_aware_v2, lookup_only, lookup_update,
/// adaptive_channels, slo_enforcer, each in a fresh engine.
std::vector<std::filesystem::path> ladder_policies(const std::filesystem::path& data_dir);

LadderReport run_ladder(std::span<const std::filesystem::path> policies, const BenchOptions& options = {});

} // namespace cclpol
