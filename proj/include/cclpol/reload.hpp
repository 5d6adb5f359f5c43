// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "cclpol/engine.hpp"

namespace cclpol {

enum class ReloadOutcome { SWAPPED, REJECTED, LOAD_ERROR, BUSY };

std::string_view to_string(ReloadOutcome outcome);

struct ReloadReport {
    ReloadOutcome outcome = ReloadOutcome::LOAD_ERROR;
    std::optional<Verdict> verdict; // set once verification ran
    std::string error;              // parse or map-binding failure
    double verify_ms = 0;
    double prepare_ms = 0;
    double swap_us = 0;  // publish window
    double drain_us = 0; // wait for readers of the old generation
    double total_ms = 0;
    std::uint64_t generation = 0; // active generation after the call

    bool ok() const { return outcome == ReloadOutcome::SWAPPED; }
};

/// Verify, prepare, swap into the slot for program.hook. A rejected or
/// failed load leaves the active generation untouched. Concurrent callers
/// get BUSY.
ReloadReport reload(Engine& engine, const Program& program);

/// Assembles `source` first; a parse error yields LOAD_ERROR. When
/// `expected_hook` is set, a program for another hook is a LOAD_ERROR.
ReloadReport reload(Engine& engine, std::string_view source, std::optional<HookKind> expected_hook = std::nullopt);

/// Clears the hook's slot (host default behavior). Returns the new generation.
std::uint64_t unload(Engine& engine, HookKind hook);

struct SwapStats {
    std::uint64_t iterations = 0;
    std::uint64_t generation_delta = 0;
    double swap_us_p50 = 0;
    double swap_us_p99 = 0;
    double total_reload_ms_p50 = 0;
    double verify_ms_p50 = 0;
};

/// Reloads `program` `iterations` times. With `under_load`, one background
/// thread invokes the hook continuously during the measurement.
SwapStats measure_swap(Engine& engine, const Program& program, std::uint64_t iterations, bool under_load = false);

struct StressConfig {
    std::uint64_t calls = 400'000; // total across invoker threads
    std::uint64_t swaps = 1000;
    unsigned threads = 4;
    bool inject_reject = true; // one unsafe reload attempted mid-run
};

struct StressReport {
    std::uint64_t calls_issued = 0;
    std::uint64_t calls_completed = 0;
    std::uint64_t lost = 0;
    std::uint64_t invalid_decisions = 0;
    std::uint64_t monotonicity_violations = 0;
    std::uint64_t swaps = 0;
    std::uint64_t generation_start = 0;
    std::uint64_t generation_end = 0;
    std::uint64_t distinct_generations_observed = 0;
    bool reject_attempted = false;
    bool reject_preserved = false; // rejected and probe unchanged
    std::uint64_t unsafe_reclaims = 0;
    double swap_us_p50 = 0;
    double swap_us_p99 = 0;
    double seconds = 0;

    bool ok() const;
};

/// Expected decision of a tuner program, computed on the host.
using DecisionOracle = Decision (*)(std::uint64_t msg_size, std::uint32_t max_channels);

struct StressProgram {
    Program program;
    DecisionOracle oracle;
};

/// Invoker threads call the tuner while a reloader swaps the slot between
/// `a` and `b`; `unsafe` is the mid-run rejected reload. Every decision is
/// checked against the oracle of the generation that produced it.
StressReport reload_stress(const StressConfig& config, const StressProgram& a, const StressProgram& b,
                           const Program& unsafe);

} // namespace cclpol
