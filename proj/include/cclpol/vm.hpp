// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cclpol/context.hpp"
#include "cclpol/isa.hpp"
#include "cclpol/maps.hpp"

namespace cclpol {

enum class ExecMode : std::uint8_t { FAST, CHECKED };

/// Raised by CHECKED execution instead of performing an unsafe step.
class SafetyFault : public std::runtime_error {
  public:
    SafetyFault(int pc, const std::string& what);
    int pc() const { return pc_; }

  private:
    int pc_;
};

/// Bounded sink for trace_log; the oldest values are overwritten.
class TraceRing {
  public:
    static constexpr std::size_t CAPACITY = 4096;

    void push(std::int64_t value);
    std::uint64_t total() const { return head_.load(std::memory_order_relaxed); }
    /// Up to CAPACITY most recent values, oldest first. Not linearizable with
    /// concurrent pushes.
    std::vector<std::int64_t> snapshot() const;

  private:
    std::atomic<std::uint64_t> head_{0};
    std::array<std::atomic<std::int64_t>, CAPACITY> slots_{};
};

/// A program bound to map instances and ready to run.
struct PreparedProgram {
    Program program;
    ContextLayout layout;
    std::vector<std::shared_ptr<MapInstance>> maps;
    std::uint32_t max_stack = 512;
    std::size_t n_lookup = 0; // static helper call counts
    std::size_t n_update = 0;
};

/// Binds the program's maps through `registry` (throws MapError on a
/// descriptor conflict). Does not verify.
std::shared_ptr<const PreparedProgram> prepare(const Program& program, MapRegistry& registry,
                                               std::uint32_t max_stack = 512);

struct ExecOptions {
    ExecMode mode = ExecMode::FAST;
    TraceRing* trace = nullptr;
    // CHECKED mode only: instructions executed before the run is declared
    // non-terminating.
    std::uint64_t insn_budget = 1u << 24;
};

/// Runs the program on `ctx` (layout.size bytes) and returns r0. FAST mode
/// trusts the verifier; CHECKED mode throws SafetyFault on any violation.
std::int64_t execute(const PreparedProgram& prog, std::span<std::uint8_t> ctx, const ExecOptions& opts = {});

struct FuzzResult {
    std::uint64_t trials = 0;
    std::uint64_t faults = 0;
    std::string first_fault; // lowest faulting trial index, empty when none

    bool operator==(const FuzzResult&) const = default;
};

/// Runs `trials` CHECKED executions, each on fresh maps with pseudo-random
/// context bytes and map contents derived from (seed, trial index).
FuzzResult execute_checked_fuzz(const Program& program, std::uint64_t trials, std::uint64_t seed);

/// Same trials spread over OpenMP threads; result identical to the serial run.
FuzzResult execute_checked_fuzz_parallel(const Program& program, std::uint64_t trials, std::uint64_t seed);

/// Outcome of a single fuzz trial: empty on success, fault text otherwise.
std::string run_fuzz_trial(const Program& program, std::uint64_t seed, std::uint64_t trial);

} // namespace cclpol
