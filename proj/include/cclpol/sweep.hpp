// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cclpol/engine.hpp"

namespace cclpol {

/// 4, 8, 16, 32, 64, 128, 256 MiB and 8 GiB.
std::vector<std::uint64_t> sweep_sizes();

struct SweepRow {
    std::uint64_t msg_size = 0;
    Decision default_decision;
    Decision ring_decision;
    Decision policy_decision;
    double default_gbps = 0;
    double ring_gbps = 0;   // fixed Ring/Simple policy
    double policy_gbps = 0; // equals default_gbps without a policy
    double ring_delta_pct = 0;
    double policy_delta_pct = 0;
};

/// Runs the same collective through three engines sharing `model`: no
/// policy, a built-in Ring/Simple program, and `policy` (if given). All
/// decisions go through the normal verify, load and invoke path.
std::vector<SweepRow> run_sweep(const PerfModel& model, const Program* policy,
                                std::span<const std::uint64_t> sizes, std::uint32_t ranks = 8,
                                Collective coll = Collective::ALLREDUCE);

inline std::vector<SweepRow> run_sweep(const PerfModel& model, const Program* policy) {
    const auto sizes = sweep_sizes();
    return run_sweep(model, policy, sizes);
}

} // namespace cclpol
