// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/sweep.hpp"

#include <stdexcept>

#include "cclpol/assembler.hpp"
#include "cclpol/reload.hpp"

namespace cclpol {

namespace {

constexpr std::string_view FIXED_RING = R"(.name fixed_ring
.hook tuner
    stw [r1+24], 1
    stw [r1+28], 2
    mov r0, 0
    exit
)";

constexpr std::uint64_t SWEEP_HANDLE = 0x5EEDull;

void install(Engine& engine, const Program& program) {
    auto r = reload(engine, program);
    if (!r.ok()) {
        throw std::invalid_argument("sweep: cannot load " + program.name + ": " +
                                    (r.verdict && !r.verdict->accepted ? explain(*r.verdict) : r.error));
    }
}

double delta_pct(double x, double base) { return (x / base - 1.0) * 100.0; }

} // namespace

std::vector<std::uint64_t> sweep_sizes() {
    constexpr std::uint64_t MiB = 1ull << 20;
    return {4 * MiB, 8 * MiB, 16 * MiB, 32 * MiB, 64 * MiB, 128 * MiB, 256 * MiB, 8192 * MiB};
}

std::vector<SweepRow> run_sweep(const PerfModel& model, const Program* policy, std::span<const std::uint64_t> sizes,
                                std::uint32_t ranks, Collective coll) {
    Engine base({model});
    Engine ring({model});
    install(ring, assemble(FIXED_RING));
    std::optional<Engine> tuned;
    if (policy) {
        if (policy->hook != HookKind::TUNER) throw std::invalid_argument("sweep: policy must target the tuner hook");
        tuned.emplace(EngineOptions{model});
        install(*tuned, *policy);
    }

    std::vector<SweepRow> rows;
    rows.reserve(sizes.size());
    for (auto size : sizes) {
        SweepRow row;
        row.msg_size = size;
        const auto d = base.run_collective(SWEEP_HANDLE, coll, size, ranks);
        const auto r = ring.run_collective(SWEEP_HANDLE, coll, size, ranks);
        const auto p = tuned ? tuned->run_collective(SWEEP_HANDLE, coll, size, ranks) : d;
        row.default_decision = d.decision;
        row.ring_decision = r.decision;
        row.policy_decision = p.decision;
        row.default_gbps = d.bus_gbps;
        row.ring_gbps = r.bus_gbps;
        row.policy_gbps = p.bus_gbps;
        row.ring_delta_pct = delta_pct(r.bus_gbps, d.bus_gbps);
        row.policy_delta_pct = delta_pct(p.bus_gbps, d.bus_gbps);
        rows.push_back(row);
    }
    return rows;
}

} // namespace cclpol
