// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/reload.hpp"

#include <atomic>
#include <chrono>
#include <set>
#include <thread>

#include "cclpol/assembler.hpp"
#include "cclpol/stats.hpp"

namespace cclpol {

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t).count();
}

ReloadReport reload_locked(Engine& engine, const Program& program) {
    ReloadReport report;
    auto& slot = engine.slot(program.hook);
    const auto start = clock_type::now();

    auto t = clock_type::now();
    report.verdict = verify(program, engine.verifier_config());
    report.verify_ms = ms_since(t);
    if (!report.verdict->accepted) {
        report.outcome = ReloadOutcome::REJECTED;
        report.generation = slot.generation();
        report.total_ms = ms_since(start);
        return report;
    }

    t = clock_type::now();
    std::shared_ptr<const PreparedProgram> prepared;
    if (auto conflict = engine.maps().check(program); !conflict.empty()) {
        report.outcome = ReloadOutcome::REJECTED;
        report.error = conflict;
    } else {
        try {
            prepared = prepare(program, engine.maps(), engine.verifier_config().max_stack);
        } catch (const std::exception& e) {
            report.outcome = ReloadOutcome::LOAD_ERROR;
            report.error = e.what();
        }
    }
    report.prepare_ms = ms_since(t);
    if (!prepared) {
        report.generation = slot.generation();
        report.total_ms = ms_since(start);
        return report;
    }

    ActiveSlot::SwapTiming timing;
    report.generation = slot.swap(std::move(prepared), &timing);
    report.swap_us = timing.publish_us;
    report.drain_us = timing.drain_us;
    report.outcome = ReloadOutcome::SWAPPED;
    report.total_ms = ms_since(start);
    return report;
}

} // namespace

std::string_view to_string(ReloadOutcome outcome) {
    switch (outcome) {
    case ReloadOutcome::SWAPPED: return "SWAPPED";
    case ReloadOutcome::REJECTED: return "REJECTED";
    case ReloadOutcome::LOAD_ERROR: return "LOAD_ERROR";
    case ReloadOutcome::BUSY: return "BUSY";
    }
    return "?";
}

ReloadReport reload(Engine& engine, const Program& program) {
    std::unique_lock lock(engine.reload_mutex(), std::try_to_lock);
    if (!lock.owns_lock()) {
        ReloadReport r;
        r.outcome = ReloadOutcome::BUSY;
        r.error = "another reload is in progress";
        r.generation = engine.slot(program.hook).generation();
        return r;
    }
    return reload_locked(engine, program);
}

ReloadReport reload(Engine& engine, std::string_view source, std::optional<HookKind> expected_hook) {
    Program program;
    try {
        program = assemble(source);
    } catch (const ParseError& e) {
        ReloadReport r;
        r.error = e.what();
        if (expected_hook) r.generation = engine.slot(*expected_hook).generation();
        return r;
    }
    if (expected_hook && program.hook != *expected_hook) {
        ReloadReport r;
        r.error = "program targets hook " + std::string(to_string(program.hook)) + ", expected " +
                  std::string(to_string(*expected_hook));
        r.generation = engine.slot(*expected_hook).generation();
        return r;
    }
    return reload(engine, program);
}

std::uint64_t unload(Engine& engine, HookKind hook) {
    std::lock_guard lock(engine.reload_mutex());
    return engine.slot(hook).swap(nullptr);
}

SwapStats measure_swap(Engine& engine, const Program& program, std::uint64_t iterations, bool under_load) {
    std::atomic<bool> stop{false};
    std::thread load;
    if (under_load) {
        load = std::thread([&] {
            std::uint64_t i = 0;
            while (!stop.load(std::memory_order_relaxed)) {
                if (program.hook == HookKind::TUNER) {
                    engine.invoke_tuner(i, Collective::ALLREDUCE, 1u << 20, 8);
                } else {
                    auto guard = engine.slot(program.hook).acquire();
                }
                ++i;
            }
        });
    }

    SwapStats stats;
    stats.iterations = iterations;
    const auto g0 = engine.slot(program.hook).generation();
    std::vector<double> swap_us, total_ms, verify_ms;
    swap_us.reserve(iterations);
    total_ms.reserve(iterations);
    verify_ms.reserve(iterations);
    for (std::uint64_t i = 0; i < iterations; ++i) {
        auto r = reload(engine, program);
        if (!r.ok()) continue;
        swap_us.push_back(r.swap_us);
        total_ms.push_back(r.total_ms);
        verify_ms.push_back(r.verify_ms);
    }
    stop = true;
    if (load.joinable()) load.join();

    stats.generation_delta = engine.slot(program.hook).generation() - g0;
    stats.swap_us_p50 = percentile(swap_us, 0.50);
    stats.swap_us_p99 = percentile(swap_us, 0.99);
    stats.total_reload_ms_p50 = percentile(total_ms, 0.50);
    stats.verify_ms_p50 = percentile(verify_ms, 0.50);
    return stats;
}

bool StressReport::ok() const {
    return lost == 0 && invalid_decisions == 0 && monotonicity_violations == 0 && calls_completed == calls_issued &&
           unsafe_reclaims == 0 && (!reject_attempted || reject_preserved);
}

namespace {

struct CallRecord {
    std::uint64_t generation;
    std::uint64_t msg_size;
    Decision decision;
};

constexpr std::uint64_t STRESS_SIZES[] = {16 * 1024, 1u << 20, 64u << 20};

} // namespace

StressReport reload_stress(const StressConfig& config, const StressProgram& a, const StressProgram& b,
                           const Program& unsafe) {
    if (a.program.hook != HookKind::TUNER || b.program.hook != HookKind::TUNER) {
        throw std::invalid_argument("reload_stress: both swap programs must target the tuner hook");
    }
    const unsigned threads = std::max(1u, config.threads);
    Engine engine;
    StressReport report;
    const auto start = clock_type::now();

    auto first = reload(engine, a.program);
    if (!first.ok()) throw std::invalid_argument("reload_stress: program a failed to load: " + first.error);
    report.generation_start = first.generation;

    // program_of[g - generation_start]: 0 for a, 1 for b. Written only by
    // the reloader; read after join.
    std::vector<int> program_of(config.swaps + 1, -1);
    program_of[0] = 0;

    // Both sides pace on the call counter so swaps interleave with calls even
    // on a single core: swap s happens once (s + 1) * calls / (swaps + 1)
    // calls completed, and invokers wait at that mark until it has.
    std::atomic<std::uint64_t> completed{0};
    std::atomic<std::uint64_t> swaps_done{0};
    auto mark = [&](std::uint64_t s) { return (s + 1) * config.calls / (config.swaps + 1); };
    std::vector<std::vector<CallRecord>> records(threads);
    std::vector<std::uint64_t> thread_lost(threads, 0);

    std::vector<std::thread> invokers;
    for (unsigned t = 0; t < threads; ++t) {
        const std::uint64_t quota = config.calls / threads + (t < config.calls % threads ? 1 : 0);
        report.calls_issued += quota;
        invokers.emplace_back([&, t, quota] {
            auto& out = records[t];
            out.reserve(quota);
            for (std::uint64_t k = 0; k < quota; ++k) {
                for (;;) {
                    const auto s = swaps_done.load(std::memory_order_acquire);
                    if (s >= config.swaps || completed.load(std::memory_order_relaxed) < mark(s)) break;
                    std::this_thread::yield();
                }
                const auto size = STRESS_SIZES[(k + t) % 3];
                try {
                    auto r = engine.invoke_tuner(0x1000 + t, Collective::ALLREDUCE, size, 8);
                    out.push_back({r.generation, size, r.decision});
                } catch (...) {
                    ++thread_lost[t];
                }
                completed.fetch_add(1, std::memory_order_relaxed);
            }
        });
    }

    std::vector<double> swap_us;
    std::thread reloader([&] {
        const std::uint64_t reject_at = config.inject_reject ? config.swaps / 2 : config.swaps + 1;
        for (std::uint64_t s = 0; s < config.swaps; ++s) {
            while (completed.load(std::memory_order_relaxed) < mark(s)) std::this_thread::yield();
            if (s == reject_at) {
                report.reject_attempted = true;
                const auto before = engine.invoke_tuner(0x42, Collective::ALLREDUCE, 1u << 20, 8);
                const auto g_other = engine.slot(unsafe.hook).generation();
                auto r = reload(engine, unsafe);
                const auto after = engine.invoke_tuner(0x42, Collective::ALLREDUCE, 1u << 20, 8);
                report.reject_preserved = r.outcome == ReloadOutcome::REJECTED && before.decision == after.decision &&
                                          before.generation == after.generation &&
                                          engine.slot(unsafe.hook).generation() == g_other;
            }
            const bool to_b = (s % 2) == 0;
            auto r = reload(engine, to_b ? b.program : a.program);
            if (r.ok()) {
                program_of[r.generation - report.generation_start] = to_b ? 1 : 0;
                swap_us.push_back(r.swap_us);
                ++report.swaps;
            }
            swaps_done.store(s + 1, std::memory_order_release);
        }
    });

    for (auto& th : invokers) th.join();
    reloader.join();

    report.generation_end = engine.slot(HookKind::TUNER).generation();
    report.unsafe_reclaims = engine.slot(HookKind::TUNER).unsafe_reclaims();
    std::set<std::uint64_t> seen;
    const std::uint32_t max_ch = engine.max_channels();
    for (unsigned t = 0; t < threads; ++t) {
        report.lost += thread_lost[t];
        report.calls_completed += records[t].size();
        std::uint64_t last = 0;
        for (const auto& rec : records[t]) {
            if (rec.generation < last) ++report.monotonicity_violations;
            last = std::max(last, rec.generation);
            seen.insert(rec.generation);
            const auto idx = rec.generation - report.generation_start;
            if (rec.generation < report.generation_start || idx >= program_of.size() || program_of[idx] < 0) {
                ++report.invalid_decisions;
                continue;
            }
            const auto& oracle = program_of[idx] == 0 ? a.oracle : b.oracle;
            if (!(rec.decision == oracle(rec.msg_size, max_ch))) ++report.invalid_decisions;
        }
    }
    report.distinct_generations_observed = seen.size();
    report.swap_us_p50 = percentile(swap_us, 0.50);
    report.swap_us_p99 = percentile(swap_us, 0.99);
    report.seconds = std::chrono::duration<double>(clock_type::now() - start).count();
    return report;
}

} // namespace cclpol
