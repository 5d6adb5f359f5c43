// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/bench.hpp"

#include <Eigen/Dense>

#include <alloca.h>
#include <chrono>
#include <cstring>
#include <memory>
#include <optional>
#include <stdexcept>

#include "cclpol/corpus.hpp"
#include "cclpol/reload.hpp"
#include "cclpol/stats.hpp"

namespace cclpol {

namespace {

using clock_type = std::chrono::steady_clock;

volatile std::uint32_t g_sink;

template <typename Invoke>
void time_block(std::vector<double>& samples, std::uint64_t n, Invoke& invoke) {
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto t0 = clock_type::now();
        const auto r = invoke();
        const auto t1 = clock_type::now();
        g_sink = r.decision.n_channels;
        samples.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
}

// Runs a block below `pad` extra bytes of stack. Varying the pad across
// blocks spreads the VM frame over many cache-set and 4K-alias positions, so
// one unlucky placement cannot shift a whole arm (Mytkowicz et al., ASPLOS'09).
template <typename Invoke>
[[gnu::noinline]] void time_block_padded(std::size_t pad, std::vector<double>& samples, std::uint64_t n,
                                         Invoke& invoke) {
    auto* p = static_cast<volatile std::uint8_t*>(alloca(pad + 16));
    p[0] = 0;
    time_block(samples, n, invoke);
}

BenchResult summarize_samples(std::vector<double> samples) {
    BenchResult out;
    out.calls = samples.size();
    const auto s = summarize(std::move(samples));
    out.p50_ns = s.p50;
    out.p99_ns = s.p99;
    out.mean_ns = s.mean;
    return out;
}

template <typename Invoke>
BenchResult time_calls(const BenchOptions& options, Invoke&& invoke) {
    for (std::uint64_t i = 0; i < options.warmup; ++i) g_sink = invoke().decision.n_channels;
    std::vector<double> samples;
    samples.reserve(options.calls);
    time_block(samples, options.calls, invoke);
    return summarize_samples(std::move(samples));
}

void native_size_aware(ContextBuffer& ctx) {
    const auto size = ctx.get<std::uint64_t>(tuner_ctx::MSG_SIZE);
    ctx.put<std::uint32_t>(tuner_ctx::ALGORITHM,
                           static_cast<std::uint32_t>(size > 32768 ? Algorithm::RING : Algorithm::TREE));
    ctx.put<std::uint32_t>(tuner_ctx::PROTOCOL, static_cast<std::uint32_t>(Protocol::SIMPLE));
}

} // namespace

void warm_maps(Engine& engine, const Program& program, std::uint64_t comm_handle) {
    const std::uint32_t comm_id = derive_comm_id(comm_handle);
    for (const auto& desc : program.maps) {
        if (desc.kind != MapKind::HASH || desc.key_size != 4) continue;
        auto map = engine.maps().get_or_create(desc);
        std::vector<std::uint8_t> key(4), value(desc.value_size, 0);
        std::memcpy(key.data(), &comm_id, 4);
        if (desc.value_size >= 16) {
            // latency_state: avg 500 us, 8 channels, 0 samples
            const std::uint64_t lat = 500'000;
            const std::uint32_t ch = 8;
            std::memcpy(value.data(), &lat, 8);
            std::memcpy(value.data() + 8, &ch, 4);
        } else if (desc.value_size >= 4) {
            const std::uint32_t v = 8;
            std::memcpy(value.data(), &v, 4);
        }
        map->update(key, value);
    }
}

BenchResult bench_policy(Engine& engine, const Program& program, const BenchOptions& options) {
    if (program.hook != HookKind::TUNER) throw std::invalid_argument("bench: policy must target the tuner hook");
    const auto r = reload(engine, program);
    if (!r.ok()) {
        throw std::invalid_argument("bench: cannot load " + program.name + ": " +
                                    (r.verdict && !r.verdict->accepted ? explain(*r.verdict) : r.error));
    }
    warm_maps(engine, program, options.comm_handle);
    auto out = time_calls(options, [&] {
        return engine.invoke_tuner(options.comm_handle, Collective::ALLREDUCE, options.msg_size, 8);
    });
    out.policy_name = program.name;
    out.n_lookup = count_helper_calls(program, helper::MAP_LOOKUP);
    out.n_update = count_helper_calls(program, helper::MAP_UPDATE);
    return out;
}

BenchResult bench_native(Engine& engine, const BenchOptions& options) {
    auto out = time_calls(options, [&] {
        return engine.invoke_native(native_size_aware, options.comm_handle, Collective::ALLREDUCE, options.msg_size, 8);
    });
    out.policy_name = "native";
    return out;
}

OverheadModel fit_overhead_model(std::span<const LadderPoint> points) {
    if (points.size() < 4) throw std::invalid_argument("overhead fit needs at least 4 ladder points");
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd x(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = points[static_cast<std::size_t>(i)];
        x(i, 0) = 1.0;
        x(i, 1) = p.n_lookup;
        x(i, 2) = p.n_update;
        y(i) = p.delta_ns;
    }
    const auto qr = x.colPivHouseholderQr();
    if (qr.rank() < 3) throw std::invalid_argument("overhead fit: design matrix is rank deficient");
    const Eigen::VectorXd beta = qr.solve(y);
    const Eigen::VectorXd resid = y - x * beta;
    const double ss_res = resid.squaredNorm();
    const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();

    OverheadModel m;
    m.base_ns = beta(0);
    m.per_lookup_ns = beta(1);
    m.per_update_ns = beta(2);
    m.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
    m.residual_rms_ns = std::sqrt(ss_res / static_cast<double>(n));
    return m;
}

OverheadModel fit_overhead_model(std::span<const BenchResult> results, double baseline_p50_ns) {
    std::vector<LadderPoint> points;
    points.reserve(results.size());
    for (const auto& r : results) {
        points.push_back({r.p50_ns - baseline_p50_ns, static_cast<double>(r.n_lookup), static_cast<double>(r.n_update)});
    }
    return fit_overhead_model(points);
}

std::vector<std::filesystem::path> ladder_policies(const std::filesystem::path& data_dir) {
    const auto safe = data_dir / "corpus" / "safe";
    return {safe / "noop.cclpol",          safe / "size_aware_v2.cclpol",     safe / "lookup_only.cclpol",
            safe / "lookup_update.cclpol", safe / "adaptive_channels.cclpol", safe / "slo_enforcer.cclpol"};
}

LadderReport run_ladder(std::span<const std::filesystem::path> policies, const BenchOptions& options) {
    // Arms are timed in interleaved blocks so slow drift in machine speed
    // lands on every arm equally.
    constexpr std::uint64_t BLOCK = 10'000;
    struct Arm {
        std::unique_ptr<Engine> engine = std::make_unique<Engine>();
        std::optional<Program> program;
        std::vector<double> samples;
    };
    std::vector<Arm> arms(policies.size() + 1);
    for (std::size_t i = 0; i < policies.size(); ++i) {
        auto& arm = arms[i + 1];
        arm.program = load_program(policies[i]);
        if (arm.program->hook != HookKind::TUNER) {
            throw std::invalid_argument("bench: " + policies[i].string() + " does not target the tuner hook");
        }
        const auto r = reload(*arm.engine, *arm.program);
        if (!r.ok()) {
            throw std::invalid_argument("bench: cannot load " + policies[i].string() + ": " +
                                        (r.verdict && !r.verdict->accepted ? explain(*r.verdict) : r.error));
        }
        warm_maps(*arm.engine, *arm.program, options.comm_handle);
    }

    auto invoke = [&](Arm& arm) {
        if (!arm.program) {
            return arm.engine->invoke_native(native_size_aware, options.comm_handle, Collective::ALLREDUCE,
                                             options.msg_size, 8);
        }
        return arm.engine->invoke_tuner(options.comm_handle, Collective::ALLREDUCE, options.msg_size, 8);
    };
    for (auto& arm : arms) {
        for (std::uint64_t i = 0; i < options.warmup; ++i) g_sink = invoke(arm).decision.n_channels;
        arm.samples.reserve(options.calls);
    }
    // 592 = 37 * 16: successive blocks visit distinct 16-byte offsets mod 4 KiB.
    std::size_t block = 0;
    for (std::uint64_t done = 0; done < options.calls; done += BLOCK, ++block) {
        const auto n = std::min(BLOCK, options.calls - done);
        const std::size_t pad = (block * 592) % 4096;
        for (auto& arm : arms) {
            auto call = [&] { return invoke(arm); };
            time_block_padded(pad, arm.samples, n, call);
        }
    }

    LadderReport report;
    report.native = summarize_samples(std::move(arms[0].samples));
    report.native.policy_name = "native";
    for (std::size_t i = 1; i < arms.size(); ++i) {
        auto r = summarize_samples(std::move(arms[i].samples));
        r.policy_name = arms[i].program->name;
        r.n_lookup = count_helper_calls(*arms[i].program, helper::MAP_LOOKUP);
        r.n_update = count_helper_calls(*arms[i].program, helper::MAP_UPDATE);
        report.policies.push_back(std::move(r));
    }
    if (report.policies.size() >= 4) report.fit = fit_overhead_model(report.policies, report.native.p50_ns);
    return report;
}

} // namespace cclpol
