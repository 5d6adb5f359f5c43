// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/engine.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <system_error>

namespace cclpol {

CostTable CostTable::host_default() {
    CostTable t;
    for (auto& row : t.cost) row.fill(10.0);
    t.cost[static_cast<std::size_t>(Algorithm::NVLS)][static_cast<std::size_t>(Protocol::SIMPLE)] = 1.0;
    t.deferred = true;
    return t;
}

CostTable CostTable::prefer(Algorithm algo, Protocol proto) {
    CostTable t;
    for (auto& row : t.cost) row.fill(SENTINEL);
    t.cost[static_cast<std::size_t>(algo)][static_cast<std::size_t>(proto)] = 0.0;
    t.deferred = false;
    return t;
}

std::pair<Algorithm, Protocol> CostTable::argmin() const {
    std::size_t best_a = 0, best_p = 0;
    for (std::size_t a = 0; a < cost.size(); ++a) {
        for (std::size_t p = 0; p < cost[a].size(); ++p) {
            if (cost[a][p] < cost[best_a][best_p]) {
                best_a = a;
                best_p = p;
            }
        }
    }
    return {static_cast<Algorithm>(best_a), static_cast<Protocol>(best_p)};
}

Translation translate_outputs(const TunerOutputs& out, std::uint32_t max_channels) {
    const bool algo_set = out.algorithm < static_cast<std::uint32_t>(NUM_ALGORITHMS);
    const bool proto_set = out.protocol < static_cast<std::uint32_t>(NUM_PROTOCOLS);
    Translation t;
    if (!algo_set && !proto_set) {
        t.table = CostTable::host_default();
    } else {
        const auto algo = algo_set ? static_cast<Algorithm>(out.algorithm) : CostTable::host_default().argmin().first;
        const auto proto = proto_set ? static_cast<Protocol>(out.protocol) : Protocol::SIMPLE;
        t.table = CostTable::prefer(algo, proto);
    }
    const auto [algo, proto] = t.table.argmin();
    t.decision.algorithm = algo;
    t.decision.protocol = proto;
    t.decision.deferred = t.table.deferred;
    const std::uint32_t cap = std::max<std::uint32_t>(max_channels, 1);
    t.decision.n_channels = out.n_channels == 0 ? cap : std::clamp<std::uint32_t>(out.n_channels, 1, cap);
    return t;
}

LoopbackConnection::LoopbackConnection(std::uint32_t conn_id) : id_(conn_id) {
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds_) != 0) {
        throw std::system_error(errno, std::generic_category(), "socketpair");
    }
}

LoopbackConnection::~LoopbackConnection() {
    for (int fd : fds_) {
        if (fd >= 0) ::close(fd);
    }
}

std::size_t LoopbackConnection::transfer(std::span<const std::uint8_t> payload, std::span<std::uint8_t> sink) {
    constexpr std::size_t CHUNK = 64 * 1024;
    std::size_t sent = 0, received = 0;
    while (received < payload.size()) {
        if (sent < payload.size() && sent - received < CHUNK) {
            const auto n = std::min(CHUNK - (sent - received), payload.size() - sent);
            const auto w = ::send(fds_[0], payload.data() + sent, n, MSG_NOSIGNAL);
            if (w < 0) {
                if (errno == EINTR) continue;
                throw std::system_error(errno, std::generic_category(), "send");
            }
            sent += static_cast<std::size_t>(w);
        }
        if (sink.empty()) throw std::system_error(EINVAL, std::generic_category(), "empty receive buffer");
        // A sink shorter than the payload is reused from the start.
        const auto off = received % sink.size();
        const auto want = std::min(sent - received, sink.size() - off);
        const auto r = ::recv(fds_[1], sink.data() + off, want, 0);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw std::system_error(errno, std::generic_category(), "recv");
        }
        if (r == 0) throw std::system_error(ECONNRESET, std::generic_category(), "recv");
        received += static_cast<std::size_t>(r);
    }
    return received;
}

Engine::Engine(EngineOptions options) : options_(std::move(options)), net_sink_(64 * 1024) {
    if (auto err = options_.model.validate(); !err.empty()) throw ConfigError("model: " + err);
    if (options_.max_channels == 0) options_.max_channels = options_.model.max_channels;
}

ContextBuffer Engine::tuner_context(std::uint32_t comm_id, Collective coll, std::uint64_t msg_size, std::uint32_t n_ranks) {
    ContextBuffer ctx;
    ctx.size = tuner_ctx::SIZE;
    ctx.put<std::uint32_t>(tuner_ctx::COLLECTIVE, static_cast<std::uint32_t>(coll));
    ctx.put<std::uint64_t>(tuner_ctx::MSG_SIZE, msg_size);
    ctx.put<std::uint32_t>(tuner_ctx::N_RANKS, n_ranks);
    ctx.put<std::uint32_t>(tuner_ctx::COMM_ID, comm_id);
    ctx.put<std::uint32_t>(tuner_ctx::ALGORITHM, UNSET);
    ctx.put<std::uint32_t>(tuner_ctx::PROTOCOL, UNSET);
    ctx.put<std::uint32_t>(tuner_ctx::N_CHANNELS, 0);
    return ctx;
}

TunerResult Engine::finish(const ContextBuffer& ctx, std::uint32_t max_channels, std::uint64_t generation,
                           std::int64_t rc) const {
    TunerOutputs out{ctx.get<std::uint32_t>(tuner_ctx::ALGORITHM), ctx.get<std::uint32_t>(tuner_ctx::PROTOCOL),
                     ctx.get<std::uint32_t>(tuner_ctx::N_CHANNELS)};
    auto t = translate_outputs(out, max_channels);
    return {t.decision, t.table, generation, rc};
}

TunerResult Engine::invoke_tuner(std::uint64_t comm_handle, Collective coll, std::uint64_t msg_size,
                                 std::uint32_t n_ranks, std::uint32_t max_channels) {
    auto ctx = tuner_context(derive_comm_id(comm_handle), coll, msg_size, n_ranks);
    auto guard = slot(HookKind::TUNER).acquire();
    std::int64_t rc = 0;
    if (const auto* prog = guard.program()) {
        rc = execute(*prog, ctx.span(), {ExecMode::FAST, &trace_});
    }
    return finish(ctx, max_channels, guard.generation().number, rc);
}

TunerResult Engine::invoke_native(NativePolicy policy, std::uint64_t comm_handle, Collective coll,
                                  std::uint64_t msg_size, std::uint32_t n_ranks) {
    auto ctx = tuner_context(derive_comm_id(comm_handle), coll, msg_size, n_ranks);
    policy(ctx);
    return finish(ctx, options_.max_channels, 0, 0);
}

double Engine::model_bus_bandwidth(const Decision& d, std::uint64_t msg_size) const {
    return options_.model.bus_bandwidth(d.algorithm, d.protocol, d.n_channels, msg_size);
}

CollectiveResult Engine::run_collective(std::uint64_t comm_handle, Collective coll, std::uint64_t msg_size,
                                        std::uint32_t n_ranks, double latency_multiplier) {
    CollectiveResult r;
    r.comm_id = derive_comm_id(comm_handle);
    r.collective = coll;
    r.msg_size = msg_size;
    {
        auto ctx = tuner_context(r.comm_id, coll, msg_size, n_ranks);
        auto guard = slot(HookKind::TUNER).acquire();
        std::int64_t rc = 0;
        if (const auto* prog = guard.program()) {
            rc = execute(*prog, ctx.span(), {ExecMode::FAST, &trace_});
            r.policy_name = prog->program.name;
        } else {
            r.policy_name = "default";
        }
        auto t = finish(ctx, options_.max_channels, guard.generation().number, rc);
        r.decision = t.decision;
        r.generation = t.generation;
    }
    r.bus_gbps = model_bus_bandwidth(r.decision, msg_size);
    r.latency_ns = transfer_latency_ns(bus_bytes(coll, msg_size, n_ranks), r.bus_gbps);
    r.observed_latency_ns = r.latency_ns * latency_multiplier;

    auto guard = slot(HookKind::PROFILER).acquire();
    if (const auto* prog = guard.program()) {
        ContextBuffer ev;
        ev.size = profiler_ctx::SIZE;
        ev.put<std::uint32_t>(profiler_ctx::COMM_ID, r.comm_id);
        ev.put<std::uint64_t>(profiler_ctx::LATENCY_NS, static_cast<std::uint64_t>(r.observed_latency_ns));
        ev.put<std::uint32_t>(profiler_ctx::N_CHANNELS, r.decision.n_channels);
        ev.put<std::uint32_t>(profiler_ctx::COLLECTIVE, static_cast<std::uint32_t>(coll));
        ev.put<std::uint64_t>(profiler_ctx::MSG_SIZE, msg_size);
        execute(*prog, ev.span(), {ExecMode::FAST, &trace_});
    }
    return r;
}

std::size_t Engine::net_transfer(LoopbackConnection& conn, std::span<const std::uint8_t> payload, NetDirection dir) {
    const auto moved = conn.transfer(payload, net_sink_);
    auto guard = slot(dir == NetDirection::SEND ? HookKind::NET_TX : HookKind::NET_RX).acquire();
    if (const auto* prog = guard.program()) {
        ContextBuffer ctx;
        ctx.size = net_ctx::SIZE;
        ctx.put<std::uint32_t>(net_ctx::CONN_ID, conn.id());
        ctx.put<std::uint64_t>(net_ctx::BYTES, moved);
        ctx.put<std::uint32_t>(net_ctx::DIRECTION, static_cast<std::uint32_t>(dir));
        execute(*prog, ctx.span(), {ExecMode::FAST, &trace_});
    }
    return moved;
}

} // namespace cclpol
