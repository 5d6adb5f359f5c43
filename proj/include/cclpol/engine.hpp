// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <span>
#include <string>

#include "cclpol/context.hpp"
#include "cclpol/maps.hpp"
#include "cclpol/perf_model.hpp"
#include "cclpol/slot.hpp"
#include "cclpol/verifier.hpp"
#include "cclpol/vm.hpp"

namespace cclpol {

/// Upper 32 bits of handle * 0x9E3779B97F4A7C15 (mod 2^64).
constexpr std::uint32_t derive_comm_id(std::uint64_t handle) {
    return static_cast<std::uint32_t>((handle * 0x9E3779B97F4A7C15ull) >> 32);
}

struct Decision {
    Algorithm algorithm = Algorithm::NVLS;
    Protocol protocol = Protocol::SIMPLE;
    std::uint32_t n_channels = 32;
    bool deferred = true; // algorithm and protocol came from the host default

    bool operator==(const Decision&) const = default;
};

/// Host-facing algorithm x protocol cost matrix; the decision is its argmin.
struct CostTable {
    static constexpr double SENTINEL = 1e9;

    std::array<std::array<double, NUM_PROTOCOLS>, NUM_ALGORITHMS> cost{};
    bool deferred = true;

    /// Host default costs, minimal at NVLS/SIMPLE.
    static CostTable host_default();
    /// 0.0 at (algo, proto), SENTINEL elsewhere.
    static CostTable prefer(Algorithm algo, Protocol proto);

    std::pair<Algorithm, Protocol> argmin() const;
};

/// Policy outputs as read back from the tuner context.
struct TunerOutputs {
    std::uint32_t algorithm = UNSET;
    std::uint32_t protocol = UNSET;
    std::uint32_t n_channels = 0;
};

struct Translation {
    Decision decision;
    CostTable table;
};

/// Out-of-range enum values count as UNSET. Algorithm without protocol gets
/// SIMPLE; protocol without algorithm gets the host default algorithm.
/// Channels: 0 means max_channels, anything else is clamped to [1, max].
Translation translate_outputs(const TunerOutputs& out, std::uint32_t max_channels);

struct TunerResult {
    Decision decision;
    CostTable table;
    std::uint64_t generation = 0;
    std::int64_t return_code = 0;
};

struct CollectiveResult {
    std::uint32_t comm_id = 0;
    Collective collective = Collective::ALLREDUCE;
    std::uint64_t msg_size = 0;
    Decision decision;
    double bus_gbps = 0;
    double latency_ns = 0;          // modeled
    double observed_latency_ns = 0; // after contention, as reported to the profiler
    std::uint64_t generation = 0;
    std::string policy_name;
};

enum class NetDirection : std::uint32_t { SEND = 0, RECV = 1 };

/// Connected AF_UNIX stream pair standing in for a network connection.
class LoopbackConnection {
  public:
    explicit LoopbackConnection(std::uint32_t conn_id);
    ~LoopbackConnection();
    LoopbackConnection(const LoopbackConnection&) = delete;
    LoopbackConnection& operator=(const LoopbackConnection&) = delete;

    std::uint32_t id() const { return id_; }
    /// Pushes `payload` through the pair and reads it back into `sink`,
    /// wrapping when `sink` is shorter than `payload`.
    /// Throws std::system_error on transport failure.
    std::size_t transfer(std::span<const std::uint8_t> payload, std::span<std::uint8_t> sink);

  private:
    std::uint32_t id_;
    int fds_[2] = {-1, -1};
};

struct EngineOptions {
    PerfModel model = PerfModel::builtin();
    std::uint32_t max_channels = 0; // 0: take the model's value
    VerifierConfig verifier{};
};

/// Simulated collective library host with one program slot per hook.
class Engine {
  public:
    explicit Engine(EngineOptions options = {});

    const PerfModel& model() const { return options_.model; }
    std::uint32_t max_channels() const { return options_.max_channels; }
    const VerifierConfig& verifier_config() const { return options_.verifier; }
    MapRegistry& maps() { return maps_; }
    ActiveSlot& slot(HookKind hook) { return slots_[static_cast<std::size_t>(hook)]; }
    std::mutex& reload_mutex() { return reload_mutex_; }
    TraceRing& trace() { return trace_; }

    TunerResult invoke_tuner(std::uint64_t comm_handle, Collective coll, std::uint64_t msg_size, std::uint32_t n_ranks,
                             std::uint32_t max_channels);
    TunerResult invoke_tuner(std::uint64_t comm_handle, Collective coll, std::uint64_t msg_size, std::uint32_t n_ranks) {
        return invoke_tuner(comm_handle, coll, msg_size, n_ranks, options_.max_channels);
    }

    /// Same context construction and translation as invoke_tuner, with a
    /// host-compiled policy in place of the VM.
    using NativePolicy = void (*)(ContextBuffer&);
    TunerResult invoke_native(NativePolicy policy, std::uint64_t comm_handle, Collective coll, std::uint64_t msg_size,
                              std::uint32_t n_ranks);

    /// Decides, models the collective, then reports a profiler event whose
    /// latency is the modeled latency times `latency_multiplier`.
    CollectiveResult run_collective(std::uint64_t comm_handle, Collective coll, std::uint64_t msg_size,
                                    std::uint32_t n_ranks, double latency_multiplier = 1.0);

    double model_bus_bandwidth(const Decision& d, std::uint64_t msg_size) const;

    /// Moves the payload over the connection; an active NET_TX/NET_RX program
    /// observes each call. The program's return code is ignored.
    std::size_t net_transfer(LoopbackConnection& conn, std::span<const std::uint8_t> payload, NetDirection dir);

  private:
    static ContextBuffer tuner_context(std::uint32_t comm_id, Collective coll, std::uint64_t msg_size, std::uint32_t n_ranks);
    TunerResult finish(const ContextBuffer& ctx, std::uint32_t max_channels, std::uint64_t generation, std::int64_t rc) const;

    EngineOptions options_;
    MapRegistry maps_;
    std::array<ActiveSlot, 4> slots_;
    std::mutex reload_mutex_;
    TraceRing trace_;
    std::vector<std::uint8_t> net_sink_;
};

} // namespace cclpol
