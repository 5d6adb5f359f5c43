// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cclpol/isa.hpp"

namespace cclpol {

// Numeric encodings shared by the host and policy authors.
enum class Collective : std::uint32_t { ALLREDUCE = 0, ALLGATHER = 1, BROADCAST = 2, REDUCESCATTER = 3 };
enum class Algorithm : std::uint32_t { TREE = 0, RING = 1, NVLS = 2 };
enum class Protocol : std::uint32_t { LL = 0, LL128 = 1, SIMPLE = 2 };

constexpr std::uint32_t UNSET = 0xFFFFFFFFu;
constexpr int NUM_ALGORITHMS = 3;
constexpr int NUM_PROTOCOLS = 3;

std::string_view to_string(Collective c);
std::string_view to_string(Algorithm a);
std::string_view to_string(Protocol p);
bool parse_collective(std::string_view text, Collective& out);

/// Byte region handed to a policy in r1. Writes are legal only inside
/// [writable_begin, writable_end).
struct ContextLayout {
    std::uint32_t size{};
    std::uint32_t writable_begin{};
    std::uint32_t writable_end{};

    bool writable(std::int64_t begin, std::int64_t end) const {
        return begin >= writable_begin && end <= writable_end && begin < end;
    }
};

// Tuner context: inputs are read-only, outputs start UNSET.
namespace tuner_ctx {
constexpr std::uint32_t COLLECTIVE = 0;  // u32
constexpr std::uint32_t MSG_SIZE = 8;    // u64
constexpr std::uint32_t N_RANKS = 16;    // u32
constexpr std::uint32_t COMM_ID = 20;    // u32
constexpr std::uint32_t ALGORITHM = 24;  // u32
constexpr std::uint32_t PROTOCOL = 28;   // u32
constexpr std::uint32_t N_CHANNELS = 32; // u32, 0 = unset
constexpr std::uint32_t SIZE = 36;
} // namespace tuner_ctx

namespace profiler_ctx {
constexpr std::uint32_t COMM_ID = 0;     // u32
constexpr std::uint32_t LATENCY_NS = 8;  // u64
constexpr std::uint32_t N_CHANNELS = 16; // u32
constexpr std::uint32_t COLLECTIVE = 20; // u32
constexpr std::uint32_t MSG_SIZE = 24;   // u64
constexpr std::uint32_t SIZE = 32;
} // namespace profiler_ctx

namespace net_ctx {
constexpr std::uint32_t CONN_ID = 0;    // u32
constexpr std::uint32_t BYTES = 8;      // u64
constexpr std::uint32_t DIRECTION = 16; // u32, 0 = send, 1 = recv
constexpr std::uint32_t SIZE = 20;
} // namespace net_ctx

ContextLayout layout_for(HookKind hook);

/// Fixed-size, 8-byte aligned backing store for one hook invocation.
struct ContextBuffer {
    alignas(8) std::array<std::uint8_t, 40> bytes{};
    std::uint32_t size{};

    std::span<std::uint8_t> span() { return {bytes.data(), size}; }
    std::span<const std::uint8_t> span() const { return {bytes.data(), size}; }

    template <typename T>
    void put(std::uint32_t offset, T value) {
        std::memcpy(bytes.data() + offset, &value, sizeof(T));
    }
    template <typename T>
    T get(std::uint32_t offset) const {
        T v;
        std::memcpy(&v, bytes.data() + offset, sizeof(T));
        return v;
    }
};

// Helper ids are stable across releases.
namespace helper {
constexpr std::int32_t MAP_LOOKUP = 1;
constexpr std::int32_t MAP_UPDATE = 2;
constexpr std::int32_t MAP_DELETE = 3;
constexpr std::int32_t TRACE_LOG = 6;
} // namespace helper

std::string_view helper_name(std::int32_t id);

/// Helper ids a program attached to `hook` may call.
std::span<const std::int32_t> helper_whitelist(HookKind hook);
bool helper_allowed(HookKind hook, std::int32_t id);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on odd length or non-hex characters.
std::vector<std::uint8_t> from_hex(std::string_view text);

} // namespace cclpol
