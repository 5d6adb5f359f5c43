// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/context.hpp"

#include <algorithm>
#include <stdexcept>

namespace cclpol {

std::string_view to_string(Collective c) {
    switch (c) {
    case Collective::ALLREDUCE: return "allreduce";
    case Collective::ALLGATHER: return "allgather";
    case Collective::BROADCAST: return "broadcast";
    case Collective::REDUCESCATTER: return "reducescatter";
    }
    return "?";
}

std::string_view to_string(Algorithm a) {
    switch (a) {
    case Algorithm::TREE: return "TREE";
    case Algorithm::RING: return "RING";
    case Algorithm::NVLS: return "NVLS";
    }
    return "?";
}

std::string_view to_string(Protocol p) {
    switch (p) {
    case Protocol::LL: return "LL";
    case Protocol::LL128: return "LL128";
    case Protocol::SIMPLE: return "SIMPLE";
    }
    return "?";
}

bool parse_collective(std::string_view text, Collective& out) {
    for (auto c : {Collective::ALLREDUCE, Collective::ALLGATHER, Collective::BROADCAST, Collective::REDUCESCATTER}) {
        if (to_string(c) == text) {
            out = c;
            return true;
        }
    }
    return false;
}

ContextLayout layout_for(HookKind hook) {
    switch (hook) {
    case HookKind::TUNER: return {tuner_ctx::SIZE, tuner_ctx::ALGORITHM, tuner_ctx::SIZE};
    case HookKind::PROFILER: return {profiler_ctx::SIZE, 0, 0};
    case HookKind::NET_TX:
    case HookKind::NET_RX: return {net_ctx::SIZE, 0, 0};
    }
    return {};
}

std::string_view helper_name(std::int32_t id) {
    switch (id) {
    case helper::MAP_LOOKUP: return "map_lookup_elem";
    case helper::MAP_UPDATE: return "map_update_elem";
    case helper::MAP_DELETE: return "map_delete_elem";
    case helper::TRACE_LOG: return "trace_log";
    default: return "unknown";
    }
}

namespace {
constexpr std::int32_t policy_helpers[] = {helper::MAP_LOOKUP, helper::MAP_UPDATE, helper::MAP_DELETE, helper::TRACE_LOG};
// Data-path hooks only observe; no deletions from the send/recv path.
constexpr std::int32_t net_helpers[] = {helper::MAP_LOOKUP, helper::MAP_UPDATE, helper::TRACE_LOG};
} // namespace

std::span<const std::int32_t> helper_whitelist(HookKind hook) {
    if (hook == HookKind::NET_TX || hook == HookKind::NET_RX) {
        return net_helpers;
    }
    return policy_helpers;
}

bool helper_allowed(HookKind hook, std::int32_t id) {
    auto wl = helper_whitelist(hook);
    return std::find(wl.begin(), wl.end(), id) != wl.end();
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view text) {
    if (text.size() % 2 != 0) {
        throw std::invalid_argument("hex string has odd length");
    }
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument(std::string("bad hex digit '") + c + "'");
    };
    std::vector<std::uint8_t> out(text.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(nibble(text[2 * i]) << 4 | nibble(text[2 * i + 1]));
    }
    return out;
}

} // namespace cclpol
