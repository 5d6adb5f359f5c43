// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cclpol/isa.hpp"

namespace cclpol {

enum class MapStatus : std::uint8_t {
    OK,
    ABSENT,
    E_FULL,        // hash map at max_entries
    E_OOB,         // array index >= max_entries
    E_LENGTH,      // key or value length does not match the descriptor
    E_UNSUPPORTED, // delete on an array map
};

std::string_view to_string(MapStatus s);

/// Helper return code for a map status (0 on success, negative errno-style
/// value otherwise).
std::int64_t helper_code(MapStatus s);

class MapError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Fixed-capacity key/value store. Values live in a preallocated slab with an
/// 8-byte aligned slot per entry, so references handed to programs stay valid
/// for the lifetime of the map. Copies in and out of a slot hold the slot's
/// lock; in-place program writes are word-atomic only.
class MapInstance {
  public:
    /// Throws MapError when the descriptor is invalid.
    explicit MapInstance(MapDescriptor desc);
    ~MapInstance();

    MapInstance(const MapInstance&) = delete;
    MapInstance& operator=(const MapInstance&) = delete;

    const MapDescriptor& descriptor() const { return desc_; }

    /// Copies the value into `out` (value_size bytes). OK, ABSENT or E_LENGTH.
    MapStatus lookup(std::span<const std::uint8_t> key, std::span<std::uint8_t> out) const;
    std::optional<std::vector<std::uint8_t>> lookup(std::span<const std::uint8_t> key) const;

    MapStatus update(std::span<const std::uint8_t> key, std::span<const std::uint8_t> value);
    MapStatus remove(std::span<const std::uint8_t> key);

    /// Direct slot reference for the VM; `key` points at key_size bytes.
    /// Returns nullptr when absent.
    std::uint8_t* lookup_ref(const std::uint8_t* key);

    /// Present entries (always max_entries for arrays).
    std::size_t size() const;

    /// Snapshot of present entries, ordered by key bytes.
    std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> entries() const;

    std::size_t stride() const { return stride_; }

  private:
    MapStatus slot_for(std::span<const std::uint8_t> key, std::uint32_t& slot) const;
    void copy_out(std::uint32_t slot, std::uint8_t* dst) const;
    void copy_in(std::uint32_t slot, const std::uint8_t* src);
    void lock_slot(std::uint32_t slot) const;
    void unlock_slot(std::uint32_t slot) const;

    MapDescriptor desc_;
    std::size_t stride_;
    std::uint64_t* slab_;
    std::unique_ptr<std::atomic<std::uint32_t>[]> locks_;

    // HASH bookkeeping. Slots are recycled through free_; a deleted slot may
    // still be referenced by a running program, which stays memory safe.
    mutable std::shared_mutex index_mutex_;
    struct KeyHash {
        using is_transparent = void;
        std::size_t operator()(std::string_view k) const { return std::hash<std::string_view>{}(k); }
    };
    std::unordered_map<std::string, std::uint32_t, KeyHash, std::equal_to<>> index_;
    std::vector<std::uint32_t> free_;
};

/// Name-scoped set of maps shared by every program loaded into one engine.
class MapRegistry {
  public:
    /// Returns the existing instance for `desc.name` when the descriptors are
    /// identical, creates one when the name is new, throws MapError on a
    /// descriptor mismatch.
    std::shared_ptr<MapInstance> get_or_create(const MapDescriptor& desc);

    /// Empty when every map of `program` can be bound, otherwise the conflict.
    std::string check(const Program& program) const;

    /// Instances in LD_MAP slot order.
    std::vector<std::shared_ptr<MapInstance>> bind(const Program& program);

    std::shared_ptr<MapInstance> find(std::string_view name) const;
    std::vector<std::string> names() const;

    /// One line per entry: "<map> <key hex> <value hex>", maps sorted by name.
    std::string dump() const;

  private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<MapInstance>, std::less<>> maps_;
};

} // namespace cclpol
