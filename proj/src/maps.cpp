// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/maps.hpp"

#include <algorithm>
#include <cstring>
#include <new>
#include <thread>

#include "cclpol/context.hpp"

namespace cclpol {

std::string_view to_string(MapStatus s) {
    switch (s) {
    case MapStatus::OK: return "OK";
    case MapStatus::ABSENT: return "ABSENT";
    case MapStatus::E_FULL: return "E_FULL";
    case MapStatus::E_OOB: return "E_OOB";
    case MapStatus::E_LENGTH: return "E_LENGTH";
    case MapStatus::E_UNSUPPORTED: return "E_UNSUPPORTED";
    }
    return "?";
}

std::int64_t helper_code(MapStatus s) {
    switch (s) {
    case MapStatus::OK: return 0;
    case MapStatus::ABSENT: return -2;        // ENOENT
    case MapStatus::E_FULL: return -7;        // E2BIG
    case MapStatus::E_OOB: return -7;         // E2BIG, as for array index overflow
    case MapStatus::E_LENGTH: return -22;     // EINVAL
    case MapStatus::E_UNSUPPORTED: return -22; // EINVAL
    }
    return -22;
}

namespace {

constexpr int SPINS_BEFORE_YIELD = 64;

std::string_view key_view(std::span<const std::uint8_t> key) {
    return {reinterpret_cast<const char*>(key.data()), key.size()};
}

} // namespace

MapInstance::MapInstance(MapDescriptor desc) : desc_(std::move(desc)), stride_(0), slab_(nullptr) {
    if (auto err = validate(desc_); !err.empty()) {
        throw MapError("map '" + desc_.name + "': " + err);
    }
    stride_ = (static_cast<std::size_t>(desc_.value_size) + 7) / 8 * 8;
    const std::size_t words = stride_ / 8 * desc_.max_entries;
    slab_ = new std::uint64_t[words]();
    locks_ = std::make_unique<std::atomic<std::uint32_t>[]>(desc_.max_entries);
    for (std::uint32_t i = 0; i < desc_.max_entries; ++i) locks_[i].store(0, std::memory_order_relaxed);
    if (desc_.kind == MapKind::HASH) {
        free_.reserve(desc_.max_entries);
        for (std::uint32_t i = desc_.max_entries; i-- > 0;) free_.push_back(i);
        index_.reserve(desc_.max_entries);
    }
}

MapInstance::~MapInstance() { delete[] slab_; }

void MapInstance::lock_slot(std::uint32_t slot) const {
    auto& l = locks_[slot];
    int spins = 0;
    while (l.exchange(1, std::memory_order_acquire) != 0) {
        while (l.load(std::memory_order_relaxed) != 0) {
            if (++spins >= SPINS_BEFORE_YIELD) {
                spins = 0;
                std::this_thread::yield();
            }
        }
    }
}

void MapInstance::unlock_slot(std::uint32_t slot) const { locks_[slot].store(0, std::memory_order_release); }

void MapInstance::copy_out(std::uint32_t slot, std::uint8_t* dst) const {
    const std::size_t words = stride_ / 8;
    std::uint64_t* base = slab_ + slot * words;
    lock_slot(slot);
    std::size_t remaining = desc_.value_size;
    for (std::size_t w = 0; w < words; ++w) {
        std::uint64_t v = std::atomic_ref<std::uint64_t>(base[w]).load(std::memory_order_relaxed);
        const std::size_t n = std::min<std::size_t>(8, remaining);
        std::memcpy(dst + w * 8, &v, n);
        remaining -= n;
    }
    unlock_slot(slot);
}

void MapInstance::copy_in(std::uint32_t slot, const std::uint8_t* src) {
    const std::size_t words = stride_ / 8;
    std::uint64_t* base = slab_ + slot * words;
    lock_slot(slot);
    std::size_t remaining = desc_.value_size;
    for (std::size_t w = 0; w < words; ++w) {
        std::uint64_t v = 0;
        const std::size_t n = std::min<std::size_t>(8, remaining);
        std::memcpy(&v, src + w * 8, n);
        remaining -= n;
        std::atomic_ref<std::uint64_t>(base[w]).store(v, std::memory_order_relaxed);
    }
    unlock_slot(slot);
}

MapStatus MapInstance::slot_for(std::span<const std::uint8_t> key, std::uint32_t& slot) const {
    if (key.size() != desc_.key_size) return MapStatus::E_LENGTH;
    if (desc_.kind == MapKind::ARRAY) {
        std::uint32_t idx;
        std::memcpy(&idx, key.data(), 4);
        if (idx >= desc_.max_entries) return MapStatus::E_OOB;
        slot = idx;
        return MapStatus::OK;
    }
    std::shared_lock lock(index_mutex_);
    auto it = index_.find(key_view(key));
    if (it == index_.end()) return MapStatus::ABSENT;
    slot = it->second;
    return MapStatus::OK;
}

MapStatus MapInstance::lookup(std::span<const std::uint8_t> key, std::span<std::uint8_t> out) const {
    if (out.size() != desc_.value_size) return MapStatus::E_LENGTH;
    std::uint32_t slot = 0;
    auto st = slot_for(key, slot);
    if (st == MapStatus::E_OOB) return MapStatus::ABSENT;
    if (st != MapStatus::OK) return st;
    copy_out(slot, out.data());
    return MapStatus::OK;
}

std::optional<std::vector<std::uint8_t>> MapInstance::lookup(std::span<const std::uint8_t> key) const {
    std::vector<std::uint8_t> out(desc_.value_size);
    auto st = lookup(key, out);
    if (st == MapStatus::E_LENGTH) throw MapError("key length mismatch for map '" + desc_.name + "'");
    if (st != MapStatus::OK) return std::nullopt;
    return out;
}

MapStatus MapInstance::update(std::span<const std::uint8_t> key, std::span<const std::uint8_t> value) {
    if (key.size() != desc_.key_size || value.size() != desc_.value_size) return MapStatus::E_LENGTH;
    std::uint32_t slot = 0;
    auto st = slot_for(key, slot);
    if (st == MapStatus::OK) {
        copy_in(slot, value.data());
        return MapStatus::OK;
    }
    if (st != MapStatus::ABSENT) return st;

    std::unique_lock lock(index_mutex_);
    const auto k = key_view(key);
    if (auto it = index_.find(k); it != index_.end()) {
        slot = it->second; // inserted concurrently
    } else {
        if (free_.empty()) return MapStatus::E_FULL;
        slot = free_.back();
        free_.pop_back();
        // Fill before publishing so readers never see a stale value.
        copy_in(slot, value.data());
        index_.emplace(std::string(k), slot);
        return MapStatus::OK;
    }
    lock.unlock();
    copy_in(slot, value.data());
    return MapStatus::OK;
}

MapStatus MapInstance::remove(std::span<const std::uint8_t> key) {
    if (key.size() != desc_.key_size) return MapStatus::E_LENGTH;
    if (desc_.kind == MapKind::ARRAY) return MapStatus::E_UNSUPPORTED;
    std::unique_lock lock(index_mutex_);
    auto it = index_.find(key_view(key));
    if (it == index_.end()) return MapStatus::ABSENT;
    free_.push_back(it->second);
    index_.erase(it);
    return MapStatus::OK;
}

std::uint8_t* MapInstance::lookup_ref(const std::uint8_t* key) {
    std::uint32_t slot = 0;
    if (slot_for({key, desc_.key_size}, slot) != MapStatus::OK) return nullptr;
    return reinterpret_cast<std::uint8_t*>(slab_ + slot * (stride_ / 8));
}

std::size_t MapInstance::size() const {
    if (desc_.kind == MapKind::ARRAY) return desc_.max_entries;
    std::shared_lock lock(index_mutex_);
    return index_.size();
}

std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> MapInstance::entries() const {
    std::vector<std::pair<std::vector<std::uint8_t>, std::uint32_t>> slots;
    if (desc_.kind == MapKind::ARRAY) {
        for (std::uint32_t i = 0; i < desc_.max_entries; ++i) {
            std::vector<std::uint8_t> k(4);
            std::memcpy(k.data(), &i, 4);
            slots.emplace_back(std::move(k), i);
        }
    } else {
        std::shared_lock lock(index_mutex_);
        for (const auto& [k, s] : index_) slots.emplace_back(std::vector<std::uint8_t>(k.begin(), k.end()), s);
        std::sort(slots.begin(), slots.end());
    }
    std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> out;
    out.reserve(slots.size());
    for (auto& [k, s] : slots) {
        std::vector<std::uint8_t> v(desc_.value_size);
        copy_out(s, v.data());
        out.emplace_back(std::move(k), std::move(v));
    }
    return out;
}

std::shared_ptr<MapInstance> MapRegistry::get_or_create(const MapDescriptor& desc) {
    std::lock_guard lock(mutex_);
    if (auto it = maps_.find(desc.name); it != maps_.end()) {
        if (!(it->second->descriptor() == desc)) {
            throw MapError("map '" + desc.name + "' already exists with a different descriptor");
        }
        return it->second;
    }
    auto inst = std::make_shared<MapInstance>(desc);
    maps_.emplace(desc.name, inst);
    return inst;
}

std::string MapRegistry::check(const Program& program) const {
    std::lock_guard lock(mutex_);
    for (const auto& desc : program.maps) {
        if (auto err = validate(desc); !err.empty()) return "map '" + desc.name + "': " + err;
        auto it = maps_.find(desc.name);
        if (it != maps_.end() && !(it->second->descriptor() == desc)) {
            return "map '" + desc.name + "' already exists with a different descriptor";
        }
    }
    return {};
}

std::vector<std::shared_ptr<MapInstance>> MapRegistry::bind(const Program& program) {
    if (auto err = check(program); !err.empty()) throw MapError(err);
    std::vector<std::shared_ptr<MapInstance>> out;
    out.reserve(program.maps.size());
    for (const auto& desc : program.maps) out.push_back(get_or_create(desc));
    return out;
}

std::shared_ptr<MapInstance> MapRegistry::find(std::string_view name) const {
    std::lock_guard lock(mutex_);
    auto it = maps_.find(name);
    return it == maps_.end() ? nullptr : it->second;
}

std::vector<std::string> MapRegistry::names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [name, _] : maps_) out.push_back(name);
    return out;
}

std::string MapRegistry::dump() const {
    std::vector<std::pair<std::string, std::shared_ptr<MapInstance>>> snapshot;
    {
        std::lock_guard lock(mutex_);
        snapshot.assign(maps_.begin(), maps_.end());
    }
    std::string out;
    for (const auto& [name, inst] : snapshot) {
        for (const auto& [k, v] : inst->entries()) {
            out += name + " " + to_hex(k) + " " + to_hex(v) + "\n";
        }
    }
    return out;
}

} // namespace cclpol
