// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <array>
#include <atomic>
#include <cstring>
#include <set>
#include <thread>

#include "cclpol/maps.hpp"

using namespace cclpol;

namespace {

std::array<std::uint8_t, 4> key32(std::uint32_t k) {
    std::array<std::uint8_t, 4> out;
    std::memcpy(out.data(), &k, 4);
    return out;
}

MapDescriptor array_desc(std::uint32_t value = 16, std::uint32_t entries = 8) {
    return {"a", MapKind::ARRAY, 4, value, entries};
}

MapDescriptor hash_desc(std::uint32_t entries = 64) { return {"h", MapKind::HASH, 4, 16, entries}; }

} // namespace

TEST_CASE("array maps start zeroed and fully populated", "[maps]") {
    MapInstance m(array_desc());
    CHECK(m.size() == 8);
    for (std::uint32_t i = 0; i < 8; ++i) {
        auto v = m.lookup(key32(i));
        REQUIRE(v.has_value());
        CHECK(*v == std::vector<std::uint8_t>(16, 0));
    }
    CHECK_FALSE(m.lookup(key32(8)).has_value());
    CHECK(m.entries().size() == 8);
}

TEST_CASE("hash maps start empty", "[maps]") {
    MapInstance m(hash_desc());
    CHECK(m.size() == 0);
    CHECK_FALSE(m.lookup(key32(3)).has_value());
    CHECK(m.entries().empty());
}

TEST_CASE("invalid descriptors are rejected", "[maps]") {
    CHECK_THROWS_AS(MapInstance(MapDescriptor{"x", MapKind::ARRAY, 8, 8, 4}), MapError);
    CHECK_THROWS_AS(MapInstance(MapDescriptor{"x", MapKind::HASH, 0, 8, 4}), MapError);
    CHECK_THROWS_AS(MapInstance(MapDescriptor{"x", MapKind::HASH, 4, 0, 4}), MapError);
    CHECK_THROWS_AS(MapInstance(MapDescriptor{"x", MapKind::HASH, 4, 8, 0}), MapError);
}

TEST_CASE("update then lookup returns the written bytes", "[maps]") {
    MapInstance h(hash_desc());
    std::vector<std::uint8_t> v(16);
    for (int i = 0; i < 16; ++i) v[i] = static_cast<std::uint8_t>(i * 7);
    CHECK(h.update(key32(42), v) == MapStatus::OK);
    CHECK(h.lookup(key32(42)) == v);
    CHECK(h.size() == 1);

    MapInstance a(array_desc());
    CHECK(a.update(key32(3), v) == MapStatus::OK);
    CHECK(a.lookup(key32(3)) == v);
    CHECK(a.update(key32(8), v) == MapStatus::E_OOB);
}

TEST_CASE("values that are not a multiple of eight round trip", "[maps]") {
    MapInstance m(MapDescriptor{"odd", MapKind::HASH, 3, 13, 4});
    std::vector<std::uint8_t> k = {1, 2, 3};
    std::vector<std::uint8_t> v(13);
    for (int i = 0; i < 13; ++i) v[i] = static_cast<std::uint8_t>(0xA0 + i);
    REQUIRE(m.update(k, v) == MapStatus::OK);
    CHECK(m.lookup(k) == v);
    CHECK(m.stride() == 16);
}

TEST_CASE("hash capacity is enforced", "[maps]") {
    MapInstance h(hash_desc(2));
    std::vector<std::uint8_t> v(16, 1);
    CHECK(h.update(key32(1), v) == MapStatus::OK);
    CHECK(h.update(key32(2), v) == MapStatus::OK);
    CHECK(h.update(key32(3), v) == MapStatus::E_FULL);
    CHECK(h.update(key32(1), std::vector<std::uint8_t>(16, 9)) == MapStatus::OK); // overwrite still fine
    CHECK(h.size() == 2);
    CHECK(h.remove(key32(2)) == MapStatus::OK);
    CHECK(h.update(key32(3), v) == MapStatus::OK);
    CHECK(h.size() == 2);
}

TEST_CASE("delete semantics", "[maps]") {
    MapInstance h(hash_desc());
    std::vector<std::uint8_t> v(16, 5);
    h.update(key32(7), v);
    CHECK(h.remove(key32(7)) == MapStatus::OK);
    CHECK_FALSE(h.lookup(key32(7)).has_value());
    CHECK(h.remove(key32(7)) == MapStatus::ABSENT);

    MapInstance a(array_desc());
    CHECK(a.remove(key32(0)) == MapStatus::E_UNSUPPORTED);
}

TEST_CASE("length mismatches are reported", "[maps]") {
    MapInstance h(hash_desc());
    std::vector<std::uint8_t> short_key(3), v(16), short_v(8);
    CHECK(h.update(short_key, v) == MapStatus::E_LENGTH);
    CHECK(h.update(key32(1), short_v) == MapStatus::E_LENGTH);
    CHECK(h.remove(short_key) == MapStatus::E_LENGTH);
    CHECK_THROWS_AS(h.lookup(short_key), MapError);
}

TEST_CASE("absent keys are distinguishable from zero values", "[maps]") {
    MapInstance h(hash_desc());
    h.update(key32(1), std::vector<std::uint8_t>(16, 0));
    CHECK(h.lookup(key32(1)).has_value());
    CHECK_FALSE(h.lookup(key32(2)).has_value());
    CHECK(h.lookup_ref(key32(2).data()) == nullptr);
    CHECK(h.lookup_ref(key32(1).data()) != nullptr);
}

TEST_CASE("lookup_ref gives stable aligned slot storage", "[maps]") {
    MapInstance h(hash_desc());
    h.update(key32(9), std::vector<std::uint8_t>(16, 0));
    auto* p = h.lookup_ref(key32(9).data());
    REQUIRE(p != nullptr);
    CHECK(reinterpret_cast<std::uintptr_t>(p) % 8 == 0);
    std::uint64_t x = 0x1122334455667788ull;
    std::memcpy(p, &x, 8);
    auto v = h.lookup(key32(9));
    REQUIRE(v);
    std::uint64_t y;
    std::memcpy(&y, v->data(), 8);
    CHECK(y == x);
    CHECK(h.lookup_ref(key32(9).data()) == p);
}

TEST_CASE("registry shares identical descriptors and rejects conflicts", "[maps]") {
    MapRegistry reg;
    MapDescriptor d{"latency_map", MapKind::HASH, 4, 16, 1024};
    auto a = reg.get_or_create(d);
    auto b = reg.get_or_create(d);
    CHECK(a == b);
    auto conflicting = d;
    conflicting.value_size = 24;
    CHECK_THROWS_AS(reg.get_or_create(conflicting), MapError);
    Program p;
    p.maps = {conflicting};
    CHECK_FALSE(reg.check(p).empty());
    CHECK(reg.names() == std::vector<std::string>{"latency_map"});
}

TEST_CASE("registry dump lists entries as hex", "[maps]") {
    MapRegistry reg;
    auto m = reg.get_or_create({"counts", MapKind::HASH, 4, 8, 4});
    std::vector<std::uint8_t> v = {1, 0, 0, 0, 0, 0, 0, 0};
    m->update(key32(2), v);
    CHECK(reg.dump() == "counts 02000000 0100000000000000\n");
}

TEST_CASE("hash entry count never exceeds capacity under concurrent inserts", "[maps][concurrency]") {
    MapInstance h(hash_desc(32));
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            std::vector<std::uint8_t> v(16, static_cast<std::uint8_t>(t));
            for (std::uint32_t i = 0; i < 2000; ++i) {
                auto k = key32(static_cast<std::uint32_t>(t) * 10000 + i % 50);
                if (i % 3 == 0) h.remove(k);
                else h.update(k, v);
                CHECK(h.size() <= 32);
            }
        });
    }
    for (auto& th : threads) th.join();
    CHECK(h.size() <= 32);
}

TEST_CASE("no torn reads under concurrent writers", "[maps][concurrency]") {
    // Each writer stores a value whose every byte equals its id; any mix of
    // bytes in a reader's snapshot is a torn read.
    constexpr int WRITERS = 3;
    constexpr int READERS = 3;
    constexpr int OPS_PER_THREAD = 1'000'000 / (WRITERS + READERS);
    for (auto kind : {MapKind::HASH, MapKind::ARRAY}) {
        MapInstance m(MapDescriptor{"t", kind, 4, 40, 4});
        auto key = key32(1);
        REQUIRE(m.update(key, std::vector<std::uint8_t>(40, 0x10)) == MapStatus::OK);
        std::atomic<int> torn{0};
        std::vector<std::thread> threads;
        for (int w = 0; w < WRITERS; ++w) {
            threads.emplace_back([&, w] {
                std::vector<std::uint8_t> v(40, static_cast<std::uint8_t>(0x11 + w));
                for (int i = 0; i < OPS_PER_THREAD; ++i) m.update(key, v);
            });
        }
        for (int r = 0; r < READERS; ++r) {
            threads.emplace_back([&] {
                std::vector<std::uint8_t> out(40);
                for (int i = 0; i < OPS_PER_THREAD; ++i) {
                    if (m.lookup(key, out) != MapStatus::OK) {
                        ++torn;
                        continue;
                    }
                    const auto first = out[0];
                    bool uniform = std::all_of(out.begin(), out.end(), [&](auto b) { return b == first; });
                    if (!uniform || first < 0x10 || first > 0x10 + WRITERS) ++torn;
                }
            });
        }
        for (auto& th : threads) th.join();
        CHECK(torn.load() == 0);
    }
}
