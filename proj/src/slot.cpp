// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/slot.hpp"

#include <chrono>
#include <thread>

namespace cclpol {

ActiveSlot::Guard::Guard(const ActiveSlot* slot, const Generation* gen, unsigned parity)
    : slot_(slot), gen_(gen), parity_(parity) {}

ActiveSlot::Guard::Guard(Guard&& other) noexcept : slot_(other.slot_), gen_(other.gen_), parity_(other.parity_) {
    other.slot_ = nullptr;
}

ActiveSlot::Guard::~Guard() {
    if (!slot_) return;
    gen_->active_calls.fetch_sub(1, std::memory_order_relaxed);
    slot_->readers_[parity_].fetch_sub(1, std::memory_order_release);
}

ActiveSlot::ActiveSlot() : current_(new Generation{}) {}

ActiveSlot::~ActiveSlot() { delete current_.load(); }

ActiveSlot::Guard ActiveSlot::acquire() const {
    for (;;) {
        const auto e = epoch_.load(std::memory_order_seq_cst);
        const unsigned parity = static_cast<unsigned>(e & 1);
        readers_[parity].fetch_add(1, std::memory_order_seq_cst);
        if (epoch_.load(std::memory_order_seq_cst) == e) {
            const Generation* gen = current_.load(std::memory_order_seq_cst);
            gen->active_calls.fetch_add(1, std::memory_order_relaxed);
            return Guard(this, gen, parity);
        }
        // The epoch moved between the read and the registration; retry so
        // the writer's drain wait covers this reader.
        readers_[parity].fetch_sub(1, std::memory_order_release);
    }
}

std::uint64_t ActiveSlot::swap(std::shared_ptr<const PreparedProgram> program, SwapTiming* timing) {
    using clock = std::chrono::steady_clock;
    std::lock_guard lock(writer_);
    auto* next = new Generation{};
    next->program = std::move(program);

    const auto t0 = clock::now();
    next->number = current_.load(std::memory_order_relaxed)->number + 1;
    Generation* old = current_.exchange(next, std::memory_order_seq_cst);
    const auto e = epoch_.load(std::memory_order_relaxed);
    epoch_.store(e + 1, std::memory_order_seq_cst);
    const auto t1 = clock::now();

    // Only readers registered under the old parity can hold `old`.
    auto& old_readers = readers_[e & 1];
    int spins = 0;
    while (old_readers.load(std::memory_order_seq_cst) != 0) {
        if (++spins > 128) std::this_thread::yield();
    }
    const auto t2 = clock::now();
    if (old->active_calls.load(std::memory_order_acquire) != 0) unsafe_reclaims_.fetch_add(1);
    delete old;

    if (timing) {
        timing->publish_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
        timing->drain_us = std::chrono::duration<double, std::micro>(t2 - t1).count();
    }
    return next->number;
}

std::uint64_t ActiveSlot::generation() const {
    auto g = acquire();
    return g.generation().number;
}

} // namespace cclpol
