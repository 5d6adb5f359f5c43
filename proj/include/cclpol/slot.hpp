// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>

#include "cclpol/vm.hpp"

namespace cclpol {

/// One installed program version.
struct Generation {
    std::shared_ptr<const PreparedProgram> program; // null: no policy
    std::uint64_t number = 0;
    // Invocations currently executing this generation (drain instrumentation).
    mutable std::atomic<std::int64_t> active_calls{0};
};

/// Per-hook active program. Readers pin the current generation with two
/// epoch-parity counters; a swap publishes the new pointer, flips the epoch
/// and reclaims the old generation once readers of the old parity drain.
class ActiveSlot {
  public:
    class Guard {
      public:
        Guard(Guard&& other) noexcept;
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;
        ~Guard();

        const Generation& generation() const { return *gen_; }
        const PreparedProgram* program() const { return gen_->program.get(); }

      private:
        friend class ActiveSlot;
        Guard(const ActiveSlot* slot, const Generation* gen, unsigned parity);
        const ActiveSlot* slot_;
        const Generation* gen_;
        unsigned parity_;
    };

    struct SwapTiming {
        double publish_us = 0; // pointer exchange and epoch flip
        double drain_us = 0;   // waiting for old readers
    };

    ActiveSlot();
    ~ActiveSlot();
    ActiveSlot(const ActiveSlot&) = delete;
    ActiveSlot& operator=(const ActiveSlot&) = delete;

    Guard acquire() const;

    /// Installs `program` (null clears the slot) and returns the new
    /// generation number. Blocks until the previous generation has drained.
    std::uint64_t swap(std::shared_ptr<const PreparedProgram> program, SwapTiming* timing = nullptr);

    std::uint64_t generation() const;

    /// Generations reclaimed while still marked active; always 0 unless the
    /// drain protocol is broken.
    std::uint64_t unsafe_reclaims() const { return unsafe_reclaims_.load(); }

  private:
    mutable std::atomic<std::uint64_t> epoch_{0};
    mutable std::atomic<std::int64_t> readers_[2] = {0, 0};
    std::atomic<Generation*> current_;
    std::mutex writer_;
    std::atomic<std::uint64_t> unsafe_reclaims_{0};
};

} // namespace cclpol
