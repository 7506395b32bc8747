#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>

namespace xbprune {

// Seed splitting rule: derive_seed(base, tag, index) = base XOR h(tag, index),
// where h mixes the 64-bit FNV-1a hash of `tag` with `index` through
// splitmix64. Every per-(layer, group) and per-trial stream is derived this way.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Worker count: XBAR_PRUNE_THREADS if set and positive, else the hardware
// concurrency (at least 1).
std::size_t worker_count();

// Runs fn(0..n-1) across worker_count() threads. Each index must write only
// its own output slot. The first exception thrown (lowest index) is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace xbprune
