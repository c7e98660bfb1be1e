// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace levy_periodic {

// Stream splitting rule
// ---------------------
// Every random stream is identified by a path of 64-bit keys below the master
// seed. The seed of a child stream is
//
//     child = mix64(parent ^ mix64(key + 0x632be59bd9b4e019))
//
// where mix64 is the SplitMix64 finalizer. Purposes (jumps, Wiener noise,
// initial draws, ...) and indices (path number, replica number, ...) are
// both keys, so the seed of a stream depends only on its position in the
// tree and never on the order in which streams are created. Serial and
// threaded runs therefore consume identical numbers.

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t key) noexcept {
    return mix64(parent ^ mix64(key + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
    for (auto k : keys) parent = derive_seed(parent, k);
    return parent;
}

/// Purpose keys for sub-streams.
enum class StreamKey : std::uint64_t {
    jumps = 0x4a554d50,
    wiener = 0x5749454e,
    path = 0x50415448,
    initial = 0x494e4954,
    inner = 0x494e4e52,
    projection = 0x50524f4a,
    replica = 0x5245504c,
    stage = 0x53544147,
    bootstrap = 0x424f4f54,
};

constexpr std::uint64_t derive_seed(std::uint64_t parent, StreamKey key) noexcept {
    return derive_seed(parent, static_cast<std::uint64_t>(key));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, StreamKey key, std::uint64_t index) noexcept {
    return derive_seed(derive_seed(parent, key), index);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

/// Standard normal from a counter: the value depends only on (seed, counter).
inline double counter_normal(std::uint64_t seed, std::uint64_t counter) noexcept {
    constexpr double two_pi = 6.283185307179586476925286766559;
    const std::uint64_t a = derive_seed(seed, 2 * counter);
    const std::uint64_t b = derive_seed(seed, 2 * counter + 1);
    // 53-bit uniforms in (0, 1]
    const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace levy_periodic
