#pragma once

#include <cstdint>
#include <random>

namespace tiltsens {

// splitmix64; used to whiten user seeds and derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic seed for a named substream (fold k, replication r, ...).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = master;
    std::uint64_t z = splitmix64(s);
    s ^= z + a;
    z = splitmix64(s);
    s ^= z + b;
    z = splitmix64(s);
    s ^= z + c;
    return splitmix64(s);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
    std::uint64_t s = seed;
    return std::mt19937_64(splitmix64(s));
}

} // namespace tiltsens
