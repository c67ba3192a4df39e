#pragma once
// Deterministic seeding. A single master seed fans out into named
// sub-streams (split, folds, random-baseline, ...) so each component is
// reproducible in isolation. Shuffles avoid std::shuffle, whose draw
// distribution is implementation-defined.

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace l2d {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::string_view stream) {
    // FNV-1a over the stream name, mixed with the master seed
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return splitmix64(seed ^ h);
}

// Uniform draw in [0, n). The modulo bias is irrelevant at these sizes and
// the result is identical on every platform, unlike uniform_int_distribution.
inline std::size_t draw_below(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

template <typename T>
void shuffle_in_place(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[draw_below(rng, i)]);
    }
}

}  // namespace l2d
