#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ldm {

// Seed splitting: every random stream in the project is addressed by
// (root seed, stream tag, index). The tag is hashed with FNV-1a, mixed with
// the root and index, and passed through splitmix64. Streams with different
// tags or indices are statistically independent and never depend on the
// order in which they are created.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                    std::uint64_t index = 0) noexcept {
    return splitmix64(splitmix64(root ^ fnv1a(tag)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive_seed(root, tag, index));
}

}  // namespace ldm
