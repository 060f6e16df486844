#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eventlm {

// Deterministic seed derivation. Every random consumer in the library draws
// from a named substream of the single user-visible seed, so adding a new
// consumer (or reordering existing ones) never perturbs the draws that other
// components see. splitmix64 is the usual finaliser for this.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    for (char c : text) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001B3ULL;
    }
    return hash;
}

// Seed for the substream identified by `name` under the given root seed.
[[nodiscard]] constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view name) noexcept {
    return splitmix64(root ^ fnv1a64(name));
}

// Seed for an indexed substream, e.g. one stream per sequence or per epoch.
[[nodiscard]] constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                                     std::uint64_t index) noexcept {
    return splitmix64(substream_seed(root, name) ^ splitmix64(index));
}

[[nodiscard]] inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view name) {
    return std::mt19937_64(substream_seed(root, name));
}

[[nodiscard]] inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view name, std::uint64_t index) {
    return std::mt19937_64(substream_seed(root, name, index));
}

} // namespace eventlm
