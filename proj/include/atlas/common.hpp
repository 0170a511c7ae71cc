#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace atlas {

// All recoverable failures surface as atlas::Error; per-record dataset
// problems are collected into load reports instead of thrown.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// FNV-1a, used wherever a stable cross-platform seed is derived from
// strings/indices (per-prompt RNG seeds, sweep trial seeds).
inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a_init() { return 0xcbf29ce484222325ull; }

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return fnv1a(h, &v, sizeof(v));
}

inline std::uint64_t hash_combine(std::uint64_t h, const std::string& s) {
    return fnv1a(h, s.data(), s.size());
}

// Uniform in [0,1) from a 64-bit generator, bit-identical everywhere
// (std::uniform_real_distribution is not guaranteed reproducible across
// standard libraries).
template <typename Rng>
double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), deterministic modulo draw; bias is irrelevant
// at the n we use (layer counts) and determinism matters more.
template <typename Rng>
std::size_t uniform_below(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

} // namespace atlas
