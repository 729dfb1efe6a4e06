#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace textdistill {

// Counter-based seed splitting. Every consumer of randomness derives its own
// stream from the run seed via child() calls, so no two modules ever share
// generator state and adding a consumer never shifts another one's draws.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : key_(mix(seed ^ kRoot)) {}

    RngStream child(uint64_t index) const { return RngStream(mix(key_ ^ mix(index + 1)), 0); }

    RngStream child(std::string_view tag) const {
        // FNV-1a over the tag, folded into the key.
        uint64_t h = 1469598103934665603ull;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return RngStream(mix(key_ ^ h), 0);
    }

    uint64_t key() const { return key_; }

    std::mt19937_64 engine() const { return std::mt19937_64(key_); }

    // splitmix64 finalizer.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

private:
    RngStream(uint64_t key, int) : key_(key) {}
    static constexpr uint64_t kRoot = 0x7464642d726e6700ull;

    uint64_t key_;
};

// Uniform double in (0, 1). Derived straight from the engine output so the
// values are identical on every platform, unlike std::uniform_real_distribution.
inline double uniform_unit(std::mt19937_64& eng) {
    return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform_in(std::mt19937_64& eng, double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(eng() >> 11) * 0x1.0p-53);
}

// Standard normal via Box-Muller (two uniforms per draw, second discarded).
inline double normal_unit(std::mt19937_64& eng) {
    double u1 = uniform_unit(eng);
    double u2 = uniform_unit(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Uniform integer in [0, n) via multiply-shift; deterministic across platforms.
inline uint64_t bounded(std::mt19937_64& eng, uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(eng()) * n) >> 64);
}

} // namespace textdistill
