#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mlmadapt {

// Error taxonomy, mapped to CLI exit codes: config 2, data/format 3, numeric 4.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a 64-bit. Used for shard digests, config digests and the split hash.
inline constexpr uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

// splitmix64 finalizer: a strong bijective mixer on 64 bits.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Chain a value into a mixed state. Order-sensitive by construction.
inline uint64_t mix_chain(uint64_t state, uint64_t value) {
    return mix64(state ^ value);
}

// Top 53 bits -> double in [0, 1).
inline double unit_double(uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Deterministic counter-based stream: same key, same sequence, everywhere.
class RngStream {
public:
    explicit RngStream(uint64_t key) : key_(key), counter_(0) {}

    uint64_t next_u64() { return mix64(key_ + 0x9E3779B97F4A7C15ULL * ++counter_); }
    double next_unit() { return unit_double(next_u64()); }

    // Unbiased bounded draw (rejection on the top of the range).
    uint64_t next_below(uint64_t bound) {
        const uint64_t limit = bound * (UINT64_MAX / bound);
        for (;;) {
            uint64_t x = next_u64();
            if (x < limit) return x % bound;
        }
    }

    // Standard normal via Box-Muller on our own uniforms, so results do not
    // depend on the standard library's distribution implementation.
    double next_gaussian() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = next_unit();
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    uint64_t key_;
    uint64_t counter_;
};

// IEEE binary16 round-trip (round to nearest even), used to emulate
// fp16 weight storage on CPUs without native half support.
uint16_t float_to_half(float f);
float half_to_float(uint16_t h);
inline float round_to_half(float f) { return half_to_float(float_to_half(f)); }

std::string to_hex(uint64_t v);
uint64_t hex_to_u64(std::string_view s);

// Digest of a whole file's bytes; throws DataError if unreadable.
uint64_t file_digest(const std::filesystem::path& path);
uint64_t file_size_or_throw(const std::filesystem::path& path);

std::string trim(std::string_view s);

}  // namespace mlmadapt
