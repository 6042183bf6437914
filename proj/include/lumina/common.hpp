#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace lumina {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input: schema violations, broken invariants, bad arguments.
struct ValidationError : Error {
    using Error::Error;
};

/// Numerical failure: singular matrix, non-finite values.
struct NumericError : Error {
    using Error::Error;
};

/// Training aborted (non-finite loss). Carries the snapshot location if one was written.
struct TrainAbort : Error {
    explicit TrainAbort(const std::string& msg, std::string snapshot = {})
        : Error(msg), snapshot_path(std::move(snapshot)) {}
    std::string snapshot_path;
};

namespace rng {

/// splitmix64 step; used to derive independent seeds from (seed, stream) pairs.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Deterministic sub-stream: same (seed, stream) always yields the same engine,
/// on every platform (mt19937_64 is fully specified by the standard).
inline std::mt19937_64 make_stream(uint64_t seed, uint64_t stream) {
    uint64_t s = seed;
    splitmix64(s);
    s ^= 0xA3EC647659359ACDull * (stream + 1);
    return std::mt19937_64(splitmix64(s));
}

/// Uniform double in [0, 1). Explicit construction instead of
/// std::uniform_real_distribution, whose output is implementation-defined.
inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

/// Uniform integer in [0, n). Rejection sampling, unbiased and portable.
inline uint64_t uniform_index(std::mt19937_64& g, uint64_t n) {
    if (n == 0) throw ValidationError("uniform_index: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = g();
    } while (x >= limit);
    return x % n;
}

}  // namespace rng
}  // namespace lumina
