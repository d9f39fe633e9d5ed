#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace crnl {

#ifdef CRNL_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

// Error taxonomy. Every module throws one of these; messages name the
// offending op and the shapes/values involved.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract: " + msg) {}
};
struct InfeasibleLabelError : Error {
    explicit InfeasibleLabelError(const std::string& msg) : Error("infeasible label: " + msg) {}
};
struct OracleSizeError : Error {
    explicit OracleSizeError(const std::string& msg) : Error("oracle size: " + msg) {}
};
struct LayoutError : Error {
    explicit LayoutError(const std::string& msg) : Error("layout: " + msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

// splitmix64 finalizer: add the golden-gamma increment, then mix.
// Used as a pure function (glyph bitmaps) and as the step of Rng below.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic PRNG. No std:: distributions anywhere in product code:
// their output is implementation-defined, and corpora must be bit-exact
// across platforms.
struct Rng {
    uint64_t state = 0;

    explicit Rng(uint64_t seed = 0) : state(seed) {}

    uint64_t next() { return splitmix64(state++); }

    // unbiased integer in [0, n)
    uint64_t next_below(uint64_t n) {
        if (n == 0) throw ContractError("Rng::next_below: n must be positive");
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // uniform in [0, 1) with 53-bit resolution
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // derive an independent stream, e.g. one per dataset example
    Rng fork(uint64_t key) const { return Rng(splitmix64(state ^ (0xD1B54A32D192ED03ULL * (key + 1)))); }
};

inline uint64_t fnv1a64(const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = 0xCBF29CE484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}
inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Debug-mode NaN screening of forward results; off in release unless enabled.
bool debug_checks();
void set_debug_checks(bool on);

}  // namespace crnl
