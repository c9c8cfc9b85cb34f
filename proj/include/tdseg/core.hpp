#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdseg {

using Shape = std::vector<int>;

// Thrown on any shape/precondition violation of a tensor op or model wiring.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when a value that must be finite is not; carries the offending
// component name (loss term, parameter, ...) for diagnostics.
struct NumericError : std::runtime_error {
    std::string component;
    NumericError(std::string comp, const std::string& what)
        : std::runtime_error(what), component(std::move(comp)) {}
};

// Thrown on malformed, truncated or mismatched files.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on bad configuration input (unknown keys, invalid values).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// splitmix64 finalizer; derives independent rng streams from one master seed
// so that resuming from a checkpoint replays the exact same randomness.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 0x632be59bd9b4e019ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a over raw bytes; used for config hashes and file checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace tdseg
