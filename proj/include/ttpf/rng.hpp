#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ttpf/core.hpp"

namespace ttpf {

using Rng = std::mt19937_64;

/// FNV-1a over raw bytes. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

/// Derives an independent stream from a base seed and a stream tag.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

inline Vec normal_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Vec v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

inline Matrix normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    return Matrix(rows, cols, normal_vector(rng, rows * cols, scale));
}

/// Rounds every entry to the nearest float so the value survives a
/// float32 archive round trip unchanged.
inline void quantize_to_float(std::vector<double>& values) {
    for (double& x : values) x = static_cast<double>(static_cast<float>(x));
}

} // namespace ttpf
