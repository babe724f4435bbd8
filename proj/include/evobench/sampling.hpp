#pragma once

#include <cstdint>
#include <vector>

#include "evobench/rng.hpp"

namespace evobench {

/// Latin hypercube design on the unit cube: n points in [0,1)^d, row-major.
/// Each coordinate column has exactly one point per 1/n stratum; the in-stratum
/// position is jittered uniformly.
inline std::vector<double> latin_hypercube(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "lhs"));
    std::vector<double> pts(n * d);
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        for (std::size_t i = 0; i < n; ++i) {
            pts[i * d + j] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
        }
    }
    return pts;
}

/// Map unit-cube points into a per-coordinate box, in place.
inline void scale_to_box(std::vector<double>& pts, std::size_t d,
                         const std::vector<double>& lo, const std::vector<double>& hi) {
    const std::size_t n = pts.size() / d;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            pts[i * d + j] = lo[j] + (hi[j] - lo[j]) * pts[i * d + j];
}

}  // namespace evobench
