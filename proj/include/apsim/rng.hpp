#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace apsim {

// std::mt19937_64 output is fixed by the standard; the <random> distributions
// are not, so the transforms below are spelled out to keep runs bit-identical
// across standard libraries.

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller; one draw per call (the sine branch is discarded).
inline double standard_normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double exponential(std::mt19937_64& rng, double rate) {
    return -std::log(1.0 - uniform01(rng)) / rate;
}

}  // namespace apsim
