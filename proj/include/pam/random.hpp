#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace pam {

// Engine output is fixed by the standard; the conversions below are spelled
// out so that parameter draws do not depend on the standard library's
// distribution implementations.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi)
{
    return lo + (hi - lo) * uniform01(rng);
}

inline double normal(Rng& rng)
{
    double u1 = uniform01(rng);
    while (u1 <= 0.0)
        u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n)
{
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

} // namespace pam
