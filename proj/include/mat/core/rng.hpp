#ifndef MAT_CORE_RNG_HPP
#define MAT_CORE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mat/core/error.hpp"

namespace mat {

// All randomness is drawn from mt19937_64 engines. The distribution helpers
// below are hand-rolled so streams are identical across standard libraries.
using Rng = std::mt19937_64;

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for the named substream `key` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) noexcept
{
    return splitmix64(seed ^ splitmix64(fnv1a64(key)));
}

inline Rng substream(std::uint64_t seed, std::string_view key)
{
    return Rng{derive_seed(seed, key)};
}

inline Rng substream(std::uint64_t seed, std::string_view key, std::uint64_t index)
{
    return Rng{splitmix64(derive_seed(seed, key) + index)};
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) noexcept
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) noexcept
{
    return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller; one draw per call, the second variate is discarded.
inline double standard_normal(Rng& rng) noexcept
{
    double u1 = uniform01(rng);
    while (u1 <= 0.0) {
        u1 = uniform01(rng);
    }
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n)
{
    if (n == 0) {
        throw ConfigError("uniform_index: empty range");
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = rng();
    while (r >= limit) {
        r = rng();
    }
    return r % n;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

inline std::string rng_state(const Rng& rng)
{
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng rng_from_state(const std::string& state)
{
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (is.fail()) {
        throw CorruptDataError("unreadable RNG state");
    }
    return rng;
}

}  // namespace mat

#endif  // MAT_CORE_RNG_HPP
