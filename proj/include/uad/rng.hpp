#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace uad {

std::uint64_t splitmix64(std::uint64_t& state);
/// Mixes a 64-bit value through one splitmix64 round.
std::uint64_t mix64(std::uint64_t x);
/// FNV-1a over the bytes of `s`.
std::uint64_t hash_name(std::string_view s);

/// Splittable xoshiro256** generator.
///
/// Distributions are implemented here rather than taken from <random> so a
/// seed produces the same stream with any standard library.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next(); }

    std::uint64_t next();
    /// Independent child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const;

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();
    /// Normal(0, std) resampled until within `bound` standard deviations.
    double truncated_normal(double std, double bound = 2.0);

private:
    std::uint64_t s_[4];
    std::uint64_t seed_;
};

} // namespace uad
