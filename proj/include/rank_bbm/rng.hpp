#pragma once

/// @file rng.hpp
/// @brief Seeded random streams and replica seed derivation.
///
/// Every replica owns one RngStream. Replica seeds are derived from
/// (master_seed, replica_index) through std::seed_seq, so streams are independent
/// of how replicas are scheduled across threads.

#include <array>
#include <boost/random/normal_distribution.hpp>
#include <cstddef>
#include <cstdint>
#include <random>

namespace rank_bbm {

/// Seed for replica `index` of a run with `master` seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      0x5eedu};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) : gen_(seed) {}

    double normal() { return normal_(gen_); }
    /// Uniform on [0, 1).
    double uniform() { return uniform_(gen_); }
    double exponential(double rate) { return std::exponential_distribution<double>(rate)(gen_); }
    /// Uniform on {1, ..., n}.
    std::size_t uniform_rank(std::size_t n) { return std::uniform_int_distribution<std::size_t>(1, n)(gen_); }

    std::mt19937_64& engine() noexcept { return gen_; }

private:
    std::mt19937_64 gen_;
    boost::random::normal_distribution<double> normal_{0.0, 1.0}; // ziggurat
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace rank_bbm
