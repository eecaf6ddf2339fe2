#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prism {

// All randomness flows from one root seed through named substreams, so that
// e.g. mask planning for step 17 never depends on how many draws data
// generation consumed.
std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index,
                          std::uint64_t sub_index);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Uniform integer in [0, n). Avoids std::uniform_int_distribution so that the
// stream is identical across standard library implementations.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Uniform real in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

// Standard normal via Box-Muller (implementation independent).
double standard_normal(Rng& rng);

}  // namespace prism
