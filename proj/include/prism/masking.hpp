#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "prism/tokenizer.hpp"

namespace prism {

struct MaskConfig {
  double ratio = 0.55;
  double spatial_radius_cm = 3.0;
  double temporal_radius_s = 3.0;
  std::uint64_t rng_seed = 0;
};

void validate(const MaskConfig& cfg);

struct MaskPlan {
  std::size_t n_tokens = 0;
  std::vector<std::size_t> masked;        // sorted, |masked| = floor(ratio * N)
  std::vector<std::size_t> seeds_used;    // in draw order
  std::vector<std::size_t> block_masked;  // sorted union of blocks before restoration

  std::vector<std::size_t> visible() const;
  std::vector<bool> mask_flags() const;
};

// floor(ratio * n), tolerant of binary rounding (0.29 * 100 -> 29).
std::size_t mask_count(double ratio, std::size_t n);

// Electrode distance <= spatial radius AND patch-centre time distance <=
// temporal radius. Coordinates come from the grid (i.e. the montage).
bool block_membership(const TokenGrid& grid, std::size_t seed, std::size_t candidate,
                      const MaskConfig& cfg);

// Seeds are drawn uniformly from unmasked tokens; each masks its whole
// spatio-temporal block until floor(ratio N) is reached, then surplus tokens
// are unmasked uniformly at random.
MaskPlan plan_mask(const TokenGrid& grid, const MaskConfig& cfg);

}  // namespace prism
