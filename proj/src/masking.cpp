#include "prism/masking.hpp"

#include <algorithm>
#include <cmath>

#include "prism/error.hpp"
#include "prism/rng.hpp"

namespace prism {

void validate(const MaskConfig& cfg) {
  if (!(cfg.ratio > 0.0 && cfg.ratio < 1.0)) fail(ErrorCategory::config, "mask: ratio must be in (0, 1)");
  if (!(cfg.spatial_radius_cm > 0.0 && cfg.temporal_radius_s > 0.0))
    fail(ErrorCategory::config, "mask: radii must be > 0");
}

std::vector<std::size_t> MaskPlan::visible() const {
  std::vector<std::size_t> out;
  out.reserve(n_tokens - masked.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    if (j < masked.size() && masked[j] == i)
      ++j;
    else
      out.push_back(i);
  }
  return out;
}

std::vector<bool> MaskPlan::mask_flags() const {
  std::vector<bool> f(n_tokens, false);
  for (auto i : masked) f[i] = true;
  return f;
}

std::size_t mask_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

bool block_membership(const TokenGrid& grid, std::size_t seed, std::size_t candidate,
                      const MaskConfig& cfg) {
  const auto& a = grid.tokens[seed].coord;
  const auto& b = grid.tokens[candidate].coord;
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  const double spatial = std::sqrt(dx * dx + dy * dy + dz * dz);
  const double temporal = std::abs(grid.time_center_s(seed) - grid.time_center_s(candidate));
  // Small slack so that exact-boundary distances are not lost to rounding.
  constexpr double eps = 1e-9;
  return spatial <= cfg.spatial_radius_cm + eps && temporal <= cfg.temporal_radius_s + eps;
}

MaskPlan plan_mask(const TokenGrid& grid, const MaskConfig& cfg) {
  validate(cfg);
  const std::size_t n = grid.size();
  const std::size_t target = mask_count(cfg.ratio, n);
  if (n < 2 || target < 1)
    fail(ErrorCategory::precondition, "plan_mask: need N >= 2 and floor(ratio N) >= 1 (N = " +
                                          std::to_string(n) + ")");
  Rng rng = make_rng(cfg.rng_seed);
  MaskPlan plan;
  plan.n_tokens = n;

  std::vector<bool> is_masked(n, false);
  std::vector<std::size_t> unmasked(n);
  for (std::size_t i = 0; i < n; ++i) unmasked[i] = i;
  std::size_t n_masked = 0;

  while (n_masked < target) {
    const std::size_t seed = unmasked[uniform_index(rng, unmasked.size())];
    plan.seeds_used.push_back(seed);
    for (std::size_t j = 0; j < n; ++j) {
      if (!is_masked[j] && block_membership(grid, seed, j, cfg)) {
        is_masked[j] = true;
        ++n_masked;
      }
    }
    unmasked.erase(std::remove_if(unmasked.begin(), unmasked.end(),
                                  [&](std::size_t i) { return is_masked[i]; }),
                   unmasked.end());
  }

  std::vector<std::size_t> masked;
  masked.reserve(n_masked);
  for (std::size_t i = 0; i < n; ++i)
    if (is_masked[i]) masked.push_back(i);
  plan.block_masked = masked;

  // Partial Fisher-Yates: move the tokens to restore to the tail.
  std::size_t excess = masked.size() - target;
  for (std::size_t k = 0; k < excess; ++k) {
    const std::size_t remaining = masked.size() - k;
    const std::size_t pick = uniform_index(rng, remaining);
    std::swap(masked[pick], masked[remaining - 1]);
  }
  masked.resize(target);
  std::sort(masked.begin(), masked.end());
  plan.masked = std::move(masked);
  return plan;
}

}  // namespace prism
