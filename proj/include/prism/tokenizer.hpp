#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "prism/autograd.hpp"
#include "prism/recording.hpp"

namespace prism {

struct TokenizerConfig {
  int patch_samples = 200;   // P: 1 s at 200 Hz
  int overlap_samples = 20;  // O
  int embed_dim = 64;        // D (512 in the large preset)
  double sample_rate_hz = 200.0;

  int step() const { return patch_samples - overlap_samples; }
};

void validate(const TokenizerConfig& cfg);

// (x, y, z) in cm, t = patch index.
using Coord4 = std::array<double, 4>;

struct Token {
  std::size_t channel = 0;
  std::size_t time = 0;
  Coord4 coord{};
};

// Tokens are ordered channel-major: index = channel * n_time + time.
struct TokenGrid {
  std::vector<Token> tokens;
  std::vector<std::string> channel_names;
  std::size_t n_channels = 0;
  std::size_t n_time = 0;
  int patch_samples = 0;
  int step = 0;
  double sample_rate_hz = 0.0;
  ad::Matrix patches;     // N x P
  ad::Matrix embeddings;  // N x D, empty until embed()

  std::size_t size() const { return tokens.size(); }
  std::size_t index(std::size_t channel, std::size_t time) const { return channel * n_time + time; }
  // Patch centre in seconds from the start of the recording.
  double time_center_s(std::size_t token) const;
  ad::Matrix coords() const;  // N x 4
};

std::size_t patch_count(std::size_t n_samples, int patch_samples, int step);

TokenGrid patchify(const Recording& rec, const TokenizerConfig& cfg,
                   const MontageMap& montage = MontageMap::standard_1020());

// embeddings = patches W_e^T with W_e of shape D x P.
void embed(TokenGrid& grid, const ad::Matrix& w_e);

// Inverse of patchify: each sample is the mean of every patch covering it.
// Samples past the last patch are zero. Returns [n_channels x covered].
ad::Matrix overlap_average(const TokenGrid& grid);

}  // namespace prism
