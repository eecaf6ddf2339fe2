#pragma once

#include <array>
#include <string>
#include <utility>

#include "prism/autograd.hpp"
#include "prism/rng.hpp"
#include "prism/tokenizer.hpp"

namespace prism {

struct FrequencyRange {
  double min = 1.0;
  double max = 1.0;
};

struct PosEncConfig {
  int n_freq = 4;
  // Angular frequencies: rad/cm for x, y, z and rad/patch for t.
  std::array<FrequencyRange, 4> ranges = default_ranges();

  static std::array<FrequencyRange, 4> default_ranges();
  int k() const { return n_freq * n_freq * n_freq * n_freq; }
};

void validate(const PosEncConfig& cfg);

// 4 x n_freq^4. Column ((ix * n + iy) * n + iz) * n + it holds the
// (x, y, z, t) frequencies with per-dimension indices ix, iy, iz, it.
ad::Matrix build_frequency_matrix(int n_freq, const std::array<FrequencyRange, 4>& ranges);

// [sin(C F), cos(C F)] for coordinate rows C (N x 4).
ad::Matrix fourier_features(const ad::Matrix& coords, const ad::Matrix& freq);

// PE(c) = LN(W_f [sin(F^T c); cos(F^T c)] + MLP(c)), MLP(c) = W2 gelu(W1 c + b1) + b2.
// Learnable parameters live in a ParameterSet under `prefix`.
class PositionalEncoding {
 public:
  PositionalEncoding() = default;
  PositionalEncoding(PosEncConfig cfg, int dim, std::string prefix = "pe.");

  void init_params(ad::ParameterSet& params, Rng& rng) const;

  ad::Var forward(ad::Tape& tape, ad::ParameterSet& params, const ad::Matrix& coords) const;

  Eigen::VectorXd encode(const Coord4& coord, ad::ParameterSet& params) const;
  ad::Matrix encode_grid(const TokenGrid& grid, ad::ParameterSet& params) const;

  const ad::Matrix& frequencies() const { return freq_; }
  const PosEncConfig& config() const { return cfg_; }
  int dim() const { return dim_; }
  const std::string& prefix() const { return prefix_; }

 private:
  PosEncConfig cfg_;
  int dim_ = 0;
  std::string prefix_;
  ad::Matrix freq_;
};

}  // namespace prism
