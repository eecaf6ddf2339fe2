#include "prism/tokenizer.hpp"

#include "prism/error.hpp"

namespace prism {

void validate(const TokenizerConfig& cfg) {
  if (cfg.patch_samples < 1 || cfg.overlap_samples < 0 || cfg.overlap_samples >= cfg.patch_samples)
    fail(ErrorCategory::config, "tokenizer: need 0 <= overlap < patch_samples");
  if (cfg.embed_dim < 8 || cfg.embed_dim % 2 != 0)
    fail(ErrorCategory::config, "tokenizer: embed_dim must be even and >= 8");
  if (!(cfg.sample_rate_hz > 0.0)) fail(ErrorCategory::config, "tokenizer: sample rate must be > 0");
}

double TokenGrid::time_center_s(std::size_t token) const {
  const double start = static_cast<double>(tokens[token].time) * step;
  return (start + 0.5 * patch_samples) / sample_rate_hz;
}

ad::Matrix TokenGrid::coords() const {
  ad::Matrix c(static_cast<ad::Index>(tokens.size()), 4);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (int k = 0; k < 4; ++k) c(static_cast<ad::Index>(i), k) = tokens[i].coord[static_cast<std::size_t>(k)];
  return c;
}

std::size_t patch_count(std::size_t n_samples, int patch_samples, int step) {
  const auto p = static_cast<std::size_t>(patch_samples);
  if (n_samples < p) return 0;
  return (n_samples - p) / static_cast<std::size_t>(step) + 1;
}

TokenGrid patchify(const Recording& rec, const TokenizerConfig& cfg, const MontageMap& montage) {
  validate(cfg);
  validate(rec);
  if (rec.sample_rate_hz != cfg.sample_rate_hz)
    fail(ErrorCategory::precondition, "patchify: recording at " + std::to_string(rec.sample_rate_hz) +
                                          " Hz, tokenizer expects " + std::to_string(cfg.sample_rate_hz));
  const std::size_t n_time = patch_count(rec.n_samples(), cfg.patch_samples, cfg.step());
  if (n_time == 0)
    fail(ErrorCategory::data, "patchify: recording " + rec.recording_id + " has " +
                                  std::to_string(rec.n_samples()) + " samples, fewer than one patch");

  TokenGrid g;
  g.channel_names = rec.channel_names;
  g.n_channels = rec.n_channels();
  g.n_time = n_time;
  g.patch_samples = cfg.patch_samples;
  g.step = cfg.step();
  g.sample_rate_hz = rec.sample_rate_hz;
  g.tokens.reserve(g.n_channels * n_time);
  g.patches.resize(static_cast<ad::Index>(g.n_channels * n_time), cfg.patch_samples);
  for (std::size_t c = 0; c < g.n_channels; ++c) {
    const Vec3& pos = montage.at(rec.channel_names[c]);
    auto row = rec.signal.row(c);
    for (std::size_t t = 0; t < n_time; ++t) {
      const auto i = static_cast<ad::Index>(g.tokens.size());
      g.tokens.push_back({c, t, {pos.x, pos.y, pos.z, static_cast<double>(t)}});
      const std::size_t start = t * static_cast<std::size_t>(g.step);
      for (int k = 0; k < cfg.patch_samples; ++k)
        g.patches(i, k) = row[start + static_cast<std::size_t>(k)];
    }
  }
  return g;
}

void embed(TokenGrid& grid, const ad::Matrix& w_e) {
  if (w_e.cols() != grid.patches.cols())
    fail(ErrorCategory::precondition, "embed: W_e has " + std::to_string(w_e.cols()) +
                                          " columns, patches have " +
                                          std::to_string(grid.patches.cols()) + " samples");
  grid.embeddings = grid.patches * w_e.transpose();
}

ad::Matrix overlap_average(const TokenGrid& grid) {
  const std::size_t covered = (grid.n_time - 1) * static_cast<std::size_t>(grid.step) +
                              static_cast<std::size_t>(grid.patch_samples);
  ad::Matrix sum = ad::Matrix::Zero(static_cast<ad::Index>(grid.n_channels), static_cast<ad::Index>(covered));
  ad::Matrix count = sum;
  for (std::size_t i = 0; i < grid.tokens.size(); ++i) {
    const auto& tok = grid.tokens[i];
    const auto start = static_cast<ad::Index>(tok.time * static_cast<std::size_t>(grid.step));
    const auto c = static_cast<ad::Index>(tok.channel);
    sum.block(c, start, 1, grid.patch_samples) += grid.patches.row(static_cast<ad::Index>(i));
    count.block(c, start, 1, grid.patch_samples).array() += 1.0;
  }
  return sum.cwiseQuotient(count);
}

}  // namespace prism
