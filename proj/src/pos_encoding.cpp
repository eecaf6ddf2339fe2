#include "prism/pos_encoding.hpp"

#include <cmath>
#include <numbers>

#include "prism/error.hpp"

namespace prism {

std::array<FrequencyRange, 4> PosEncConfig::default_ranges() {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  // Spatial wavelengths 2-30 cm bracket electrode spacing and head size;
  // temporal wavelengths 2-256 patches bracket sequence length.
  const FrequencyRange spatial{two_pi / 30.0, two_pi / 2.0};
  return {spatial, spatial, spatial, FrequencyRange{two_pi / 256.0, two_pi / 2.0}};
}

void validate(const PosEncConfig& cfg) {
  if (cfg.n_freq < 1) fail(ErrorCategory::config, "pos-encoding: n_freq must be >= 1");
  for (const auto& r : cfg.ranges)
    if (!(r.min < r.max)) fail(ErrorCategory::config, "pos-encoding: each range needs min < max");
}

ad::Matrix build_frequency_matrix(int n_freq, const std::array<FrequencyRange, 4>& ranges) {
  require(n_freq >= 1, "build_frequency_matrix: n_freq must be >= 1");
  std::array<std::vector<double>, 4> axis;
  for (std::size_t d = 0; d < 4; ++d) {
    axis[d].resize(static_cast<std::size_t>(n_freq));
    for (int i = 0; i < n_freq; ++i)
      axis[d][static_cast<std::size_t>(i)] =
          n_freq == 1 ? ranges[d].min
                      : ranges[d].min + (ranges[d].max - ranges[d].min) * i / (n_freq - 1.0);
  }
  const int k = n_freq * n_freq * n_freq * n_freq;
  ad::Matrix f(4, k);
  int col = 0;
  for (int ix = 0; ix < n_freq; ++ix)
    for (int iy = 0; iy < n_freq; ++iy)
      for (int iz = 0; iz < n_freq; ++iz)
        for (int it = 0; it < n_freq; ++it, ++col) {
          f(0, col) = axis[0][static_cast<std::size_t>(ix)];
          f(1, col) = axis[1][static_cast<std::size_t>(iy)];
          f(2, col) = axis[2][static_cast<std::size_t>(iz)];
          f(3, col) = axis[3][static_cast<std::size_t>(it)];
        }
  return f;
}

ad::Matrix fourier_features(const ad::Matrix& coords, const ad::Matrix& freq) {
  const ad::Matrix phase = coords * freq;
  ad::Matrix out(phase.rows(), 2 * phase.cols());
  out.leftCols(phase.cols()) = phase.array().sin().matrix();
  out.rightCols(phase.cols()) = phase.array().cos().matrix();
  return out;
}

PositionalEncoding::PositionalEncoding(PosEncConfig cfg, int dim, std::string prefix)
    : cfg_(cfg), dim_(dim), prefix_(std::move(prefix)) {
  validate(cfg_);
  require(dim_ >= 1, "PositionalEncoding: dim must be >= 1");
  freq_ = build_frequency_matrix(cfg_.n_freq, cfg_.ranges);
}

namespace {
ad::Matrix gaussian(ad::Index rows, ad::Index cols, double sd, Rng& rng) {
  ad::Matrix m(rows, cols);
  for (ad::Index j = 0; j < cols; ++j)
    for (ad::Index i = 0; i < rows; ++i) m(i, j) = sd * standard_normal(rng);
  return m;
}
}  // namespace

void PositionalEncoding::init_params(ad::ParameterSet& params, Rng& rng) const {
  const ad::Index d = dim_;
  const ad::Index two_k = 2 * cfg_.k();
  params.add(prefix_ + "W_f", gaussian(d, two_k, 1.0 / std::sqrt(static_cast<double>(two_k)), rng));
  params.add(prefix_ + "mlp.W1", gaussian(4, d, 0.1, rng));
  params.add(prefix_ + "mlp.b1", ad::Matrix::Zero(1, d));
  params.add(prefix_ + "mlp.W2", gaussian(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  params.add(prefix_ + "mlp.b2", ad::Matrix::Zero(1, d));
  params.add(prefix_ + "ln.gamma", ad::Matrix::Ones(1, d));
  params.add(prefix_ + "ln.beta", ad::Matrix::Zero(1, d));
}

ad::Var PositionalEncoding::forward(ad::Tape& tape, ad::ParameterSet& params,
                                    const ad::Matrix& coords) const {
  require(coords.cols() == 4, "PositionalEncoding: coords must be N x 4");
  if (!coords.allFinite()) fail(ErrorCategory::numeric, "PositionalEncoding: non-finite coordinate");
  auto phi = tape.constant(fourier_features(coords, freq_));
  auto c = tape.constant(coords);
  auto fourier = ad::matmul_nt(phi, tape.param(params, prefix_ + "W_f"));
  auto hidden = ad::gelu(ad::add_rowwise(ad::matmul(c, tape.param(params, prefix_ + "mlp.W1")),
                                         tape.param(params, prefix_ + "mlp.b1")));
  auto mlp = ad::add_rowwise(ad::matmul(hidden, tape.param(params, prefix_ + "mlp.W2")),
                             tape.param(params, prefix_ + "mlp.b2"));
  return ad::layer_norm(ad::add(fourier, mlp), tape.param(params, prefix_ + "ln.gamma"),
                        tape.param(params, prefix_ + "ln.beta"));
}

Eigen::VectorXd PositionalEncoding::encode(const Coord4& coord, ad::ParameterSet& params) const {
  ad::Matrix c(1, 4);
  for (int k = 0; k < 4; ++k) c(0, k) = coord[static_cast<std::size_t>(k)];
  ad::Tape tape;
  return forward(tape, params, c).value().row(0).transpose();
}

ad::Matrix PositionalEncoding::encode_grid(const TokenGrid& grid, ad::ParameterSet& params) const {
  ad::Tape tape;
  return forward(tape, params, grid.coords()).value();
}

}  // namespace prism
