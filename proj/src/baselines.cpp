#include "prism/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <memory>

#include <unsupported/Eigen/FFT>

#include "prism/error.hpp"

namespace prism {

Eigen::MatrixXd channel_power_spectra(const Recording& seg) {
  const auto n = seg.n_samples();
  if (n < 2) fail(ErrorCategory::data, "power spectrum: segment too short");
  std::vector<double> w(n);
  double wsum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    w[t] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(t) / static_cast<double>(n));
    wsum += w[t] * w[t];
  }
  const auto bins = static_cast<Eigen::Index>(n / 2 + 1);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seg.n_channels()), bins);
  Eigen::FFT<double> fft;
  std::vector<double> x(n);
  std::vector<std::complex<double>> spec;
  for (std::size_t c = 0; c < seg.n_channels(); ++c) {
    const auto row = seg.signal.row(c);
    for (std::size_t t = 0; t < n; ++t) x[t] = w[t] * row[t];
    fft.fwd(spec, x);
    for (Eigen::Index k = 0; k < bins; ++k) out(static_cast<Eigen::Index>(c), k) = std::norm(spec[static_cast<std::size_t>(k)]) / wsum;
  }
  return out;
}

Eigen::VectorXd power_spectrum(const Recording& seg) { return channel_power_spectra(seg).colwise().mean().transpose(); }

double band_power(const Eigen::VectorXd& spectrum, double bin_hz, double lo_hz, double hi_hz) {
  const auto first = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::ceil((lo_hz - 1e-9) / bin_hz)));
  const auto last = std::min<Eigen::Index>(spectrum.size() - 1, static_cast<Eigen::Index>(std::floor((hi_hz + 1e-9) / bin_hz)));
  if (last < first)
    fail(ErrorCategory::data, "band_power: no bins between " + std::to_string(lo_hz) + " and " + std::to_string(hi_hz) + " Hz");
  return spectrum.segment(first, last - first + 1).mean();
}

namespace {

double bin_width(const Recording& seg) { return seg.sample_rate_hz / static_cast<double>(seg.n_samples()); }

double safe_log(double v) { return std::log(v + 1e-12); }

std::vector<int> labels_of(const std::vector<Recording>& segs) {
  std::vector<int> y;
  for (const auto& s : segs) {
    if (!s.label) fail(ErrorCategory::data, "unlabeled segment in " + s.recording_id);
    y.push_back(*s.label);
  }
  return y;
}

void check_labels(const std::vector<int>& y, int classes) {
  for (int v : y)
    if (v < 0 || v >= classes) fail(ErrorCategory::data, "label " + std::to_string(v) + " outside [0, classes)");
}

FitResult regression_fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int classes, int epochs, double lr,
                         double l2, std::function<Eigen::MatrixXd(const std::vector<Recording>&)> featurize) {
  check_labels(y, classes);
  FitResult out;
  for (auto& m : train_softmax_regression(x, y, classes, epochs, lr, l2)) {
    auto model = std::make_shared<SoftmaxRegression>(std::move(m));
    out.snapshots.push_back(
        [model, featurize](const std::vector<Recording>& segs) { return model->predict(featurize(segs)); });
  }
  return out;
}

}  // namespace

Eigen::MatrixXd SoftmaxRegression::logits(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd z = (x.rowwise() - mean).array().rowwise() / scale.array();
  return (z * w).rowwise() + b;
}

std::vector<int> SoftmaxRegression::predict(const Eigen::MatrixXd& x) const {
  const auto l = logits(x);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index i = 0; i < l.rows(); ++i) out.push_back(argmax_lowest(l.row(i)));
  return out;
}

std::vector<SoftmaxRegression> train_softmax_regression(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                                        int classes, int epochs, double lr, double l2) {
  const auto n = x.rows(), d = x.cols();
  if (n == 0 || static_cast<std::size_t>(n) != y.size())
    fail(ErrorCategory::precondition, "softmax regression: features and labels disagree");
  SoftmaxRegression m;
  m.mean = x.colwise().mean();
  m.scale = ((x.rowwise() - m.mean).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(m.scale(j) > 0.0)) m.scale(j) = 1.0;
  const Eigen::MatrixXd z = (x.rowwise() - m.mean).array().rowwise() / m.scale.array();
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  m.w = Eigen::MatrixXd::Zero(d, classes);
  m.b = Eigen::RowVectorXd::Zero(classes);

  std::vector<SoftmaxRegression> snapshots;
  for (int e = 0; e < epochs; ++e) {
    Eigen::MatrixXd p = (z * m.w).rowwise() + m.b;
    for (Eigen::Index i = 0; i < n; ++i) {
      p.row(i).array() -= p.row(i).maxCoeff();
      p.row(i) = p.row(i).array().exp().matrix();
      p.row(i) /= p.row(i).sum();
    }
    const Eigen::MatrixXd g = (p - onehot) / static_cast<double>(n);
    m.w -= lr * (z.transpose() * g + l2 * m.w);
    m.b -= lr * g.colwise().sum();
    snapshots.push_back(m);
  }
  return snapshots;
}

// ---------------------------------------------------------------- A

BandpowerSpec::BandpowerSpec(std::vector<Band> bands, int classes, int epochs, double lr, double l2)
    : bands_(std::move(bands)), classes_(classes), epochs_(epochs), lr_(lr), l2_(l2) {
  if (bands_.empty() || classes_ < 2 || epochs_ < 1) fail(ErrorCategory::config, "bandpower baseline: bad settings");
}

Eigen::MatrixXd BandpowerSpec::features(const std::vector<Recording>& segs) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(segs.size()), static_cast<Eigen::Index>(bands_.size()));
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto spec = power_spectrum(segs[i]);
    for (std::size_t b = 0; b < bands_.size(); ++b)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) =
          safe_log(band_power(spec, bin_width(segs[i]), bands_[b].lo_hz, bands_[b].hi_hz));
  }
  return x;
}

FitResult BandpowerSpec::fit(const std::vector<Recording>& train, const std::vector<Recording>&, const FitOptions&,
                             std::uint64_t) const {
  auto self = *this;
  return regression_fit(features(train), labels_of(train), classes_, epochs_, lr_, l2_,
                        [self](const std::vector<Recording>& s) { return self.features(s); });
}

// ---------------------------------------------------------------- B

SubjectFingerprintSpec::SubjectFingerprintSpec(std::vector<double> frequencies_hz, int classes, double half_width_hz)
    : freqs_(std::move(frequencies_hz)), classes_(classes), half_width_(half_width_hz) {
  if (freqs_.empty() || classes_ < 2 || !(half_width_ > 0.0))
    fail(ErrorCategory::config, "fingerprint baseline: bad settings");
}

Eigen::MatrixXd SubjectFingerprintSpec::features(const std::vector<Recording>& segs) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(segs.size()), static_cast<Eigen::Index>(freqs_.size()));
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto spec = power_spectrum(segs[i]);
    for (std::size_t k = 0; k < freqs_.size(); ++k)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          safe_log(band_power(spec, bin_width(segs[i]), freqs_[k] - half_width_, freqs_[k] + half_width_));
  }
  return x;
}

namespace {

struct FingerprintModel {
  Eigen::MatrixXd train;  // standardized
  Eigen::RowVectorXd mean, scale;
  std::vector<int> labels;
  double radius = 0.0;
  int fallback = 0;

  std::vector<int> predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd z = (x.rowwise() - mean).array().rowwise() / scale.array();
    std::vector<int> out;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Eigen::Index best = 0;
      const double d2 = (train.rowwise() - z.row(i)).rowwise().squaredNorm().minCoeff(&best);
      out.push_back(std::sqrt(d2) <= radius ? labels[static_cast<std::size_t>(best)] : fallback);
    }
    return out;
  }
};

}  // namespace

FitResult SubjectFingerprintSpec::fit(const std::vector<Recording>& train, const std::vector<Recording>&,
                                      const FitOptions&, std::uint64_t) const {
  auto m = std::make_shared<FingerprintModel>();
  const auto x = features(train);
  m->labels = labels_of(train);
  check_labels(m->labels, classes_);
  const auto n = x.rows();
  m->mean = x.colwise().mean();
  m->scale = ((x.rowwise() - m->mean).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (!(m->scale(j) > 0.0)) m->scale(j) = 1.0;
  m->train = (x.rowwise() - m->mean).array().rowwise() / m->scale.array();

  // Match radius: twice the largest distance from a training segment to the
  // nearest other segment of the same subject.
  double within = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i && train[static_cast<std::size_t>(k)].subject_id == train[static_cast<std::size_t>(i)].subject_id)
        best = std::min(best, (m->train.row(i) - m->train.row(k)).norm());
    if (std::isfinite(best)) within = std::max(within, best);
  }
  m->radius = 2.0 * within;

  std::vector<int> counts(static_cast<std::size_t>(classes_), 0);
  for (int v : m->labels) ++counts[static_cast<std::size_t>(v)];
  m->fallback = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());

  auto self = *this;
  FitResult out;
  out.snapshots.push_back([m, self](const std::vector<Recording>& segs) { return m->predict(self.features(segs)); });
  return out;
}

// ---------------------------------------------------------------- C

SpectralLogRegSpec::SpectralLogRegSpec(int classes, double max_hz, int epochs, double lr, double l2)
    : classes_(classes), max_hz_(max_hz), epochs_(epochs), lr_(lr), l2_(l2) {
  if (classes_ < 2 || !(max_hz_ >= 1.0) || epochs_ < 1) fail(ErrorCategory::config, "spectral baseline: bad settings");
}

Eigen::MatrixXd SpectralLogRegSpec::features(const std::vector<Recording>& segs) const {
  if (segs.empty()) return Eigen::MatrixXd(0, 0);
  const auto n_bins = static_cast<Eigen::Index>(std::floor(max_hz_));
  const auto n_ch = static_cast<Eigen::Index>(segs.front().n_channels());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(segs.size()), n_ch * n_bins);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (static_cast<Eigen::Index>(segs[i].n_channels()) != n_ch)
      fail(ErrorCategory::data, "spectral baseline: segments disagree on channel count");
    const Eigen::MatrixXd spectra = channel_power_spectra(segs[i]);
    const double bw = bin_width(segs[i]);
    for (Eigen::Index c = 0; c < n_ch; ++c) {
      const Eigen::VectorXd row = spectra.row(c).transpose();
      for (Eigen::Index k = 0; k < n_bins; ++k) {
        const double f = static_cast<double>(k + 1);
        x(static_cast<Eigen::Index>(i), c * n_bins + k) = safe_log(band_power(row, bw, f - 0.5, f + 0.49));
      }
    }
  }
  return x;
}

FitResult SpectralLogRegSpec::fit(const std::vector<Recording>& train, const std::vector<Recording>&,
                                  const FitOptions&, std::uint64_t) const {
  auto self = *this;
  return regression_fit(features(train), labels_of(train), classes_, epochs_, lr_, l2_,
                        [self](const std::vector<Recording>& s) { return self.features(s); });
}

}  // namespace prism
