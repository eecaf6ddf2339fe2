#pragma once

#include <vector>

#include <Eigen/Dense>

#include "prism/protocol.hpp"

namespace prism {

// Channel-averaged Hann periodogram of a segment; bin k is k * fs / n Hz.
Eigen::VectorXd power_spectrum(const Recording& seg);
// Same, one row per channel.
Eigen::MatrixXd channel_power_spectra(const Recording& seg);
// Mean power over bins with lo <= f <= hi.
double band_power(const Eigen::VectorXd& spectrum, double bin_hz, double lo_hz, double hi_hz);

struct Band {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
};

// Multinomial logistic regression by full-batch gradient descent on
// standardized features. on_epoch receives (W, b) after every epoch.
struct SoftmaxRegression {
  Eigen::MatrixXd w;      // features x classes
  Eigen::RowVectorXd b;   // classes
  Eigen::RowVectorXd mean, scale;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  std::vector<int> predict(const Eigen::MatrixXd& x) const;
};

std::vector<SoftmaxRegression> train_softmax_regression(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                                        int classes, int epochs, double lr, double l2);

// Model A: log band power in a few fixed bands, logistic regression.
// Insensitive to spectral content outside the bands.
class BandpowerSpec : public ModelSpec {
 public:
  BandpowerSpec(std::vector<Band> bands, int classes, int epochs = 30, double lr = 0.5, double l2 = 1e-3);
  std::string name() const override { return "bandpower"; }
  FitResult fit(const std::vector<Recording>& train, const std::vector<Recording>& val, const FitOptions& options,
                std::uint64_t seed) const override;
  Eigen::MatrixXd features(const std::vector<Recording>& segs) const;

 private:
  std::vector<Band> bands_;
  int classes_;
  int epochs_;
  double lr_, l2_;
};

// Model B: memorizes per-subject spectral offsets (log power at the given
// frequencies). A segment within the learned match radius of a training
// segment gets that segment's label; anything else gets the training
// majority class.
class SubjectFingerprintSpec : public ModelSpec {
 public:
  SubjectFingerprintSpec(std::vector<double> frequencies_hz, int classes, double half_width_hz = 0.5);
  std::string name() const override { return "subject_fingerprint"; }
  FitResult fit(const std::vector<Recording>& train, const std::vector<Recording>& val, const FitOptions& options,
                std::uint64_t seed) const override;
  Eigen::MatrixXd features(const std::vector<Recording>& segs) const;

 private:
  std::vector<double> freqs_;
  int classes_;
  double half_width_;
};

// Model C: logistic regression on the full per-channel log spectrum
// (1 Hz bins up to max_hz), trained long enough to overfit small training
// sets. One snapshot per epoch.
class SpectralLogRegSpec : public ModelSpec {
 public:
  SpectralLogRegSpec(int classes, double max_hz = 45.0, int epochs = 60, double lr = 0.5, double l2 = 0.0);
  std::string name() const override { return "spectral_logreg"; }
  FitResult fit(const std::vector<Recording>& train, const std::vector<Recording>& val, const FitOptions& options,
                std::uint64_t seed) const override;
  Eigen::MatrixXd features(const std::vector<Recording>& segs) const;

 private:
  int classes_;
  double max_hz_;
  int epochs_;
  double lr_, l2_;
};

}  // namespace prism
