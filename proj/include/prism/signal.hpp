#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "prism/recording.hpp"

namespace prism {

struct PipelineConfig {
  double target_rate_hz = 200.0;
  double bandpass_lo_hz = 0.5;
  double bandpass_hi_hz = 99.5;
  std::vector<double> notch_hz = {50.0, 100.0};
  double notch_q = 30.0;
  int butterworth_order = 4;  // per edge (high-pass and low-pass)
  double clip_sigma = 15.0;
  double segment_length_s = 4.0;
  double stride_s = 0.0;  // 0 -> equal to segment_length_s
  bool allow_upsample = false;
};

void validate(const PipelineConfig& cfg);

namespace dsp {

// Second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

using Sos = std::vector<Biquad>;

Sos butterworth_lowpass(int order, double cutoff_hz, double fs_hz);
Sos butterworth_highpass(int order, double cutoff_hz, double fs_hz);
Biquad notch(double f0_hz, double q, double fs_hz);

// Single forward pass with steady-state initial conditions scaled by x[0].
void sosfilt(const Sos& sos, std::span<double> x);

// Forward-backward (zero-phase) with odd extension of `padlen` samples on
// each side. Requires x.size() > padlen.
void sosfiltfilt(const Sos& sos, std::span<double> x, std::size_t padlen);

// Complex gain magnitude of the cascade at frequency f.
double magnitude_response(const Sos& sos, double f_hz, double fs_hz);

// Rational approximation target/source = up/down used by resample().
struct RationalRatio {
  long long up = 1;
  long long down = 1;
};
RationalRatio rational_ratio(double target_hz, double source_hz);

// Polyphase resampling of one channel by up/down with a Kaiser-windowed
// sinc anti-aliasing filter.
std::vector<double> resample_poly(std::span<const double> x, long long up, long long down);

}  // namespace dsp

Recording resample(const Recording& rec, double target_rate_hz, bool allow_upsample = false);

// Butterworth band-pass plus IIR notches, applied forward-backward.
Recording filter_chain(const Recording& rec, const PipelineConfig& cfg);

// Samples of padding used by filter_chain; shorter recordings are rejected.
std::size_t filter_warmup_samples(const PipelineConfig& cfg);

struct NormalizedRecording {
  Recording recording;
  std::vector<std::size_t> zero_variance_channels;
};

// Per-channel z-score over the whole recording, then clip to +-clip_sigma.
// Zero-variance channels become all zeros and are reported.
NormalizedRecording normalize_clip(const Recording& rec, double clip_sigma);

// Non-padded windows; count = floor((n - L) / stride) + 1, or none if n < L.
std::vector<Recording> segment(const Recording& rec, double segment_length_s, double stride_s);

// Samples per window; throws if length x rate is not an integer.
std::size_t segment_samples(double segment_length_s, double rate_hz);
std::size_t expected_segment_count(std::size_t n_samples, std::size_t window, std::size_t stride);

// resample -> filter -> normalize/clip. Segmentation is left to the caller
// because evaluation protocols choose their own window length.
NormalizedRecording preprocess(const Recording& rec, const PipelineConfig& cfg);

}  // namespace prism
