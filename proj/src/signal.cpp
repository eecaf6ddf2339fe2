#include "prism/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "prism/error.hpp"

namespace prism {

void validate(const PipelineConfig& cfg) {
  if (!(cfg.target_rate_hz > 0.0)) fail(ErrorCategory::config, "pipeline: target_rate_hz must be > 0");
  if (!(cfg.bandpass_lo_hz > 0.0 && cfg.bandpass_lo_hz < cfg.bandpass_hi_hz &&
        cfg.bandpass_hi_hz < cfg.target_rate_hz / 2.0))
    fail(ErrorCategory::config, "pipeline: need 0 < bandpass_lo < bandpass_hi < target_rate/2");
  if (!(cfg.clip_sigma > 0.0)) fail(ErrorCategory::config, "pipeline: clip_sigma must be > 0");
  if (cfg.butterworth_order < 2 || cfg.butterworth_order % 2 != 0)
    fail(ErrorCategory::config, "pipeline: butterworth_order must be even and >= 2");
  if (!(cfg.notch_q > 0.0)) fail(ErrorCategory::config, "pipeline: notch_q must be > 0");
  if (!(cfg.segment_length_s > 0.0)) fail(ErrorCategory::config, "pipeline: segment_length_s must be > 0");
  if (cfg.stride_s < 0.0) fail(ErrorCategory::config, "pipeline: stride_s must be >= 0");
  segment_samples(cfg.segment_length_s, cfg.target_rate_hz);
  if (cfg.stride_s > 0.0) segment_samples(cfg.stride_s, cfg.target_rate_hz);
}

namespace dsp {

namespace {

// Bilinear transform of s^2 + a1 s + a0 with K = 2 fs.
Biquad bilinear(double n0, double n1, double n2, double a1, double a0, double k) {
  const double d0 = k * k + a1 * k + a0;
  const double d1 = 2.0 * a0 - 2.0 * k * k;
  const double d2 = k * k - a1 * k + a0;
  return {n0 / d0, n1 / d0, n2 / d0, d1 / d0, d2 / d0};
}

Sos butterworth(int order, double cutoff_hz, double fs_hz, bool highpass) {
  require(order >= 2 && order % 2 == 0, "butterworth: order must be even");
  require(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0, "butterworth: cutoff must be in (0, fs/2)");
  const double k = 2.0 * fs_hz;
  const double wc = k * std::tan(std::numbers::pi * cutoff_hz / fs_hz);
  Sos sos;
  for (int i = 1; i <= order / 2; ++i) {
    const double angle = std::numbers::pi * (2.0 * i + order - 1.0) / (2.0 * order);
    const double a1 = -2.0 * std::cos(angle) * wc;
    const double a0 = wc * wc;
    if (highpass)
      sos.push_back(bilinear(k * k, -2.0 * k * k, k * k, a1, a0, k));
    else
      sos.push_back(bilinear(a0, 2.0 * a0, a0, a1, a0, k));
  }
  return sos;
}

}  // namespace

Sos butterworth_lowpass(int order, double cutoff_hz, double fs_hz) {
  return butterworth(order, cutoff_hz, fs_hz, false);
}

Sos butterworth_highpass(int order, double cutoff_hz, double fs_hz) {
  return butterworth(order, cutoff_hz, fs_hz, true);
}

Biquad notch(double f0_hz, double q, double fs_hz) {
  require(f0_hz > 0.0 && f0_hz < fs_hz / 2.0, "notch: frequency must be in (0, fs/2)");
  const double w0 = 2.0 * std::numbers::pi * f0_hz / fs_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  return {1.0 / a0, -2.0 * std::cos(w0) / a0, 1.0 / a0, -2.0 * std::cos(w0) / a0,
          (1.0 - alpha) / a0};
}

void sosfilt(const Sos& sos, std::span<double> x) {
  if (x.empty()) return;
  double u = x[0];
  for (const auto& s : sos) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double y_ss = g * u;
    double z2 = s.b2 * u - s.a2 * y_ss;
    double z1 = s.b1 * u - s.a1 * y_ss + z2;
    for (auto& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    u = y_ss;
  }
}

void sosfiltfilt(const Sos& sos, std::span<double> x, std::size_t padlen) {
  const std::size_t n = x.size();
  require(n > padlen, "sosfiltfilt: signal shorter than padding");
  std::vector<double> ext(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) {
    ext[i] = 2.0 * x[0] - x[padlen - i];
    ext[padlen + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(padlen));
  sosfilt(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt(sos, ext);
  std::reverse(ext.begin(), ext.end());
  std::copy(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
            ext.begin() + static_cast<std::ptrdiff_t>(padlen + n), x.begin());
}

double magnitude_response(const Sos& sos, double f_hz, double fs_hz) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / fs_hz);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

RationalRatio rational_ratio(double target_hz, double source_hz) {
  require(target_hz > 0.0 && source_hz > 0.0, "rational_ratio: rates must be positive");
  // Rates are usually integral or given to the millihertz.
  auto up = std::llround(target_hz * 1000.0);
  auto down = std::llround(source_hz * 1000.0);
  const auto g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (std::max(up, down) <= 4096) return {up, down};
  // Best approximation with bounded denominator via continued fractions.
  const double ratio = target_hz / source_hz;
  long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double r = ratio;
  for (int i = 0; i < 64; ++i) {
    const auto a = static_cast<long long>(std::floor(r));
    const long long p2 = a * p1 + p0, q2 = a * q1 + q0;
    if (q2 > 4096 || p2 > 4096) break;
    p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    const double frac = r - static_cast<double>(a);
    if (frac < 1e-12) break;
    r = 1.0 / frac;
  }
  return {p1, q1};
}

std::vector<double> resample_poly(std::span<const double> x, long long up, long long down) {
  require(up >= 1 && down >= 1, "resample_poly: factors must be >= 1");
  const long long n = static_cast<long long>(x.size());
  const long long n_out = n * up / down;
  const long long max_rate = std::max(up, down);
  const long long half = 10 * max_rate;
  const double fc = 1.0 / static_cast<double>(max_rate);
  constexpr double kaiser_beta = 5.0;
  const double i0_beta = std::cyl_bessel_i(0.0, kaiser_beta);

  std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
  for (long long j = 0; j <= 2 * half; ++j) {
    const double m = static_cast<double>(j - half);
    const double arg = fc * m;
    const double sinc = (m == 0.0) ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double ratio = m / static_cast<double>(half);
    const double w = std::cyl_bessel_i(0.0, kaiser_beta * std::sqrt(std::max(0.0, 1.0 - ratio * ratio))) / i0_beta;
    h[static_cast<std::size_t>(j)] = static_cast<double>(up) * fc * sinc * w;
  }

  std::vector<double> y(static_cast<std::size_t>(n_out), 0.0);
  for (long long k = 0; k < n_out; ++k) {
    const long long centre = k * down + half;  // index into the upsampled stream + half
    // Input sample m contributes through tap centre - m*up, in [0, 2*half].
    long long m_lo = (centre - 2 * half + up - 1);
    m_lo = m_lo >= 0 ? m_lo / up : -((-m_lo) / up);
    long long m_hi = centre / up;
    m_lo = std::max<long long>(m_lo, 0);
    m_hi = std::min<long long>(m_hi, n - 1);
    double acc = 0.0;
    for (long long m = m_lo; m <= m_hi; ++m) {
      const long long tap = centre - m * up;
      if (tap < 0 || tap > 2 * half) continue;
      acc += h[static_cast<std::size_t>(tap)] * x[static_cast<std::size_t>(m)];
    }
    y[static_cast<std::size_t>(k)] = acc;
  }
  return y;
}

}  // namespace dsp

Recording resample(const Recording& rec, double target_rate_hz, bool allow_upsample) {
  validate(rec);
  require(target_rate_hz > 0.0, "resample: target rate must be > 0");
  if (target_rate_hz == rec.sample_rate_hz) return rec;
  if (target_rate_hz > rec.sample_rate_hz && !allow_upsample)
    fail(ErrorCategory::config, "resample: target " + std::to_string(target_rate_hz) +
                                    " Hz exceeds source " + std::to_string(rec.sample_rate_hz) +
                                    " Hz and upsampling is disabled");
  const auto ratio = dsp::rational_ratio(target_rate_hz, rec.sample_rate_hz);
  Recording out = rec;
  out.sample_rate_hz = target_rate_hz;
  const std::size_t n_out = rec.n_samples() * static_cast<std::size_t>(ratio.up) /
                            static_cast<std::size_t>(ratio.down);
  if (n_out == 0) fail(ErrorCategory::data, "resample: recording too short for target rate");
  out.signal = Signal(rec.n_channels(), n_out);
  std::vector<double> buf(rec.n_samples());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    auto src = rec.signal.row(c);
    std::copy(src.begin(), src.end(), buf.begin());
    const auto y = dsp::resample_poly(buf, ratio.up, ratio.down);
    auto dst = out.signal.row(c);
    for (std::size_t t = 0; t < n_out; ++t) dst[t] = static_cast<float>(y[t]);
  }
  return out;
}

namespace {

dsp::Sos filter_cascade(const PipelineConfig& cfg) {
  const double fs = cfg.target_rate_hz;
  dsp::Sos sos = dsp::butterworth_highpass(cfg.butterworth_order, cfg.bandpass_lo_hz, fs);
  for (const auto& s : dsp::butterworth_lowpass(cfg.butterworth_order, cfg.bandpass_hi_hz, fs))
    sos.push_back(s);
  // A notch at or above Nyquist has no digital realization; the low-pass
  // already places its zero at Nyquist.
  for (double f : cfg.notch_hz)
    if (f > 0.0 && f < fs / 2.0) sos.push_back(dsp::notch(f, cfg.notch_q, fs));
  return sos;
}

}  // namespace

std::size_t filter_warmup_samples(const PipelineConfig& cfg) {
  const auto n_sections = static_cast<std::size_t>(cfg.butterworth_order + cfg.notch_hz.size());
  const auto slowest = static_cast<std::size_t>(std::ceil(cfg.target_rate_hz / cfg.bandpass_lo_hz));
  return std::max<std::size_t>(3 * (2 * n_sections + 1), slowest);
}

Recording filter_chain(const Recording& rec, const PipelineConfig& cfg) {
  validate(rec);
  validate(cfg);
  if (rec.sample_rate_hz != cfg.target_rate_hz)
    fail(ErrorCategory::precondition, "filter_chain: recording at " +
                                          std::to_string(rec.sample_rate_hz) + " Hz, expected " +
                                          std::to_string(cfg.target_rate_hz) + " Hz");
  const std::size_t pad = filter_warmup_samples(cfg);
  if (rec.n_samples() <= pad)
    fail(ErrorCategory::data, "filter_chain: recording " + rec.recording_id + " has " +
                                  std::to_string(rec.n_samples()) +
                                  " samples, filter warm-up needs more than " + std::to_string(pad));
  const auto sos = filter_cascade(cfg);
  Recording out = rec;
  std::vector<double> buf(rec.n_samples());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    auto src = rec.signal.row(c);
    std::copy(src.begin(), src.end(), buf.begin());
    dsp::sosfiltfilt(sos, buf, pad);
    auto dst = out.signal.row(c);
    for (std::size_t t = 0; t < buf.size(); ++t) dst[t] = static_cast<float>(buf[t]);
  }
  return out;
}

NormalizedRecording normalize_clip(const Recording& rec, double clip_sigma) {
  validate(rec);
  require(clip_sigma > 0.0, "normalize_clip: clip_sigma must be > 0");
  NormalizedRecording out{rec, {}};
  const double n = static_cast<double>(rec.n_samples());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    auto src = rec.signal.row(c);
    auto dst = out.recording.signal.row(c);
    double mean = 0.0;
    for (float v : src) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : src) var += (v - mean) * (v - mean);
    var /= n;
    const double sd = std::sqrt(var);
    if (!(sd > 0.0) || !std::isfinite(sd)) {
      std::fill(dst.begin(), dst.end(), 0.0f);
      out.zero_variance_channels.push_back(c);
      continue;
    }
    for (std::size_t t = 0; t < src.size(); ++t) {
      const double z = (src[t] - mean) / sd;
      dst[t] = static_cast<float>(std::clamp(z, -clip_sigma, clip_sigma));
    }
  }
  return out;
}

std::size_t segment_samples(double segment_length_s, double rate_hz) {
  const double exact = segment_length_s * rate_hz;
  const double rounded = std::round(exact);
  if (!(rounded >= 1.0) || std::abs(exact - rounded) > 1e-9 * std::max(1.0, exact))
    fail(ErrorCategory::config, "segment length " + std::to_string(segment_length_s) + " s at " +
                                    std::to_string(rate_hz) + " Hz is not a whole number of samples");
  return static_cast<std::size_t>(rounded);
}

std::size_t expected_segment_count(std::size_t n_samples, std::size_t window, std::size_t stride) {
  if (n_samples < window) return 0;
  return (n_samples - window) / stride + 1;
}

std::vector<Recording> segment(const Recording& rec, double segment_length_s, double stride_s) {
  validate(rec);
  if (stride_s <= 0.0) stride_s = segment_length_s;
  const std::size_t window = segment_samples(segment_length_s, rec.sample_rate_hz);
  const std::size_t stride = segment_samples(stride_s, rec.sample_rate_hz);
  const std::size_t count = expected_segment_count(rec.n_samples(), window, stride);
  std::vector<Recording> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Recording seg;
    seg.subject_id = rec.subject_id;
    seg.recording_id = rec.recording_id;
    seg.channel_names = rec.channel_names;
    seg.sample_rate_hz = rec.sample_rate_hz;
    seg.label = rec.label;
    seg.source_tag = rec.source_tag;
    seg.signal = Signal(rec.n_channels(), window);
    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
      auto src = rec.signal.row(c).subspan(i * stride, window);
      std::copy(src.begin(), src.end(), seg.signal.row(c).begin());
    }
    out.push_back(std::move(seg));
  }
  return out;
}

NormalizedRecording preprocess(const Recording& rec, const PipelineConfig& cfg) {
  validate(cfg);
  Recording r = resample(rec, cfg.target_rate_hz, cfg.allow_upsample);
  r = filter_chain(r, cfg);
  return normalize_clip(r, cfg.clip_sigma);
}

}  // namespace prism
