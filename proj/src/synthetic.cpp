#include "prism/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "prism/error.hpp"
#include "prism/rng.hpp"

namespace prism {

const std::vector<double>& confound_frequencies_hz() {
  // Kept clear of the default class bands (8-12 Hz, 18-22 Hz).
  static const std::vector<double> f = {3, 5, 7, 13, 15, 17, 24, 27, 30, 33, 36, 39, 42};
  return f;
}

void validate(const SyntheticTaskSpec& spec) {
  if (spec.classes < 2) fail(ErrorCategory::config, "synthetic spec: classes must be >= 2");
  if (spec.n_subjects < spec.classes)
    fail(ErrorCategory::config, "synthetic spec: n_subjects must be >= classes");
  if (spec.recordings_per_subject < 2)
    fail(ErrorCategory::config, "synthetic spec: recordings_per_subject must be >= 2");
  if (!(spec.duration_s > 0.0) || !(spec.sample_rate_hz > 0.0))
    fail(ErrorCategory::config, "synthetic spec: duration and sample rate must be positive");
  if (static_cast<int>(spec.class_signal_model.size()) != spec.classes)
    fail(ErrorCategory::config, "synthetic spec: class_signal_model needs one entry per class");
  if (spec.subject_confound_strength < 0.0 || spec.noise_sigma_uv < 0.0)
    fail(ErrorCategory::config, "synthetic spec: confound strength and noise must be >= 0");
  for (const auto& name : spec.channels)
    if (!MontageMap::standard_1020().contains(name))
      fail(ErrorCategory::config, "synthetic spec: unknown channel " + name);
}

std::vector<Recording> generate_synthetic_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::vector<std::string> channels = spec.channels;
  if (channels.empty())
    channels.assign(standard_1020_labels().begin(), standard_1020_labels().end());
  const auto& montage = MontageMap::standard_1020();
  const double r = MontageMap::kHeadRadiusCm;
  const auto n_samples = static_cast<std::size_t>(std::floor(spec.duration_s * spec.sample_rate_hz));
  const auto& conf_f = confound_frequencies_hz();
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::vector<Recording> out;
  out.reserve(static_cast<std::size_t>(spec.n_subjects * spec.recordings_per_subject));
  for (int s = 0; s < spec.n_subjects; ++s) {
    const int label = s % spec.classes;
    char sid[32];
    std::snprintf(sid, sizeof sid, "sub-%03d", s);

    // Per-subject spectral tilt: log-amplitude linear in frequency plus a
    // per-frequency jitter, identical for every recording of the subject.
    Rng subject_rng = make_rng(derive_seed(seed, "subject", static_cast<std::uint64_t>(s)));
    const double tilt = standard_normal(subject_rng);
    std::vector<double> conf_amp(conf_f.size());
    for (std::size_t j = 0; j < conf_f.size(); ++j) {
      const double u = (conf_f[j] - 23.0) / 21.0;
      conf_amp[j] = spec.subject_confound_strength * spec.confound_amplitude_uv *
                    std::exp(tilt * u + 0.5 * standard_normal(subject_rng));
    }

    const auto& bands = spec.class_signal_model[static_cast<std::size_t>(label)];
    for (int k = 0; k < spec.recordings_per_subject; ++k) {
      Rng rng = make_rng(derive_seed(seed, "recording", static_cast<std::uint64_t>(s),
                                     static_cast<std::uint64_t>(k)));
      Recording rec;
      rec.subject_id = sid;
      char rid[48];
      std::snprintf(rid, sizeof rid, "%s_rec-%02d", sid, k);
      rec.recording_id = rid;
      rec.channel_names = channels;
      rec.sample_rate_hz = spec.sample_rate_hz;
      rec.label = label;
      rec.source_tag = spec.source_tag;
      rec.signal = Signal(channels.size(), n_samples);

      std::vector<double> band_phase(bands.size());
      for (auto& p : band_phase) p = two_pi * uniform01(rng);
      std::vector<double> conf_phase(conf_f.size());
      for (auto& p : conf_phase) p = two_pi * uniform01(rng);

      for (std::size_t c = 0; c < channels.size(); ++c) {
        const Vec3 pos = montage.at(channels[c]);
        // Smooth spatial field: stronger toward the vertex, slight
        // left-right phase gradient.
        const double gain = 1.0 + 0.25 * pos.z / r;
        const double phase_shift = 0.2 * pos.x / r;
        auto row = rec.signal.row(c);
        for (std::size_t t = 0; t < n_samples; ++t) {
          const double time = static_cast<double>(t) / spec.sample_rate_hz;
          double v = 0.0;
          for (std::size_t b = 0; b < bands.size(); ++b)
            v += gain * bands[b].amplitude_uv *
                 std::sin(two_pi * bands[b].center_hz * time + band_phase[b] + phase_shift);
          if (spec.subject_confound_strength > 0.0)
            for (std::size_t j = 0; j < conf_f.size(); ++j)
              v += conf_amp[j] * std::sin(two_pi * conf_f[j] * time + conf_phase[j]);
          if (spec.noise_sigma_uv > 0.0) v += spec.noise_sigma_uv * standard_normal(rng);
          row[t] = static_cast<float>(v);
        }
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace prism
