#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prism/recording.hpp"

namespace prism {

struct Oscillation {
  double center_hz = 10.0;
  double amplitude_uv = 20.0;
};

// Stand-in for the real corpora: per-class oscillatory mixtures, an optional
// per-subject spectral tilt (the "confound"), and white noise.
struct SyntheticTaskSpec {
  int n_subjects = 20;
  int classes = 2;
  int recordings_per_subject = 2;
  double duration_s = 10.0;
  double sample_rate_hz = 200.0;
  std::vector<std::string> channels;  // empty -> all 19 standard labels
  // class_signal_model[k] is the oscillation mixture of class k.
  std::vector<std::vector<Oscillation>> class_signal_model = {{{10.0, 20.0}}, {{20.0, 20.0}}};
  double subject_confound_strength = 0.0;
  double confound_amplitude_uv = 10.0;
  double noise_sigma_uv = 5.0;
  std::string source_tag = "synthetic";
};

void validate(const SyntheticTaskSpec& spec);

// Deterministic in (spec, seed). Subject s has label s % classes; each
// recording is named "<subject>_rec-<k>".
std::vector<Recording> generate_synthetic_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed);

// Frequencies of the per-subject tilt component.
const std::vector<double>& confound_frequencies_hz();

}  // namespace prism
