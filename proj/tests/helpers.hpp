#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "prism/recording.hpp"
#include "prism/rng.hpp"

namespace prism::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* env = std::getenv("PRISM_TEST_TMP");
  std::filesystem::path root = env && *env ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "prism-tests";
  auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Gaussian noise recording on the given 10-20 channels.
inline Recording noise_recording(const std::vector<std::string>& channels, std::size_t n_samples, std::uint64_t seed,
                                 double rate_hz = 200.0, double sd = 1.0) {
  Recording r;
  r.subject_id = "sub-" + std::to_string(seed);
  r.recording_id = r.subject_id + "_rec-0";
  r.channel_names = channels;
  r.sample_rate_hz = rate_hz;
  r.signal = Signal(channels.size(), n_samples);
  Rng rng(seed);
  for (auto& v : r.signal.data()) v = static_cast<float>(sd * standard_normal(rng));
  return r;
}

inline std::vector<std::string> first_labels(std::size_t n) {
  const auto& all = standard_1020_labels();
  return {all.begin(), all.begin() + static_cast<long>(n)};
}

}  // namespace prism::testing
