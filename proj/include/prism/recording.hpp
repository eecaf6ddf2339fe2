#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prism {

// Row-major [n_channels x n_samples] matrix of 32-bit samples (microvolts
// before normalization, z-units after).
class Signal {
 public:
  Signal() = default;
  Signal(std::size_t n_channels, std::size_t n_samples, float fill = 0.0f)
      : n_channels_(n_channels), n_samples_(n_samples), data_(n_channels * n_samples, fill) {}

  std::size_t n_channels() const { return n_channels_; }
  std::size_t n_samples() const { return n_samples_; }

  std::span<float> row(std::size_t c) { return {data_.data() + c * n_samples_, n_samples_}; }
  std::span<const float> row(std::size_t c) const {
    return {data_.data() + c * n_samples_, n_samples_};
  }
  float& at(std::size_t c, std::size_t t) { return data_[c * n_samples_ + t]; }
  float at(std::size_t c, std::size_t t) const { return data_[c * n_samples_ + t]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool operator==(const Signal&) const = default;

 private:
  std::size_t n_channels_ = 0;
  std::size_t n_samples_ = 0;
  std::vector<float> data_;
};

struct Recording {
  std::string subject_id;
  std::string recording_id;  // segments inherit their parent's id
  std::vector<std::string> channel_names;
  double sample_rate_hz = 0.0;
  Signal signal;
  std::optional<int> label;
  std::string source_tag;

  std::size_t n_channels() const { return signal.n_channels(); }
  std::size_t n_samples() const { return signal.n_samples(); }
  double duration_s() const { return static_cast<double>(n_samples()) / sample_rate_hz; }

  bool operator==(const Recording&) const = default;
};

// Throws Error(data) if the recording violates its invariants.
void validate(const Recording& rec);

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

double distance(const Vec3& a, const Vec3& b);

// Electrode positions in centimeters. x points right, y anterior, z up; the
// origin is the head center.
class MontageMap {
 public:
  static constexpr double kHeadRadiusCm = 9.2;

  // Idealized spherical 10-20 positions on a 9.2 cm head.
  static const MontageMap& standard_1020();

  explicit MontageMap(std::map<std::string, Vec3> entries) : entries_(std::move(entries)) {}

  bool contains(std::string_view label) const { return entries_.count(std::string(label)) > 0; }
  const Vec3& at(std::string_view label) const;
  const std::map<std::string, Vec3>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Vec3> entries_;
};

// The 19 standard 10-20 labels in conventional front-to-back order.
const std::array<std::string, 19>& standard_1020_labels();

class AliasTable {
 public:
  // Reads the versioned alias file (data/channel_aliases.json).
  static AliasTable load(const std::filesystem::path& path);

  // Process-wide table. Located via $PRISM_ALIAS_TABLE, falling back to the
  // copy installed with the build.
  static const AliasTable& default_table();

  std::optional<std::string> canonicalize(std::string_view raw) const;
  int version() const { return version_; }

 private:
  int version_ = 0;
  std::unordered_map<std::string, std::string> by_key_;  // upper-case key -> canonical
  std::vector<std::string> prefixes_;
  std::vector<std::string> reference_suffixes_;
};

// Canonical 10-20 label for an acquisition header string, or nullopt for
// non-EEG / unmappable channels.
std::optional<std::string> canonicalize_channel_name(std::string_view raw);

struct LoadedRecording {
  Recording recording;
  std::size_t dropped_channels = 0;
  std::vector<std::string> dropped_names;
};

// Directory layout: `header` (JSON) + `signal.f32` (row-major little-endian
// float32, channels x samples).
LoadedRecording load_recording(const std::filesystem::path& dir);
void save_recording(const Recording& rec, const std::filesystem::path& dir);

// Loads every recording directory directly under `root`, sorted by name.
std::vector<Recording> load_dataset(const std::filesystem::path& root);
void save_dataset(const std::vector<Recording>& recs, const std::filesystem::path& root);

}  // namespace prism
