#include "prism/recording.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"

#include "prism/error.hpp"

#ifndef PRISM_DEFAULT_ALIAS_TABLE
#define PRISM_DEFAULT_ALIAS_TABLE "data/channel_aliases.json"
#endif

namespace prism {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "signal.f32 is little-endian; big-endian hosts need byte swapping");

void validate(const Recording& rec) {
  if (!(rec.sample_rate_hz > 0.0) || !std::isfinite(rec.sample_rate_hz))
    fail(ErrorCategory::data, "recording " + rec.recording_id + ": sample_rate_hz must be > 0");
  if (rec.signal.n_channels() != rec.channel_names.size())
    fail(ErrorCategory::data, "recording " + rec.recording_id + ": signal has " +
                                  std::to_string(rec.signal.n_channels()) + " rows but " +
                                  std::to_string(rec.channel_names.size()) + " channel names");
  if (rec.signal.n_samples() < 1)
    fail(ErrorCategory::data, "recording " + rec.recording_id + ": no samples");
  std::set<std::string> seen(rec.channel_names.begin(), rec.channel_names.end());
  if (seen.size() != rec.channel_names.size())
    fail(ErrorCategory::data, "recording " + rec.recording_id + ": duplicate channel names");
}

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

const std::array<std::string, 19>& standard_1020_labels() {
  static const std::array<std::string, 19> labels = {"Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
                                                     "T3",  "C3",  "Cz", "C4", "T4", "T5", "P3",
                                                     "Pz",  "P4",  "T6", "O1", "O2"};
  return labels;
}

namespace {

// theta: polar angle from the vertex; azimuth: from anterior toward right, degrees.
Vec3 on_sphere(double theta_deg, double azimuth_deg) {
  const double r = MontageMap::kHeadRadiusCm;
  const double th = theta_deg * std::numbers::pi / 180.0;
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  return {r * std::sin(th) * std::sin(az), r * std::sin(th) * std::cos(az), r * std::cos(th)};
}

Vec3 great_circle_midpoint(const Vec3& a, const Vec3& b) {
  Vec3 m{a.x + b.x, a.y + b.y, a.z + b.z};
  const double n = std::sqrt(m.x * m.x + m.y * m.y + m.z * m.z);
  const double s = MontageMap::kHeadRadiusCm / n;
  return {m.x * s, m.y * s, m.z * s};
}

}  // namespace

const MontageMap& MontageMap::standard_1020() {
  static const MontageMap montage = [] {
    // Nasion/inion and preauricular points sit on the equator; the 10%/20%
    // rule puts the outer ring at 72 degrees from the vertex.
    std::map<std::string, Vec3> e;
    e["Fp1"] = on_sphere(72, -18);
    e["Fp2"] = on_sphere(72, 18);
    e["F7"] = on_sphere(72, -54);
    e["F8"] = on_sphere(72, 54);
    e["T3"] = on_sphere(72, -90);
    e["T4"] = on_sphere(72, 90);
    e["T5"] = on_sphere(72, -126);
    e["T6"] = on_sphere(72, 126);
    e["O1"] = on_sphere(72, -162);
    e["O2"] = on_sphere(72, 162);
    e["Fz"] = on_sphere(36, 0);
    e["Cz"] = on_sphere(0, 0);
    e["Pz"] = on_sphere(36, 180);
    e["C3"] = on_sphere(36, -90);
    e["C4"] = on_sphere(36, 90);
    e["F3"] = great_circle_midpoint(e["F7"], e["Fz"]);
    e["F4"] = great_circle_midpoint(e["F8"], e["Fz"]);
    e["P3"] = great_circle_midpoint(e["T5"], e["Pz"]);
    e["P4"] = great_circle_midpoint(e["T6"], e["Pz"]);
    return MontageMap(std::move(e));
  }();
  return montage;
}

const Vec3& MontageMap::at(std::string_view label) const {
  auto it = entries_.find(std::string(label));
  if (it == entries_.end())
    fail(ErrorCategory::data, "electrode '" + std::string(label) + "' not in montage");
  return it->second;
}

namespace {

std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) || s[e - 1] == '.')) --e;
  return std::string(s.substr(b, e - b));
}

bool is_separator(char c) { return c == ' ' || c == '_' || c == ':' || c == '-' || c == '/'; }

}  // namespace

AliasTable AliasTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open alias table " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    fail(ErrorCategory::config, "alias table " + path.string() + ": " + ex.what());
  }
  if (j.value("format", "") != "prism-channel-aliases")
    fail(ErrorCategory::config, "alias table " + path.string() + ": unexpected format tag");
  AliasTable t;
  t.version_ = j.at("version").get<int>();
  std::set<std::string> canonical;
  for (const auto& c : j.at("canonical")) {
    const auto label = c.get<std::string>();
    canonical.insert(label);
    t.by_key_[to_upper(label)] = label;
  }
  for (const auto& [k, v] : j.at("aliases").items()) {
    const auto target = v.get<std::string>();
    if (!canonical.count(target))
      fail(ErrorCategory::config, "alias " + k + " targets non-canonical label " + target);
    t.by_key_[to_upper(k)] = target;
  }
  for (const auto& p : j.value("prefixes", json::array())) t.prefixes_.push_back(to_upper(p.get<std::string>()));
  for (const auto& s : j.value("reference_suffixes", json::array()))
    t.reference_suffixes_.push_back(to_upper(s.get<std::string>()));
  // Longest prefix first so "EEG:" wins over "EEG".
  std::sort(t.prefixes_.begin(), t.prefixes_.end(),
            [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return t;
}

const AliasTable& AliasTable::default_table() {
  static const AliasTable table = [] {
    if (const char* env = std::getenv("PRISM_ALIAS_TABLE"); env && *env) return load(env);
    return load(PRISM_DEFAULT_ALIAS_TABLE);
  }();
  return table;
}

std::optional<std::string> AliasTable::canonicalize(std::string_view raw) const {
  std::string s = to_upper(trim(raw));
  if (s.empty()) return std::nullopt;

  // Already-canonical fast path keeps canonicalize idempotent.
  if (auto it = by_key_.find(s); it != by_key_.end()) return it->second;

  for (const auto& p : prefixes_) {
    if (s.size() > p.size() && s.compare(0, p.size(), p) == 0 &&
        (p.back() == ':' || is_separator(s[p.size()]))) {
      s = s.substr(p.size());
      break;
    }
  }
  while (!s.empty() && is_separator(s.front())) s.erase(s.begin());
  s = trim(s);

  // "FP1-REF", "T3_LE", "C3-A2"; a second electrode means a bipolar
  // derivation, which is not a single scalp site.
  const auto sep = std::find_if(s.begin(), s.end(), is_separator);
  if (sep != s.end()) {
    std::string head(s.begin(), sep);
    std::string tail(sep + 1, s.end());
    while (!tail.empty() && is_separator(tail.front())) tail.erase(tail.begin());
    tail = trim(tail);
    if (std::find(reference_suffixes_.begin(), reference_suffixes_.end(), tail) ==
        reference_suffixes_.end())
      return std::nullopt;
    s = head;
  }

  auto it = by_key_.find(s);
  if (it == by_key_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> canonicalize_channel_name(std::string_view raw) {
  return AliasTable::default_table().canonicalize(raw);
}

namespace {

constexpr const char* kHeaderFormat = "prism-recording";
constexpr int kHeaderVersion = 1;

}  // namespace

void save_recording(const Recording& rec, const std::filesystem::path& dir) {
  validate(rec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCategory::io, "cannot create " + dir.string() + ": " + ec.message());

  json h;
  h["format"] = kHeaderFormat;
  h["version"] = kHeaderVersion;
  h["subject_id"] = rec.subject_id;
  h["recording_id"] = rec.recording_id;
  h["sample_rate_hz"] = rec.sample_rate_hz;
  h["channels"] = rec.channel_names;
  h["label"] = rec.label ? json(*rec.label) : json(nullptr);
  h["source_tag"] = rec.source_tag;
  h["n_samples"] = rec.n_samples();

  {
    std::ofstream out(dir / "header");
    if (!out) fail(ErrorCategory::io, "cannot write " + (dir / "header").string());
    out << h.dump(2) << '\n';
  }
  std::ofstream out(dir / "signal.f32", std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot write " + (dir / "signal.f32").string());
  const auto& d = rec.signal.data();
  out.write(reinterpret_cast<const char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(float)));
  if (!out) fail(ErrorCategory::io, "short write to " + (dir / "signal.f32").string());
}

LoadedRecording load_recording(const std::filesystem::path& dir) {
  std::ifstream hin(dir / "header");
  if (!hin) fail(ErrorCategory::io, "cannot open " + (dir / "header").string());
  json h;
  try {
    hin >> h;
  } catch (const json::exception& ex) {
    fail(ErrorCategory::data, "malformed header in " + dir.string() + ": " + ex.what());
  }

  Recording rec;
  std::vector<std::string> raw_names;
  std::size_t n_samples = 0;
  try {
    if (h.at("format").get<std::string>() != kHeaderFormat)
      fail(ErrorCategory::data, "malformed header in " + dir.string() + ": wrong format tag");
    if (h.at("version").get<int>() != kHeaderVersion)
      fail(ErrorCategory::data, "unsupported recording version in " + dir.string());
    rec.subject_id = h.at("subject_id").get<std::string>();
    rec.recording_id = h.value("recording_id", dir.filename().string());
    rec.sample_rate_hz = h.at("sample_rate_hz").get<double>();
    raw_names = h.at("channels").get<std::vector<std::string>>();
    if (!h.at("label").is_null()) rec.label = h.at("label").get<int>();
    rec.source_tag = h.value("source_tag", "");
    n_samples = h.at("n_samples").get<std::size_t>();
  } catch (const json::exception& ex) {
    fail(ErrorCategory::data, "malformed header in " + dir.string() + ": " + ex.what());
  }
  if (!(rec.sample_rate_hz > 0.0) || n_samples == 0 || raw_names.empty())
    fail(ErrorCategory::data, "malformed header in " + dir.string() + ": empty shape or bad rate");

  const auto sig_path = dir / "signal.f32";
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(sig_path, ec);
  if (ec) fail(ErrorCategory::io, "cannot stat " + sig_path.string());
  const std::uintmax_t expected = raw_names.size() * n_samples * sizeof(float);
  if (bytes != expected)
    fail(ErrorCategory::data, sig_path.string() + ": " + std::to_string(bytes) +
                                  " bytes, header declares " + std::to_string(raw_names.size()) +
                                  " x " + std::to_string(n_samples) + " float32 (" +
                                  std::to_string(expected) + " bytes)");

  Signal raw(raw_names.size(), n_samples);
  std::ifstream sin(sig_path, std::ios::binary);
  sin.read(reinterpret_cast<char*>(raw.data().data()), static_cast<std::streamsize>(expected));
  if (!sin) fail(ErrorCategory::io, "short read from " + sig_path.string());

  LoadedRecording out;
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < raw_names.size(); ++c) {
    if (auto name = canonicalize_channel_name(raw_names[c])) {
      if (std::find(rec.channel_names.begin(), rec.channel_names.end(), *name) !=
          rec.channel_names.end())
        fail(ErrorCategory::data, dir.string() + ": channels '" + raw_names[c] +
                                      "' and an earlier channel both map to " + *name);
      rec.channel_names.push_back(*name);
      keep.push_back(c);
    } else {
      out.dropped_names.push_back(raw_names[c]);
    }
  }
  if (keep.empty()) fail(ErrorCategory::data, dir.string() + ": no mappable EEG channels");
  out.dropped_channels = out.dropped_names.size();

  if (keep.size() == raw_names.size()) {
    rec.signal = std::move(raw);
  } else {
    rec.signal = Signal(keep.size(), n_samples);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      auto src = raw.row(keep[i]);
      std::copy(src.begin(), src.end(), rec.signal.row(i).begin());
    }
  }
  validate(rec);
  out.recording = std::move(rec);
  return out;
}

std::vector<Recording> load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root))
    fail(ErrorCategory::io, "dataset directory " + root.string() + " does not exist");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "header")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Recording> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_recording(d).recording);
  return out;
}

void save_dataset(const std::vector<Recording>& recs, const std::filesystem::path& root) {
  for (const auto& r : recs) save_recording(r, root / r.recording_id);
}

}  // namespace prism
