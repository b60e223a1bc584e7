#pragma once

// ECG record storage, the tab-separated dataset manifest, the nine diagnostic
// class codes and the synthetic ECG fixture used for desk-scale runs.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "amplinet/errors.hpp"

namespace amplinet {

inline constexpr std::size_t kNumClasses = 9;
inline constexpr std::size_t kNumLeads = 12;

/// Diagnostic classes. The numeric order is frozen: it is the one-hot index,
/// the label byte of the record format and the classifier output order.
enum class ClassCode : std::uint8_t { NSR = 0, AF, IAVB, LBBB, RBBB, PAC, PVC, STD, STE };

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"NSR",  "AF",  "IAVB", "LBBB", "RBBB",
                                                                          "PAC",  "PVC", "STD",  "STE"};

[[nodiscard]] constexpr std::size_t class_index(ClassCode c) { return static_cast<std::size_t>(c); }
[[nodiscard]] constexpr std::string_view class_name(ClassCode c) { return kClassNames[class_index(c)]; }

[[nodiscard]] inline std::optional<ClassCode> class_from_index(std::size_t index) {
  if (index >= kNumClasses) return std::nullopt;
  return static_cast<ClassCode>(index);
}

[[nodiscard]] inline std::optional<ClassCode> parse_class_code(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<ClassCode>(i);
  }
  return std::nullopt;
}

enum class Sex : std::uint8_t { unknown = 0, male = 1, female = 2 };

/// Sample matrix, lead-major: value(l, i) = data[l * n_samples + i]. Millivolts.
struct SignalMatrix {
  std::size_t n_leads = 0;
  std::size_t n_samples = 0;
  std::vector<double> data;

  SignalMatrix() = default;
  SignalMatrix(std::size_t leads, std::size_t samples, double fill = 0.0)
      : n_leads(leads), n_samples(samples), data(leads * samples, fill) {}

  [[nodiscard]] double& operator()(std::size_t l, std::size_t i) { return data[l * n_samples + i]; }
  [[nodiscard]] double operator()(std::size_t l, std::size_t i) const { return data[l * n_samples + i]; }
  [[nodiscard]] std::span<double> lead(std::size_t l) { return {data.data() + l * n_samples, n_samples}; }
  [[nodiscard]] std::span<const double> lead(std::size_t l) const { return {data.data() + l * n_samples, n_samples}; }

  friend bool operator==(const SignalMatrix&, const SignalMatrix&) = default;
};

struct EcgRecord {
  std::string id;
  double sample_rate_hz = 500.0;
  SignalMatrix samples;
  ClassCode label = ClassCode::NSR;
  std::optional<std::uint16_t> age;
  Sex sex = Sex::unknown;

  [[nodiscard]] std::size_t n_leads() const { return samples.n_leads; }
  [[nodiscard]] std::size_t n_samples() const { return samples.n_samples; }

  friend bool operator==(const EcgRecord&, const EcgRecord&) = default;
};

/// Throws DataError describing the first violated record invariant.
inline void validate_record(const EcgRecord& r) {
  if (r.samples.n_leads == 0) throw DataError("record " + r.id + ": n_leads must be positive");
  if (r.samples.n_samples == 0) throw DataError("record " + r.id + ": n_samples must be positive");
  if (r.samples.data.size() != r.samples.n_leads * r.samples.n_samples) {
    throw DataError("record " + r.id + ": leads have unequal length");
  }
  if (!(r.sample_rate_hz > 0.0) || !std::isfinite(r.sample_rate_hz)) {
    throw DataError("record " + r.id + ": sample_rate_hz must be positive");
  }
  if (class_index(r.label) >= kNumClasses) throw DataError("record " + r.id + ": invalid label");
  for (double v : r.samples.data) {
    if (!std::isfinite(v)) throw DataError("record " + r.id + ": non-finite sample");
  }
}

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace detail

inline constexpr std::uint16_t kRecordFormatVersion = 1;
inline constexpr std::size_t kRecordHeaderBytes = 20;
inline constexpr std::uint16_t kAgeAbsent = 65535;

/// Serializes to the "ECG1" layout:
///   magic "ECG1" | u16 version | u16 n_leads | u32 n_samples | f32 rate |
///   u8 label | u8 sex | u16 age (65535 = absent) | f32 samples, lead-major.
/// All integers and floats little-endian. The record id is not stored; readers
/// take it from the file stem.
inline std::string encode_record(const EcgRecord& r) {
  validate_record(r);
  if (r.n_leads() > 0xFFFF) throw DataError("record " + r.id + ": too many leads for format");
  if (r.n_samples() > 0xFFFFFFFFull) throw DataError("record " + r.id + ": too many samples for format");
  if (r.age && *r.age == kAgeAbsent) throw DataError("record " + r.id + ": age 65535 is reserved");

  std::string out;
  out.reserve(kRecordHeaderBytes + r.samples.data.size() * 4);
  out.append("ECG1");
  detail::put_le(out, kRecordFormatVersion, 2);
  detail::put_le(out, r.n_leads(), 2);
  detail::put_le(out, r.n_samples(), 4);
  detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(r.sample_rate_hz)), 4);
  detail::put_le(out, class_index(r.label), 1);
  detail::put_le(out, static_cast<std::uint8_t>(r.sex), 1);
  detail::put_le(out, r.age.value_or(kAgeAbsent), 2);
  for (double v : r.samples.data) detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  return out;
}

inline EcgRecord decode_record(std::string_view bytes, std::string id) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || bytes.substr(0, 4) != "ECG1") throw DataError("bad magic");
  if (bytes.size() < kRecordHeaderBytes) throw DataError("truncated header");
  const auto version = detail::get_le(p + 4, 2);
  if (version != kRecordFormatVersion) {
    throw DataError("unsupported format_version " + std::to_string(version));
  }
  const auto n_leads = static_cast<std::size_t>(detail::get_le(p + 6, 2));
  const auto n_samples = static_cast<std::size_t>(detail::get_le(p + 8, 4));
  const float rate = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(p + 12, 4)));
  const auto label = static_cast<std::size_t>(detail::get_le(p + 16, 1));
  const auto sex = static_cast<std::uint8_t>(detail::get_le(p + 17, 1));
  const auto age = static_cast<std::uint16_t>(detail::get_le(p + 18, 2));

  if (n_leads == 0) throw DataError("invalid n_leads: 0");
  if (n_samples == 0) throw DataError("invalid n_samples: 0");
  if (!(rate > 0.0f) || !std::isfinite(rate)) throw DataError("invalid sample_rate_hz");
  if (label >= kNumClasses) throw DataError("invalid label_index " + std::to_string(label));
  if (sex > 2) throw DataError("invalid sex_code " + std::to_string(sex));
  if (bytes.size() - kRecordHeaderBytes < n_leads * n_samples * 4) throw DataError("truncated payload");

  EcgRecord r;
  r.id = std::move(id);
  r.sample_rate_hz = rate;
  r.label = static_cast<ClassCode>(label);
  r.sex = static_cast<Sex>(sex);
  if (age != kAgeAbsent) r.age = age;
  r.samples = SignalMatrix(n_leads, n_samples);
  const unsigned char* payload = p + kRecordHeaderBytes;
  for (std::size_t i = 0; i < r.samples.data.size(); ++i) {
    const float v = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(payload + 4 * i, 4)));
    if (!std::isfinite(v)) throw DataError("non-finite sample at index " + std::to_string(i));
    r.samples.data[i] = v;
  }
  return r;
}

/// Validates before touching the filesystem, so a bad record never leaves a partial file.
inline void write_record(const EcgRecord& record, const std::filesystem::path& path) {
  detail::write_file(path, encode_record(record));
}

inline EcgRecord read_record(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  try {
    return decode_record(bytes, path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string id;
  std::string record_path;  // relative to the manifest root
  ClassCode label = ClassCode::NSR;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  [[nodiscard]] std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.record_path; }
};

/// Parses `<id>\t<relative_path>\t<class_code>` lines. Paths resolve against
/// the manifest's directory. Blank lines are ignored.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());

  DatasetManifest m;
  m.root = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };

    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) throw DataError(where() + "expected 3 tab-separated fields");

    const auto code = parse_class_code(fields[2]);
    if (!code) throw DataError(where() + "unknown class code '" + fields[2] + "'");
    if (!seen.insert(fields[0]).second) throw DataError(where() + "duplicate id '" + fields[0] + "'");
    ManifestEntry e{fields[0], fields[1], *code};
    if (!std::filesystem::exists(m.resolve(e))) throw DataError(where() + "missing file " + m.resolve(e).string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& e : m.entries) os << e.id << '\t' << e.record_path << '\t' << class_name(e.label) << '\n';
  detail::write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// Synthetic ECG fixture. Not a physiological simulator: the only promises are
// determinism in (class, seed, duration, rate) and classes that a small
// network can tell apart after decimation to 50 Hz.

enum class BeatKind : std::uint8_t { normal, premature_atrial, premature_ventricular };

struct BeatSchedule {
  std::vector<double> r_times;  // seconds
  std::vector<BeatKind> kinds;

  [[nodiscard]] std::vector<double> intervals() const {
    std::vector<double> rr;
    for (std::size_t i = 1; i < r_times.size(); ++i) rr.push_back(r_times[i] - r_times[i - 1]);
    return rr;
  }
};

namespace detail {

inline std::mt19937_64 synthetic_rng(ClassCode code, std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(class_index(code)), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// Lead projection factors; negative entries flip polarity.
inline constexpr std::array<double, kNumLeads> kLeadFactors = {1.0, 1.2, 0.3, -1.0, 0.45, 0.8,
                                                               -0.4, 0.5, 0.9, 1.3, 1.1, 0.8};

struct Wave {
  double offset;  // seconds relative to the R peak
  double width;   // gaussian sigma, seconds
  double amp;     // millivolts
};

inline double gaussian(double t, const Wave& w) {
  const double z = (t - w.offset) / w.width;
  return w.amp * std::exp(-0.5 * z * z);
}

// Smooth plateau over [a, b] with soft edges, used for ST shifts.
inline double plateau(double t, double a, double b, double edge) {
  const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return sig((t - a) / edge) * sig((b - t) / edge);
}

struct BeatShape {
  std::vector<Wave> waves;
  double st_shift = 0.0;
};

inline BeatShape beat_shape(ClassCode code, BeatKind kind) {
  if (kind == BeatKind::premature_ventricular) {
    return {{{0.0, 0.05, -1.5}, {0.09, 0.04, 0.5}, {0.34, 0.07, 0.6}}, 0.0};
  }
  BeatShape s{{{-0.16, 0.03, 0.18},   // P
               {-0.035, 0.012, -0.12},  // Q
               {0.0, 0.015, 1.2},       // R
               {0.035, 0.012, -0.3},    // S
               {0.28, 0.06, 0.35}},     // T
              0.0};
  if (kind == BeatKind::premature_atrial) s.waves[0] = {-0.12, 0.025, -0.2};
  switch (code) {
    case ClassCode::AF:
      s.waves.erase(s.waves.begin());
      break;
    case ClassCode::IAVB:
      s.waves[0] = {-0.38, 0.04, 0.25};
      break;
    case ClassCode::LBBB:
      s.waves = {{-0.16, 0.03, 0.18}, {0.02, 0.05, 1.1}, {0.32, 0.07, -0.4}};
      break;
    case ClassCode::RBBB:
      s.waves = {{-0.16, 0.03, 0.18}, {0.0, 0.015, 0.9}, {0.03, 0.02, -0.3}, {0.08, 0.03, 0.8}, {0.3, 0.06, -0.2}};
      break;
    case ClassCode::STD:
      s.st_shift = -0.3;
      s.waves[4].amp = 0.1;
      break;
    case ClassCode::STE:
      s.st_shift = 0.35;
      break;
    default:
      break;
  }
  return s;
}

}  // namespace detail

/// Beat times for a synthetic recording. Exposed so tests can inspect rhythm
/// statistics directly; generate_synthetic renders exactly this schedule.
inline BeatSchedule plan_beats(ClassCode code, std::uint64_t seed, double duration_s) {
  if (!(duration_s > 0.0)) throw UsageError("duration_s must be positive");
  auto rng = detail::synthetic_rng(code, seed, 0);
  std::uniform_real_distribution<double> base_dist(0.75, 0.95);
  const double base = base_dist(rng);
  std::normal_distribution<double> jitter(0.0, 0.015);
  std::uniform_real_distribution<double> af_scale(0.55, 1.45);
  std::uniform_int_distribution<int> ectopic_gap(3, 5);

  BeatSchedule s;
  double t = std::uniform_real_distribution<double>(0.2, 0.2 + base)(rng);
  int until_ectopic = ectopic_gap(rng);
  const bool ectopic_class = code == ClassCode::PAC || code == ClassCode::PVC;
  while (t < duration_s) {
    BeatKind kind = BeatKind::normal;
    if (ectopic_class && !s.r_times.empty() && --until_ectopic == 0) {
      kind = code == ClassCode::PAC ? BeatKind::premature_atrial : BeatKind::premature_ventricular;
      until_ectopic = ectopic_gap(rng);
      t = s.r_times.back() + 0.6 * base;
    }
    s.r_times.push_back(t);
    s.kinds.push_back(kind);
    if (code == ClassCode::AF) {
      t += base * af_scale(rng);
    } else if (kind == BeatKind::premature_ventricular) {
      t += 1.4 * base;  // compensatory pause
    } else {
      t += base + jitter(rng);
    }
  }
  return s;
}

inline EcgRecord generate_synthetic(ClassCode code, std::uint64_t seed, double duration_s, double sample_rate_hz) {
  if (!(duration_s > 0.0)) throw UsageError("duration_s must be positive");
  if (!(sample_rate_hz > 0.0)) throw UsageError("sample_rate_hz must be positive");

  const BeatSchedule beats = plan_beats(code, seed, duration_s);
  auto rng = detail::synthetic_rng(code, seed, 1);
  std::normal_distribution<double> noise(0.0, 0.03);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double wander_phase = phase(rng);
  const double af_phase = phase(rng);

  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  std::vector<double> templ(n, 0.0);
  for (std::size_t b = 0; b < beats.r_times.size(); ++b) {
    const double r = beats.r_times[b];
    const auto shape = detail::beat_shape(code, beats.kinds[b]);
    const auto lo = static_cast<std::ptrdiff_t>(std::floor((r - 0.6) * sample_rate_hz));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil((r + 0.7) * sample_rate_hz));
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0); i < std::min<std::ptrdiff_t>(hi, std::ptrdiff_t(n)); ++i) {
      const double t = static_cast<double>(i) / sample_rate_hz - r;
      double v = 0.0;
      for (const auto& w : shape.waves) v += detail::gaussian(t, w);
      if (shape.st_shift != 0.0) v += shape.st_shift * detail::plateau(t, 0.06, 0.32, 0.02);
      templ[static_cast<std::size_t>(i)] += v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate_hz;
    templ[i] += 0.08 * std::sin(2.0 * std::numbers::pi * 0.25 * t + wander_phase);
    if (code == ClassCode::AF) templ[i] += 0.06 * std::sin(2.0 * std::numbers::pi * 6.0 * t + af_phase);
  }

  EcgRecord rec;
  rec.id = std::string(class_name(code)) + "_" + std::to_string(seed);
  rec.sample_rate_hz = sample_rate_hz;
  rec.label = code;
  rec.samples = SignalMatrix(kNumLeads, n);
  for (std::size_t l = 0; l < kNumLeads; ++l) {
    for (std::size_t i = 0; i < n; ++i) rec.samples(l, i) = detail::kLeadFactors[l] * templ[i] + noise(rng);
  }
  rec.age = static_cast<std::uint16_t>(std::uniform_int_distribution<int>(20, 85)(rng));
  rec.sex = std::bernoulli_distribution(0.5)(rng) ? Sex::male : Sex::female;
  return rec;
}

}  // namespace amplinet
