#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/error.hpp"
#include "spikeforge/events.hpp"

namespace spikeforge {

/// PASCAL-VOC style box in pixel coordinates.
struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double objectness = 1.0;
  int label = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline BoundingBox clamp_box(BoundingBox b, Resolution r) {
  b.x_min = std::clamp(b.x_min, 0.0, double(r.width));
  b.x_max = std::clamp(b.x_max, 0.0, double(r.width));
  b.y_min = std::clamp(b.y_min, 0.0, double(r.height));
  b.y_max = std::clamp(b.y_max, 0.0, double(r.height));
  return b;
}

/// Ground truth at a point in time, for moving objects.
struct BoxKeyframe {
  std::int64_t t_us = 0;
  BoundingBox box;

  friend bool operator==(const BoxKeyframe&, const BoxKeyframe&) = default;
};

enum class SplitTag { train, val };

struct Sample {
  EventStream stream;
  std::vector<BoundingBox> boxes;
  std::vector<BoxKeyframe> track;  // empty for static annotations
  SplitTag split = SplitTag::train;
  int label = 0;

  /// Ground truth valid at time t: nearest keyframe when tracked, else the
  /// static boxes.
  std::vector<BoundingBox> boxes_at(std::int64_t t_us) const {
    if (track.empty()) return boxes;
    auto it = std::lower_bound(track.begin(), track.end(), t_us,
                               [](const BoxKeyframe& k, std::int64_t t) { return k.t_us < t; });
    if (it == track.end()) return {track.back().box};
    if (it != track.begin() && (t_us - std::prev(it)->t_us) <= (it->t_us - t_us)) --it;
    return {it->box};
  }

  /// One ground-truth list per bin, sampled at the bin midpoint.
  std::vector<std::vector<BoundingBox>> boxes_per_bin(std::int64_t window_us, int bins) const {
    std::vector<std::vector<BoundingBox>> out;
    out.reserve(bins);
    for (int k = 0; k < bins; ++k) out.push_back(boxes_at(k * window_us + window_us / 2));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Geometric transforms

/// x' = scale * x - offset_x (continuous coordinates); events map pixel
/// centres and are dropped when they leave the frame.
struct AffineTransform {
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
};

inline Sample apply_transform(const Sample& in, const AffineTransform& tf) {
  const Resolution res = in.stream.resolution;
  Sample out = in;
  out.stream.events.clear();
  for (const Event& e : in.stream.events) {
    const double xf = std::floor(tf.scale * (e.x + 0.5) - tf.offset_x);
    const double yf = std::floor(tf.scale * (e.y + 0.5) - tf.offset_y);
    if (xf < 0 || yf < 0 || xf >= res.width || yf >= res.height) continue;
    Event m = e;
    m.x = static_cast<std::uint16_t>(xf);
    m.y = static_cast<std::uint16_t>(yf);
    out.stream.events.push_back(m);
  }
  auto map_box = [&](const BoundingBox& b) {
    BoundingBox m = b;
    m.x_min = tf.scale * b.x_min - tf.offset_x;
    m.x_max = tf.scale * b.x_max - tf.offset_x;
    m.y_min = tf.scale * b.y_min - tf.offset_y;
    m.y_max = tf.scale * b.y_max - tf.offset_y;
    m = clamp_box(m, res);
    if (m.area() < 1.0) throw Error(Errc::DegenerateBox, "box collapsed below 1 px^2 after transform");
    return m;
  };
  for (auto& b : out.boxes) b = map_box(b);
  for (auto& k : out.track) k.box = map_box(k.box);
  return out;
}

struct AugmentConfig {
  double scale_min = 0.8;
  double scale_max = 1.2;
  bool random_crop = true;  // otherwise centre crop
};

/// Random scale + crop back to the original resolution, deterministic in
/// the seed. Throws DegenerateBox when a box does not survive.
inline Sample augment(const Sample& sample, std::uint64_t rng_seed, const AugmentConfig& cfg) {
  if (cfg.scale_min < 0.5 || cfg.scale_max > 1.5 || cfg.scale_min > cfg.scale_max)
    throw Error(Errc::InvalidArgument, "augment scale range must lie within [0.5, 1.5]");
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AffineTransform tf;
  tf.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u01(rng);
  const double slack_x = (tf.scale - 1.0) * sample.stream.resolution.width;
  const double slack_y = (tf.scale - 1.0) * sample.stream.resolution.height;
  // slack > 0: crop inside the enlarged image; slack < 0: place the shrunk
  // image inside the frame.
  const double ux = cfg.random_crop ? u01(rng) : 0.5;
  const double uy = cfg.random_crop ? u01(rng) : 0.5;
  tf.offset_x = std::round(slack_x * ux);
  tf.offset_y = std::round(slack_y * uy);
  return apply_transform(sample, tf);
}

/// Downsamples the event stream and rescales every box accordingly.
inline Sample downsample(const Sample& sample, Resolution target) {
  Sample out = sample;
  out.stream = downsample(sample.stream, target);
  const double sx = double(target.width) / sample.stream.resolution.width;
  const double sy = double(target.height) / sample.stream.resolution.height;
  auto scale_box = [&](BoundingBox b) {
    b.x_min *= sx;
    b.x_max *= sx;
    b.y_min *= sy;
    b.y_max *= sy;
    return b;
  };
  for (auto& b : out.boxes) b = scale_box(b);
  for (auto& k : out.track) k.box = scale_box(k.box);
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per-class shuffle and cut at round(train_frac * n_class).
inline SplitResult stratified_split(std::vector<Sample>& samples, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw Error(Errc::InvalidArgument, "train_frac must lie in (0,1)");
  if (samples.empty()) throw Error(Errc::EmptyClass, "no samples to split");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

  std::mt19937_64 rng(seed);
  SplitResult out;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * double(idx.size())));
    if (n_train == 0) throw Error(Errc::EmptyClass, "class " + std::to_string(label) + " has no training samples");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < n_train ? out.train : out.val).push_back(idx[k]);
      samples[idx[k]].split = k < n_train ? SplitTag::train : SplitTag::val;
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic moving-box recordings

struct SynthConfig {
  Resolution resolution{64, 64};
  double box_min = 16.0;  // side length range, px
  double box_max = 24.0;
  double speed_px_per_ms = 0.3;
  std::int64_t duration_us = 90'000;
  int saccades = 3;              // triangular path, returns to the start
  std::int64_t pause_us = 0;     // standstill between saccades
  double events_per_edge = 2.0;  // mean events per pixel brightness change
  double noise_rate_hz = 0.0;    // per pixel
  std::int64_t step_us = 250;
  int label = 0;
};

namespace detail {

struct MotionPath {
  double x0, y0, w, h;
  std::vector<double> dir_x, dir_y;  // per saccade unit direction
  double travel;                     // px per saccade
  std::int64_t move_us;              // duration of one saccade
  std::int64_t pause_us;

  /// Top-left corner of the rectangle at time t.
  std::pair<double, double> at(std::int64_t t) const {
    double x = x0, y = y0;
    std::int64_t remaining = t;
    for (std::size_t s = 0; s < dir_x.size() && remaining > 0; ++s) {
      const std::int64_t dt = std::min(remaining, move_us);
      const double frac = move_us > 0 ? double(dt) / double(move_us) : 0.0;
      x += dir_x[s] * travel * frac;
      y += dir_y[s] * travel * frac;
      remaining -= dt + pause_us;
    }
    return {x, y};
  }
};

}  // namespace detail

/// Emits ON events on the leading edge and OFF events on the trailing edge
/// of a bright rectangle moving over a dark background, plus uniform noise.
inline Sample synth_moving_box(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.resolution.width <= 0 || cfg.resolution.height <= 0 || cfg.step_us <= 0 || cfg.saccades <= 0)
    throw Error(Errc::InvalidArgument, "invalid synthetic config");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double W = cfg.resolution.width, H = cfg.resolution.height;

  detail::MotionPath path;
  path.w = std::min(W - 1.0, cfg.box_min + (cfg.box_max - cfg.box_min) * u01(rng));
  path.h = std::min(H - 1.0, cfg.box_min + (cfg.box_max - cfg.box_min) * u01(rng));
  path.pause_us = cfg.pause_us;
  path.move_us = std::max<std::int64_t>(0, (cfg.duration_us - cfg.pause_us * (cfg.saccades - 1)) / cfg.saccades);
  path.travel = cfg.speed_px_per_ms * double(path.move_us) / 1000.0;
  const double theta0 = 2.0 * M_PI * u01(rng);
  for (int s = 0; s < cfg.saccades; ++s) {
    const double a = theta0 + 2.0 * M_PI * s / 3.0;
    path.dir_x.push_back(std::cos(a));
    path.dir_y.push_back(std::sin(a));
  }
  // Vertices of the path relative to the start; shrink travel until it fits.
  auto extent = [&](double travel, double& lo_x, double& hi_x, double& lo_y, double& hi_y) {
    double x = 0, y = 0;
    lo_x = hi_x = lo_y = hi_y = 0;
    for (std::size_t s = 0; s < path.dir_x.size(); ++s) {
      x += path.dir_x[s] * travel;
      y += path.dir_y[s] * travel;
      lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x);
      lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
    }
  };
  double lo_x, hi_x, lo_y, hi_y;
  extent(path.travel, lo_x, hi_x, lo_y, hi_y);
  while ((hi_x - lo_x) + path.w > W || (hi_y - lo_y) + path.h > H) {
    path.travel *= 0.9;
    extent(path.travel, lo_x, hi_x, lo_y, hi_y);
  }
  path.x0 = -lo_x + (W - path.w - (hi_x - lo_x)) * u01(rng);
  path.y0 = -lo_y + (H - path.h - (hi_y - lo_y)) * u01(rng);

  Sample sample;
  sample.label = cfg.label;
  sample.stream.resolution = cfg.resolution;
  sample.stream.duration_us = cfg.duration_us;

  auto box_at = [&](std::int64_t t) {
    auto [x, y] = path.at(t);
    BoundingBox b{x, y, x + path.w, y + path.h, 1.0, cfg.label};
    return clamp_box(b, cfg.resolution);
  };
  auto inside = [](double px, double py, double x, double y, double w, double h) {
    const double cx = px + 0.5, cy = py + 0.5;
    return cx >= x && cx < x + w && cy >= y && cy < y + h;
  };

  std::vector<Event>& events = sample.stream.events;
  std::poisson_distribution<int> edge_count(cfg.events_per_edge);
  auto prev = path.at(0);
  sample.track.push_back({0, box_at(0)});
  for (std::int64_t t0 = 0; t0 < cfg.duration_us; t0 += cfg.step_us) {
    const std::int64_t t1 = std::min(cfg.duration_us, t0 + cfg.step_us);
    const auto cur = path.at(t1);
    const int xa = std::max(0, int(std::floor(std::min(prev.first, cur.first))) - 1);
    const int xb = std::min(int(W) - 1, int(std::ceil(std::max(prev.first, cur.first) + path.w)) + 1);
    const int ya = std::max(0, int(std::floor(std::min(prev.second, cur.second))) - 1);
    const int yb = std::min(int(H) - 1, int(std::ceil(std::max(prev.second, cur.second) + path.h)) + 1);
    std::uniform_int_distribution<std::int64_t> t_in(t0, t1 - 1);
    for (int py = ya; py <= yb; ++py) {
      for (int px = xa; px <= xb; ++px) {
        const bool was = inside(px, py, prev.first, prev.second, path.w, path.h);
        const bool now = inside(px, py, cur.first, cur.second, path.w, path.h);
        if (was == now) continue;
        const int k = edge_count(rng);
        for (int i = 0; i < k; ++i)
          events.push_back({static_cast<std::uint16_t>(px), static_cast<std::uint16_t>(py), t_in(rng),
                            static_cast<std::uint8_t>(now ? 1 : 0)});
      }
    }
    prev = cur;
    sample.track.push_back({t1, box_at(t1)});
  }

  if (cfg.noise_rate_hz > 0.0 && cfg.duration_us > 0) {
    const double mean = cfg.noise_rate_hz * (double(cfg.duration_us) * 1e-6) * W * H;
    const auto n = std::poisson_distribution<long long>(mean)(rng);
    std::uniform_int_distribution<int> ux(0, int(W) - 1), uy(0, int(H) - 1), up(0, 1);
    std::uniform_int_distribution<std::int64_t> ut(0, cfg.duration_us - 1);
    for (long long i = 0; i < n; ++i)
      events.push_back({static_cast<std::uint16_t>(ux(rng)), static_cast<std::uint16_t>(uy(rng)), ut(rng),
                        static_cast<std::uint8_t>(up(rng))});
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  sample.boxes = {sample.track.front().box};
  return sample;
}

// ---------------------------------------------------------------------------
// JSONL annotation sidecar: one box per line. An optional "t_us" key turns
// the line into a track keyframe.

inline nlohmann::json box_to_json(const BoundingBox& b) {
  return {{"x_min", b.x_min}, {"y_min", b.y_min},           {"x_max", b.x_max},
          {"y_max", b.y_max}, {"objectness", b.objectness}, {"label", b.label}};
}

inline BoundingBox box_from_json(const nlohmann::json& j) {
  BoundingBox b;
  b.x_min = j.at("x_min").get<double>();
  b.y_min = j.at("y_min").get<double>();
  b.x_max = j.at("x_max").get<double>();
  b.y_max = j.at("y_max").get<double>();
  b.objectness = j.value("objectness", 1.0);
  b.label = j.value("label", 0);
  return b;
}

inline std::string annotations_to_jsonl(const Sample& s) {
  std::ostringstream os;
  for (const auto& b : s.boxes) os << box_to_json(b).dump() << '\n';
  for (const auto& k : s.track) {
    auto j = box_to_json(k.box);
    j["t_us"] = k.t_us;
    os << j.dump() << '\n';
  }
  return os.str();
}

/// Parses a sidecar into (static boxes, track). Line numbers are 1-based in
/// error messages.
inline void annotations_from_jsonl(const std::string& text, std::vector<BoundingBox>& boxes,
                                   std::vector<BoxKeyframe>& track) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const BoundingBox b = box_from_json(j);
      if (!b.valid()) throw Error(Errc::FormatError, "degenerate box");
      if (j.contains("t_us"))
        track.push_back({j.at("t_us").get<std::int64_t>(), b});
      else
        boxes.push_back(b);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::FormatError, "annotation line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::FormatError, "annotation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::stable_sort(track.begin(), track.end(), [](const auto& a, const auto& b) { return a.t_us < b.t_us; });
}

// ---------------------------------------------------------------------------
// Dataset manifest: one entry per recording, paths relative to the manifest.

struct ManifestEntry {
  std::string name;
  std::string events;       // AER file
  std::string annotations;  // JSONL sidecar
  SplitTag split = SplitTag::train;
  int label = 0;
  std::uint32_t events_crc32 = 0;
  std::size_t n_events = 0;
  std::int64_t duration_us = 0;
};

struct DatasetManifest {
  Resolution resolution;
  std::string source;  // "synthetic" or the ingested directory
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> samples;
};

inline const char* to_string(SplitTag t) { return t == SplitTag::train ? "train" : "val"; }

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.samples)
    samples.push_back({{"name", e.name},
                       {"events", e.events},
                       {"annotations", e.annotations},
                       {"split", to_string(e.split)},
                       {"label", e.label},
                       {"events_crc32", e.events_crc32},
                       {"n_events", e.n_events},
                       {"duration_us", e.duration_us}});
  return {{"version", 1},
          {"resolution", {m.resolution.width, m.resolution.height}},
          {"source", m.source},
          {"seed", m.seed},
          {"samples", samples}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    if (j.at("version").get<int>() != 1) throw Error(Errc::FormatError, "unsupported manifest version");
    const auto r = j.at("resolution").get<std::array<int, 2>>();
    m.resolution = {r[0], r[1]};
    m.source = j.at("source").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& sj : j.at("samples")) {
      ManifestEntry e;
      e.name = sj.at("name").get<std::string>();
      e.events = sj.at("events").get<std::string>();
      e.annotations = sj.at("annotations").get<std::string>();
      const auto split = sj.at("split").get<std::string>();
      if (split != "train" && split != "val") throw Error(Errc::FormatError, "unknown split '" + split + "'");
      e.split = split == "train" ? SplitTag::train : SplitTag::val;
      e.label = sj.at("label").get<int>();
      e.events_crc32 = sj.at("events_crc32").get<std::uint32_t>();
      e.n_events = sj.at("n_events").get<std::size_t>();
      e.duration_us = sj.at("duration_us").get<std::int64_t>();
      m.samples.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("manifest: ") + e.what());
  }
}

/// Writes the recording and its sidecar under `dir` and returns the entry.
inline ManifestEntry store_sample(const Sample& s, const std::string& name, const std::filesystem::path& dir) {
  ManifestEntry e;
  e.name = name;
  e.events = name + ".aer";
  e.annotations = name + ".jsonl";
  e.split = s.split;
  e.label = s.label;
  const auto bytes = encode_aer(s.stream);
  write_file_bytes(dir / e.events, bytes);
  write_text_file(dir / e.annotations, annotations_to_jsonl(s));
  e.events_crc32 = crc32_of(bytes);
  e.n_events = s.stream.events.size();
  e.duration_us = s.stream.duration_us;
  return e;
}

/// Reads one manifest entry back, checking the recorded checksum and count.
inline Sample load_sample(const ManifestEntry& e, const std::filesystem::path& base, Resolution r) {
  const auto bytes = read_file_bytes(base / e.events);
  if (crc32_of(bytes) != e.events_crc32)
    throw Error(Errc::ChecksumMismatch, (base / e.events).string() + ": checksum differs from the manifest");
  Sample s;
  s.stream = decode_aer(bytes, r);
  if (s.stream.events.size() != e.n_events)
    throw Error(Errc::FormatError, (base / e.events).string() + ": event count differs from the manifest");
  s.stream.duration_us = std::max(s.stream.duration_us, e.duration_us);
  annotations_from_jsonl(read_text_file(base / e.annotations), s.boxes, s.track);
  if (s.boxes.empty() && s.track.empty())
    throw Error(Errc::NoGroundTruth, (base / e.annotations).string() + ": no boxes");
  if (!s.track.empty() && s.boxes.empty()) s.boxes = {s.track.front().box};
  s.split = e.split;
  s.label = e.label;
  return s;
}

}  // namespace spikeforge
