#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spikeforge/binary_io.hpp"
#include "spikeforge/error.hpp"

namespace spikeforge {

/// One sensor event. Polarity 1 is ON (+1), 0 is OFF (-1).
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int64_t t = 0;  // microseconds
  std::uint8_t p = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct Resolution {
  int width = 0;
  int height = 0;

  friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct EventStream {
  std::vector<Event> events;
  Resolution resolution;
  std::int64_t duration_us = 0;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  /// Throws if any event is out of bounds or timestamps decrease.
  void validate() const {
    std::int64_t last = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.x >= resolution.width || e.y >= resolution.height)
        throw Error(Errc::OutOfBounds, "event " + std::to_string(i) + " outside resolution");
      if (e.t < 0 || e.t < last) throw Error(Errc::NonMonotonicTimestamp, "event " + std::to_string(i));
      if (e.p > 1) throw Error(Errc::InvalidArgument, "polarity must be 0 or 1");
      last = e.t;
    }
  }
};

// ---------------------------------------------------------------------------
// AER, 5-byte records: x | y | p<<7 | t[22:16] | t[15:8] | t[7:0]

inline constexpr std::size_t kAerRecordBytes = 5;
inline constexpr std::int64_t kAerMaxTimestamp = (std::int64_t{1} << 23) - 1;

inline EventStream decode_aer(std::span<const std::uint8_t> bytes, Resolution resolution) {
  if (bytes.size() % kAerRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kAerRecordBytes;
    throw Error(Errc::TruncatedRecord,
                "buffer length " + std::to_string(bytes.size()) + " is not a multiple of 5; trailing record at byte " +
                    std::to_string(offset),
                offset);
  }
  EventStream stream;
  stream.resolution = resolution;
  stream.events.reserve(bytes.size() / kAerRecordBytes);
  std::int64_t last_t = 0;
  for (std::size_t off = 0; off < bytes.size(); off += kAerRecordBytes) {
    Event e;
    e.x = bytes[off];
    e.y = bytes[off + 1];
    e.p = static_cast<std::uint8_t>(bytes[off + 2] >> 7);
    e.t = (std::int64_t{bytes[off + 2] & 0x7F} << 16) | (std::int64_t{bytes[off + 3]} << 8) | bytes[off + 4];
    if (e.x >= resolution.width || e.y >= resolution.height)
      throw Error(Errc::OutOfBounds,
                  "event (" + std::to_string(e.x) + "," + std::to_string(e.y) + ") at byte " + std::to_string(off), off);
    if (e.t < last_t)
      throw Error(Errc::NonMonotonicTimestamp,
                  "timestamp " + std::to_string(e.t) + " < " + std::to_string(last_t) + " at byte " +
                      std::to_string(off),
                  off);
    last_t = e.t;
    stream.events.push_back(e);
  }
  stream.duration_us = stream.events.empty() ? 0 : stream.events.back().t + 1;
  return stream;
}

inline std::vector<std::uint8_t> encode_aer(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(stream.events.size() * kAerRecordBytes);
  for (const Event& e : stream.events) {
    if (e.t < 0 || e.t > kAerMaxTimestamp)
      throw Error(Errc::TimestampOverflow, "timestamp " + std::to_string(e.t) + " does not fit in 23 bits");
    if (e.x > 255 || e.y > 255) throw Error(Errc::OutOfBounds, "coordinate does not fit in one byte");
    out.push_back(static_cast<std::uint8_t>(e.x));
    out.push_back(static_cast<std::uint8_t>(e.y));
    out.push_back(static_cast<std::uint8_t>(((e.p & 1) << 7) | ((e.t >> 16) & 0x7F)));
    out.push_back(static_cast<std::uint8_t>((e.t >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(e.t & 0xFF));
  }
  return out;
}

inline EventStream read_aer_file(const std::filesystem::path& path, Resolution resolution) {
  return decode_aer(read_file_bytes(path), resolution);
}

inline void write_aer_file(const std::filesystem::path& path, const EventStream& stream) {
  write_file_bytes(path, encode_aer(stream));
}

// ---------------------------------------------------------------------------

/// Nearest-lower rebinning of pixel coordinates. Events landing on the same
/// target pixel are all kept.
inline EventStream downsample(const EventStream& stream, Resolution target) {
  const Resolution src = stream.resolution;
  if (target.width <= 0 || target.height <= 0 || target.width > src.width || target.height > src.height)
    throw Error(Errc::InvalidTarget, "target " + std::to_string(target.width) + "x" + std::to_string(target.height) +
                                         " must be positive and no larger than the source");
  EventStream out;
  out.resolution = target;
  out.duration_us = stream.duration_us;
  out.events.reserve(stream.events.size());
  for (Event e : stream.events) {
    e.x = static_cast<std::uint16_t>(std::int64_t{e.x} * target.width / src.width);
    e.y = static_cast<std::uint16_t>(std::int64_t{e.y} * target.height / src.height);
    out.events.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class Representation { binary, histogram };

inline const char* to_string(Representation r) { return r == Representation::binary ? "binary" : "histogram"; }

inline Representation representation_from_string(const std::string& s) {
  if (s == "binary") return Representation::binary;
  if (s == "histogram") return Representation::histogram;
  throw Error(Errc::InvalidArgument, "unknown representation '" + s + "'");
}

/// Dense [T, P=2, H, W] event counts.
struct FrameSequence {
  int T = 0;
  int P = 2;
  int H = 0;
  int W = 0;
  std::int64_t window_us = 0;
  Representation mode = Representation::histogram;
  std::vector<std::uint16_t> data;

  std::size_t frame_size() const { return static_cast<std::size_t>(P) * H * W; }
  std::size_t index(int t, int p, int y, int x) const {
    return ((static_cast<std::size_t>(t) * P + p) * H + y) * W + x;
  }
  std::uint16_t at(int t, int p, int y, int x) const { return data[index(t, p, y, x)]; }
  std::span<const std::uint16_t> frame(int t) const {
    return std::span(data).subspan(static_cast<std::size_t>(t) * frame_size(), frame_size());
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto v : data) s += v;
    return s;
  }
};

/// Bins events by floor(t / window_us). T comes from the declared duration.
inline FrameSequence bin_events(const EventStream& stream, std::int64_t window_us, Representation mode) {
  if (window_us <= 0) throw Error(Errc::InvalidArgument, "window_us must be positive");
  FrameSequence f;
  f.H = stream.resolution.height;
  f.W = stream.resolution.width;
  f.window_us = window_us;
  f.mode = mode;
  std::int64_t T = (stream.duration_us + window_us - 1) / window_us;
  if (!stream.events.empty()) T = std::max<std::int64_t>(T, stream.events.back().t / window_us + 1);
  f.T = static_cast<int>(T);
  f.data.assign(static_cast<std::size_t>(f.T) * f.frame_size(), 0);
  for (const Event& e : stream.events) {
    auto& cell = f.data[f.index(static_cast<int>(e.t / window_us), e.p, e.y, e.x)];
    if (mode == Representation::binary)
      cell = 1;
    else if (cell < std::numeric_limits<std::uint16_t>::max())
      ++cell;
  }
  return f;
}

// Frame file: "SFFR" u32 version | u32 T | u32 P | u32 H | u32 W | u32 mode |
// i64 window_us | u16[T*P*H*W] | u32 crc32

inline std::vector<std::uint8_t> serialize_frames(const FrameSequence& f) {
  ByteWriter w;
  w.put_magic("SFFR");
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.T));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.P));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.H));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.W));
  w.put<std::uint32_t>(f.mode == Representation::binary ? 0u : 1u);
  w.put<std::int64_t>(f.window_us);
  w.put_array<std::uint16_t>(f.data);
  w.seal();
  return w.take();
}

inline FrameSequence deserialize_frames(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.verify_seal();
  r.expect_magic("SFFR");
  if (r.get<std::uint32_t>() != 1) throw Error(Errc::FormatError, "unsupported frame file version");
  FrameSequence f;
  f.T = static_cast<int>(r.get<std::uint32_t>());
  f.P = static_cast<int>(r.get<std::uint32_t>());
  f.H = static_cast<int>(r.get<std::uint32_t>());
  f.W = static_cast<int>(r.get<std::uint32_t>());
  f.mode = r.get<std::uint32_t>() == 0 ? Representation::binary : Representation::histogram;
  f.window_us = r.get<std::int64_t>();
  f.data = r.get_array<std::uint16_t>(static_cast<std::size_t>(f.T) * f.frame_size());
  return f;
}

}  // namespace spikeforge
