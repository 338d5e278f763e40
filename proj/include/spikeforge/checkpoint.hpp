#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/binary_io.hpp"
#include "spikeforge/error.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

enum class DType : std::uint32_t { f64 = 0, f32 = 1, i8 = 2, i32 = 3 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f64: return 8;
    case DType::f32: return 4;
    case DType::i8: return 1;
    case DType::i32: return 4;
  }
  throw Error(Errc::FormatError, "unknown dtype");
}

/// Named tensors plus a JSON metadata block.
///
/// Layout (little-endian):
///   "SFTA" u32 version u32 count
///   count x { string name, u32 dtype, u32 rank, i32 dims[rank], payload }
///   string metadata_json
///   u32 crc32 of everything above
class TensorArchive {
 public:
  struct Entry {
    Shape shape;
    DType dtype;
    std::vector<std::uint8_t> payload;
  };

  nlohmann::json metadata = nlohmann::json::object();

  void put(const std::string& name, const Tensor& t) { put_raw(name, t.shape(), DType::f64, t.vec()); }
  void put(const std::string& name, const Tensor32& t) { put_raw(name, t.shape(), DType::f32, t.vec()); }
  void put_i8(const std::string& name, const Shape& s, const std::vector<std::int8_t>& v) {
    put_raw(name, s, DType::i8, v);
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(Errc::MissingArtifact, "archive has no tensor '" + name + "'");
    return it->second;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  Tensor get(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype == DType::f64) return Tensor(e.shape, decode<double>(e));
    if (e.dtype == DType::f32) return Tensor32(e.shape, decode<float>(e)).cast<double>();
    throw Error(Errc::FormatError, "tensor '" + name + "' is not floating point");
  }
  Tensor32 get32(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != DType::f32) return get(name).cast<float>();
    return Tensor32(e.shape, decode<float>(e));
  }
  std::vector<std::int8_t> get_i8(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != DType::i8) throw Error(Errc::FormatError, "tensor '" + name + "' is not int8");
    return decode<std::int8_t>(e);
  }

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.put_magic("SFTA");
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(std::uint32_t(entries_.size()));
    for (const auto& [name, e] : entries_) {
      w.put_string(name);
      w.put<std::uint32_t>(std::uint32_t(e.dtype));
      w.put<std::uint32_t>(std::uint32_t(e.shape.size()));
      for (int d : e.shape) w.put<std::int32_t>(d);
      w.put_bytes(e.payload);
    }
    w.put_string(metadata.dump());
    w.seal();
    return w.take();
  }

  static TensorArchive deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.verify_seal();
    r.expect_magic("SFTA");
    const auto version = r.get<std::uint32_t>();
    if (version != 1) throw Error(Errc::FormatError, "unsupported archive version " + std::to_string(version));
    TensorArchive a;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name = r.get_string();
      Entry e;
      const std::size_t at = r.position();
      const auto dt = r.get<std::uint32_t>();
      if (dt > 3) throw Error(Errc::FormatError, "bad dtype for '" + name + "'", at);
      e.dtype = DType(dt);
      const auto rank = r.get<std::uint32_t>();
      for (std::uint32_t k = 0; k < rank; ++k) {
        const auto d = r.get<std::int32_t>();
        if (d < 0) throw Error(Errc::FormatError, "negative extent in '" + name + "'", r.position() - 4);
        e.shape.push_back(d);
      }
      e.payload = r.get_array<std::uint8_t>(shape_size(e.shape) * dtype_size(e.dtype));
      a.entries_[name] = std::move(e);
    }
    a.metadata = nlohmann::json::parse(r.get_string());
    return a;
  }

  void save(const std::filesystem::path& p) const {
    const auto b = serialize();
    write_file_bytes(p, b);
  }
  static TensorArchive load(const std::filesystem::path& p) { return deserialize(read_file_bytes(p)); }

 private:
  template <typename T>
  void put_raw(const std::string& name, const Shape& s, DType d, const std::vector<T>& v) {
    if (shape_size(s) != v.size()) throw Error(Errc::ShapeMismatch, "archive entry '" + name + "'");
    Entry e{s, d, {}};
    e.payload.resize(v.size() * sizeof(T));
    if (!v.empty()) std::memcpy(e.payload.data(), v.data(), e.payload.size());
    entries_[name] = std::move(e);
  }

  template <typename T>
  static std::vector<T> decode(const Entry& e) {
    std::vector<T> v(e.payload.size() / sizeof(T));
    if (!v.empty()) std::memcpy(v.data(), e.payload.data(), e.payload.size());
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace spikeforge
