#pragma once

// Checkpoint container and its binary encoding.
//
// Layout (all integers little-endian):
//   "ECPP"                magic, 4 bytes
//   u32 version           kCheckpointVersion
//   u32 block_count
//   block_count × {
//     u32 name_length, name bytes (UTF-8)
//     u8  dtype            0 = f32, 1 = u64, 2 = u8
//     u32 rank, rank × u64 dims
//     payload              product(dims) elements, little-endian
//   }

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpp/tensor.hpp"

namespace ecpp {

inline constexpr char kCheckpointMagic[4] = {'E', 'C', 'P', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, U64 = 1, U8 = 2 };

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorBlock {
  std::string name;
  DType dtype = DType::F32;
  Shape dims;
  std::vector<float> f32;
  std::vector<std::uint64_t> u64;
  std::vector<std::uint8_t> u8;

  bool operator==(const TensorBlock&) const = default;
};

class Checkpoint {
 public:
  const std::vector<TensorBlock>& blocks() const { return blocks_; }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  void put_f32(const std::string& name, Shape dims, std::vector<float> values) {
    if (shape_numel(dims) != values.size()) throw CheckpointError("put_f32: size mismatch for " + name);
    upsert({name, DType::F32, std::move(dims), std::move(values), {}, {}});
  }
  void put_u64(const std::string& name, std::vector<std::uint64_t> values) {
    Shape dims{values.size()};
    upsert({name, DType::U64, std::move(dims), {}, std::move(values), {}});
  }
  void put_u64(const std::string& name, std::uint64_t value) { put_u64(name, std::vector<std::uint64_t>{value}); }
  void put_text(const std::string& name, const std::string& text) {
    upsert({name, DType::U8, {text.size()}, {}, {}, std::vector<std::uint8_t>(text.begin(), text.end())});
  }

  const TensorBlock& get(const std::string& name) const {
    const auto* b = find(name);
    if (!b) throw CheckpointError("checkpoint has no block named '" + name + "'");
    return *b;
  }
  const std::vector<float>& f32(const std::string& name) const { return typed(name, DType::F32).f32; }
  std::uint64_t u64(const std::string& name) const {
    const auto& v = typed(name, DType::U64).u64;
    if (v.size() != 1) throw CheckpointError("block '" + name + "' is not a scalar");
    return v[0];
  }
  std::string text(const std::string& name) const {
    const auto& b = typed(name, DType::U8);
    return {b.u8.begin(), b.u8.end()};
  }

  bool operator==(const Checkpoint&) const = default;

 private:
  const TensorBlock* find(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return &b;
    return nullptr;
  }
  const TensorBlock& typed(const std::string& name, DType t) const {
    const auto& b = get(name);
    if (b.dtype != t) throw CheckpointError("block '" + name + "' has unexpected dtype");
    return b;
  }
  void upsert(TensorBlock b) {
    for (auto& existing : blocks_)
      if (existing.name == b.name) {
        existing = std::move(b);
        return;
      }
    blocks_.push_back(std::move(b));
  }

  std::vector<TensorBlock> blocks_;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.blocks().size()));
  for (const auto& b : ck.blocks()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    out.push_back(static_cast<std::uint8_t>(b.dtype));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.dims.size()));
    for (auto d : b.dims) detail::put_le<std::uint64_t>(out, d);
    switch (b.dtype) {
      case DType::F32:
        for (float f : b.f32) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
        break;
      case DType::U64:
        for (auto v : b.u64) detail::put_le<std::uint64_t>(out, v);
        break;
      case DType::U8:
        out.insert(out.end(), b.u8.begin(), b.u8.end());
        break;
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader in(bytes);
  if (in.str(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = in.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  const auto count = in.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = in.str(in.le<std::uint32_t>());
    const auto dtype = in.le<std::uint8_t>();
    Shape dims(in.le<std::uint32_t>());
    for (auto& d : dims) d = in.le<std::uint64_t>();
    const std::size_t n = shape_numel(dims);
    switch (static_cast<DType>(dtype)) {
      case DType::F32: {
        std::vector<float> v(n);
        for (auto& f : v) f = std::bit_cast<float>(in.le<std::uint32_t>());
        ck.put_f32(name, dims, std::move(v));
        break;
      }
      case DType::U64: {
        std::vector<std::uint64_t> v(n);
        for (auto& x : v) x = in.le<std::uint64_t>();
        ck.put_u64(name, std::move(v));
        break;
      }
      case DType::U8:
        ck.put_text(name, in.str(n));
        break;
      default:
        throw CheckpointError("unknown dtype tag " + std::to_string(dtype) + " in block '" + name + "'");
    }
  }
  if (!in.done()) throw CheckpointError("trailing bytes after the last block");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ecpp
