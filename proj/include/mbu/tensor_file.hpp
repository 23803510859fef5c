#pragma once

// RTEN raw tensor files: magic, version, dtype, rank, extents, payload.

#include <cstdint>
#include <string>
#include <vector>

#include "mbu/bitcore.hpp"
#include "mbu/byte_io.hpp"
#include "mbu/tensor.hpp"

namespace mbu {

inline constexpr char kTensorMagic[4] = {'R', 'T', 'E', 'N'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I32 = 2, Bits = 3 };

inline std::size_t element_bytes(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I32: return 4;
    case DType::Bits: return 0;
  }
  return 0;
}

/// Decoded tensor. Real dtypes fill `real`, I32 fills `ints`, Bits fills
/// `bits` (extents n,h,w,c; lanes packed per pixel in 128-lane blocks).
struct RawTensor {
  DType dtype = DType::F64;
  std::vector<std::uint32_t> extents;
  std::vector<double> real;
  std::vector<std::int32_t> ints;
  std::vector<std::uint64_t> bits;

  std::size_t elements() const {
    std::size_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
};

/// Payload bytes implied by a header.
inline std::size_t payload_bytes(DType d, const std::vector<std::uint32_t>& extents) {
  std::size_t n = 1;
  for (auto e : extents) n *= e;
  if (d != DType::Bits) return n * element_bytes(d);
  if (extents.size() != 4) return 0;
  const std::size_t pixels = static_cast<std::size_t>(extents[0]) * extents[1] * extents[2];
  return pixels * blocks_for(extents[3]) * kWordsPerBlock * 8;
}

inline std::vector<std::uint8_t> serialize_tensor(const RawTensor& t) {
  require(t.extents.size() <= 8, ErrorKind::Shape, "tensor file: rank exceeds 8");
  require(t.dtype != DType::Bits || t.extents.size() == 4, ErrorKind::Shape, "tensor file: bit tensors must have rank 4");
  ByteWriter w;
  w.bytes(kTensorMagic, 4);
  w.u32(kTensorVersion);
  w.u8(static_cast<std::uint8_t>(t.dtype));
  w.u32(static_cast<std::uint32_t>(t.extents.size()));
  for (auto e : t.extents) w.u32(e);
  switch (t.dtype) {
    case DType::F32:
      for (double v : t.real) w.f32(static_cast<float>(v));
      break;
    case DType::F64:
      for (double v : t.real) w.f64(v);
      break;
    case DType::I32:
      for (auto v : t.ints) w.i32(v);
      break;
    case DType::Bits:
      for (auto v : t.bits) w.u64(v);
      break;
  }
  require(w.buffer().size() == 13 + 4 * t.extents.size() + payload_bytes(t.dtype, t.extents), ErrorKind::Shape,
          "tensor file: payload does not match extents");
  return w.take();
}

inline RawTensor deserialize_tensor(const std::vector<std::uint8_t>& bytes, const std::string& source = "tensor") {
  ByteReader r(bytes, source);
  if (r.bytes(4) != std::string(kTensorMagic, 4)) r.error_at(0, "bad magic (expected RTEN)");
  if (const auto v = r.u32(); v != kTensorVersion) r.error_at(4, "unsupported version " + std::to_string(v));
  RawTensor t;
  const std::uint8_t d = r.u8();
  if (d > 3) r.error_at(8, "unknown dtype code " + std::to_string(d));
  t.dtype = static_cast<DType>(d);
  const std::uint32_t rank = r.u32();
  if (rank > 8) r.error_at(9, "rank " + std::to_string(rank) + " exceeds 8");
  if (t.dtype == DType::Bits && rank != 4) r.error_at(9, "bit-packed tensors must have rank 4 (n,h,w,c)");
  for (std::uint32_t i = 0; i < rank; ++i) t.extents.push_back(r.u32());
  const std::size_t want = payload_bytes(t.dtype, t.extents);
  if (r.remaining() != want) {
    r.error("payload is " + std::to_string(r.remaining()) + " bytes, header implies " + std::to_string(want));
  }
  const std::size_t n = t.elements();
  switch (t.dtype) {
    case DType::F32:
      t.real.resize(n);
      for (auto& v : t.real) v = r.f32();
      break;
    case DType::F64:
      t.real.resize(n);
      for (auto& v : t.real) v = r.f64();
      break;
    case DType::I32:
      t.ints.resize(n);
      for (auto& v : t.ints) v = r.i32();
      break;
    case DType::Bits:
      t.bits.resize(want / 8);
      for (auto& v : t.bits) v = r.u64();
      break;
  }
  return t;
}

inline RawTensor to_raw(const FloatTensor& x, DType d = DType::F64) {
  require(d == DType::F32 || d == DType::F64, ErrorKind::InvalidInput, "to_raw: real tensors need f32 or f64");
  RawTensor t;
  t.dtype = d;
  t.extents = {static_cast<std::uint32_t>(x.n), static_cast<std::uint32_t>(x.h), static_cast<std::uint32_t>(x.w),
               static_cast<std::uint32_t>(x.c)};
  t.real = x.data;
  return t;
}

inline RawTensor to_raw(const IntTensor& x) {
  RawTensor t;
  t.dtype = DType::I32;
  t.extents = {static_cast<std::uint32_t>(x.n), static_cast<std::uint32_t>(x.h), static_cast<std::uint32_t>(x.w),
               static_cast<std::uint32_t>(x.c)};
  t.ints = x.data;
  return t;
}

/// Dense layouts only; concat layouts are repacked first.
inline RawTensor to_raw(const BitTensor& x) {
  require(x.layout().segments().size() <= 1, ErrorKind::Layout, "to_raw: bit tensor must have a dense channel layout");
  RawTensor t;
  t.dtype = DType::Bits;
  t.extents = {static_cast<std::uint32_t>(x.n()), static_cast<std::uint32_t>(x.h()), static_cast<std::uint32_t>(x.w()),
               static_cast<std::uint32_t>(x.c())};
  t.bits.assign(x.data().begin(), x.data().end());
  return t;
}

inline FloatTensor to_float_tensor(const RawTensor& t) {
  require(t.dtype == DType::F32 || t.dtype == DType::F64, ErrorKind::InvalidInput, "tensor file: expected a real dtype");
  require(t.extents.size() == 4, ErrorKind::Shape, "tensor file: expected rank 4 (n,h,w,c)");
  FloatTensor x(static_cast<int>(t.extents[0]), static_cast<int>(t.extents[1]), static_cast<int>(t.extents[2]),
                static_cast<int>(t.extents[3]));
  x.data = t.real;
  return x;
}

inline BitTensor to_bit_tensor(const RawTensor& t) {
  require(t.dtype == DType::Bits && t.extents.size() == 4, ErrorKind::InvalidInput, "tensor file: expected rank-4 bits");
  BitTensor x(static_cast<int>(t.extents[0]), static_cast<int>(t.extents[1]), static_cast<int>(t.extents[2]),
              static_cast<int>(t.extents[3]));
  std::copy(t.bits.begin(), t.bits.end(), x.data().begin());
  require(x.pads_clear(), ErrorKind::Invariant, "tensor file: bit set in a pad lane");
  return x;
}

inline void write_tensor(const std::string& path, const RawTensor& t) { write_file(path, serialize_tensor(t)); }
inline RawTensor read_tensor(const std::string& path) { return deserialize_tensor(read_file(path), path); }

}  // namespace mbu
