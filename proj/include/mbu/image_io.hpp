#pragma once

// Binary PGM (P5) / PPM (P6) images in and P5 masks out.

#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "mbu/byte_io.hpp"
#include "mbu/error.hpp"
#include "mbu/tensor.hpp"

namespace mbu {

namespace detail {

inline int pnm_field(ByteReader& r, const std::vector<std::uint8_t>& bytes) {
  // skip whitespace and comments
  while (!r.at_end()) {
    const auto c = bytes[r.offset()];
    if (c == '#') {
      while (!r.at_end() && bytes[r.offset()] != '\n') r.u8();
    } else if (std::isspace(c)) {
      r.u8();
    } else {
      break;
    }
  }
  const std::size_t at = r.offset();
  long v = 0;
  int digits = 0;
  while (!r.at_end() && std::isdigit(bytes[r.offset()])) {
    v = v * 10 + (r.u8() - '0');
    if (++digits > 7) r.error_at(at, "header value too large");
  }
  if (digits == 0) r.error_at(at, "expected a decimal header value");
  return static_cast<int>(v);
}

}  // namespace detail

/// Decodes P5 or P6 with maxval <= 65535 into a 1 x H x W x C tensor in [0, 1].
inline FloatTensor decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& source = "image") {
  ByteReader r(bytes, source);
  const std::string magic = r.bytes(2);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    r.error_at(0, "unsupported image format (expected binary PGM P5 or PPM P6)");
  }
  const int w = detail::pnm_field(r, bytes);
  const int h = detail::pnm_field(r, bytes);
  const std::size_t max_at = r.offset();
  const int maxval = detail::pnm_field(r, bytes);
  if (w <= 0 || h <= 0) r.error_at(2, "zero image extent");
  if (maxval <= 0 || maxval > 65535) r.error_at(max_at, "maxval must lie in 1..65535");
  if (r.at_end() || !std::isspace(bytes[r.offset()])) r.error("expected one whitespace byte before pixel data");
  r.u8();
  const std::size_t sample = maxval > 255 ? 2 : 1;
  const std::size_t want = static_cast<std::size_t>(w) * h * channels * sample;
  if (r.remaining() < want) r.error("pixel data truncated: need " + std::to_string(want) + " bytes");
  FloatTensor img(1, h, w, channels);
  for (auto& v : img.data) {
    int s = r.u8();
    if (sample == 2) s = (s << 8) | r.u8();  // PNM 16-bit samples are big-endian
    v = static_cast<double>(s) / maxval;
  }
  return img;
}

inline FloatTensor read_image(const std::string& path) { return decode_pnm(read_file(path), path); }

/// Writes channel 0 of a 1 x H x W x C 0/1 mask as P5 with values {0, 255}.
inline std::vector<std::uint8_t> encode_mask(const std::vector<std::uint8_t>& mask, int h, int w, int c = 1) {
  require(mask.size() == static_cast<std::size_t>(h) * w * c && c >= 1, ErrorKind::Shape, "encode_mask: size mismatch");
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) out.push_back(mask[p * c] ? 255 : 0);
  return out;
}

inline void write_mask(const std::string& path, const std::vector<std::uint8_t>& mask, int h, int w, int c = 1) {
  write_file(path, encode_mask(mask, h, w, c));
}

}  // namespace mbu
