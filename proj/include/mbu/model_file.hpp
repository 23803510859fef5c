#pragma once

// MBUN compiled-model files. Layout is documented in docs/formats.md.

#include <cstdint>
#include <string>
#include <vector>

#include "mbu/byte_io.hpp"
#include "mbu/error.hpp"
#include "mbu/unet.hpp"

namespace mbu {

inline constexpr char kModelMagic[4] = {'M', 'B', 'U', 'N'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void write_config(ByteWriter& w, const UNetConfig& c) {
  for (int v : {c.in_channels, c.out_channels, c.height, c.width}) w.u32(static_cast<std::uint32_t>(v));
  for (int v : c.encoder) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(c.bottleneck));
  for (int v : c.up_transposed) w.u32(static_cast<std::uint32_t>(v));
  for (int v : c.decoder) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(c.up_kernel));
  w.u32(static_cast<std::uint32_t>(c.up_stride));
  w.u16(static_cast<std::uint16_t>(c.precision.id()));
  w.u8(static_cast<std::uint8_t>(c.stem2));
  w.u8(static_cast<std::uint8_t>(c.binary_padding));
  w.u8(1);  // sign(0) = +1
}

inline int read_extent(ByteReader& r, const char* what) {
  const std::size_t at = r.offset();
  const std::uint32_t v = r.u32();
  if (v == 0 || v > (1U << 20)) r.error_at(at, std::string(what) + " " + std::to_string(v) + " out of range");
  return static_cast<int>(v);
}

inline UNetConfig read_config(ByteReader& r) {
  UNetConfig c;
  c.in_channels = read_extent(r, "in_channels");
  c.out_channels = read_extent(r, "out_channels");
  c.height = read_extent(r, "height");
  c.width = read_extent(r, "width");
  for (auto& v : c.encoder) v = read_extent(r, "encoder width");
  c.bottleneck = read_extent(r, "bottleneck width");
  for (auto& v : c.up_transposed) v = read_extent(r, "up_transposed width");
  for (auto& v : c.decoder) v = read_extent(r, "decoder width");
  c.up_kernel = read_extent(r, "up_kernel");
  c.up_stride = read_extent(r, "up_stride");
  std::size_t at = r.offset();
  const std::uint16_t id = r.u16();
  if (id >> kConfigurableLayers) r.error_at(at, "precision map uses reserved high bits");
  c.precision = PrecisionMap::from_id(id);
  at = r.offset();
  const std::uint8_t stem2 = r.u8();
  if (stem2 > 1) r.error_at(at, "unknown stem2 state " + std::to_string(stem2));
  c.stem2 = static_cast<LayerState>(stem2);
  at = r.offset();
  const std::uint8_t pad = r.u8();
  if (pad > 1) r.error_at(at, "unknown padding convention " + std::to_string(pad));
  c.binary_padding = static_cast<BinaryPadding>(pad);
  at = r.offset();
  if (r.u8() != 1) r.error_at(at, "unsupported sign-zero convention (expected sign(0) = +1)");
  return c;
}

inline void write_matrix_words(ByteWriter& w, const BitMatrix& m) {
  for (auto word : m.data()) w.u64(word);
}

inline BitMatrix read_matrix(ByteReader& r, std::size_t rows, std::size_t lanes) {
  BitMatrix m(rows, lanes);
  for (auto& word : m.data()) word = r.u64();
  return m;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const CompiledModel& m) {
  check_graph(m);
  ByteWriter w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  detail::write_config(w, m.config);
  w.u32(static_cast<std::uint32_t>(m.steps.size()));
  for (const auto& s : m.steps) {
    w.str(s.name);
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u32(static_cast<std::uint32_t>(s.inputs.size()));
    for (int in : s.inputs) w.i32(in);
    for (int v : {s.spec.kernel_h, s.spec.kernel_w, s.spec.stride, s.spec.padding, s.spec.c_in, s.spec.c_out}) {
      w.u32(static_cast<std::uint32_t>(v));
    }
    w.u8(static_cast<std::uint8_t>(s.spec.binary_padding));
    if (s.kind == StepKind::FloatConv) {
      w.u32(static_cast<std::uint32_t>(s.real.weights.size()));
      for (double v : s.real.weights) w.f64(v);
      w.u32(static_cast<std::uint32_t>(s.real.bias.size()));
      for (double v : s.real.bias) w.f64(v);
      w.u8(s.real.bn ? 1 : 0);
      if (s.real.bn) {
        const auto& bn = *s.real.bn;
        for (const auto* vec : {&bn.gamma, &bn.beta, &bn.mean, &bn.var}) {
          for (double v : *vec) w.f64(v);
        }
        w.f64(bn.eps);
      }
    } else if (is_bit_conv(s.kind)) {
      const auto& segs = s.weights.in_layout.segments();
      w.u32(static_cast<std::uint32_t>(segs.size()));
      for (int v : segs) w.u32(static_cast<std::uint32_t>(v));
      w.u32(static_cast<std::uint32_t>(s.weights.pos.row_words()));
      detail::write_matrix_words(w, s.weights.pos);
      if (s.weights.neg) detail::write_matrix_words(w, *s.weights.neg);
      for (const auto& t : s.threshold.channels) {
        w.i32(t.t);
        w.u8(t.code());
      }
    }
  }
  return w.take();
}

/// Parses and validates an MBUN image. Parse errors carry byte offsets;
/// structural errors carry the step name.
inline CompiledModel deserialize_model(const std::vector<std::uint8_t>& bytes, const std::string& source = "model") {
  ByteReader r(bytes, source);
  if (r.bytes(4) != std::string(kModelMagic, 4)) r.error_at(0, "bad magic (expected MBUN)");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) r.error_at(4, "unsupported version " + std::to_string(version));
  CompiledModel m;
  m.config = detail::read_config(r);
  std::size_t at = r.offset();
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 4096) r.error_at(at, "step count " + std::to_string(count) + " out of range");

  for (std::uint32_t i = 0; i < count; ++i) {
    Step s;
    s.name = r.str(256);
    at = r.offset();
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(StepKind::Concat)) {
      r.error_at(at, s.name + ": unknown layer kind code " + std::to_string(kind));
    }
    s.kind = static_cast<StepKind>(kind);
    at = r.offset();
    const std::uint32_t n_in = r.u32();
    if (n_in > 2) r.error_at(at, s.name + ": too many inputs");
    for (std::uint32_t k = 0; k < n_in; ++k) s.inputs.push_back(r.i32());
    std::array<int, 6> f{};
    for (auto& v : f) {
      at = r.offset();
      const std::uint32_t x = r.u32();
      if (x > (1U << 20)) r.error_at(at, s.name + ": conv field out of range");
      v = static_cast<int>(x);
    }
    s.spec = ConvSpec{f[0], f[1], f[2], f[3], f[4], f[5], BinaryPadding::MinusOne};
    at = r.offset();
    const std::uint8_t pad = r.u8();
    if (pad > 1) r.error_at(at, s.name + ": unknown padding mode " + std::to_string(pad));
    s.spec.binary_padding = static_cast<BinaryPadding>(pad);

    if (s.kind == StepKind::FloatConv) {
      const std::size_t expect = static_cast<std::size_t>(s.spec.c_out) * s.spec.c_in * s.spec.kernel_h * s.spec.kernel_w;
      at = r.offset();
      const std::uint32_t nw = r.u32();
      if (nw != expect) r.error_at(at, s.name + ": weight count " + std::to_string(nw) + " does not match layer shape");
      if (static_cast<std::size_t>(nw) * 8 > r.remaining()) r.error_at(at, s.name + ": truncated weights");
      s.real.weights.resize(nw);
      for (auto& v : s.real.weights) v = r.f64();
      at = r.offset();
      const std::uint32_t nb = r.u32();
      if (nb != 0 && nb != static_cast<std::uint32_t>(s.spec.c_out)) r.error_at(at, s.name + ": bias count mismatch");
      s.real.bias.resize(nb);
      for (auto& v : s.real.bias) v = r.f64();
      at = r.offset();
      const std::uint8_t has_bn = r.u8();
      if (has_bn > 1) r.error_at(at, s.name + ": bad batchnorm flag");
      if (has_bn) {
        BatchNorm bn;
        const auto c = static_cast<std::size_t>(s.spec.c_out);
        for (auto* vec : {&bn.gamma, &bn.beta, &bn.mean, &bn.var}) {
          vec->resize(c);
          for (auto& v : *vec) v = r.f64();
        }
        bn.eps = r.f64();
        bn.validate(c, s.name);
        s.real.bn = std::move(bn);
      }
    } else if (is_bit_conv(s.kind)) {
      at = r.offset();
      const std::uint32_t n_seg = r.u32();
      if (n_seg == 0 || n_seg > 16) r.error_at(at, s.name + ": segment count out of range");
      std::vector<int> segs;
      for (std::uint32_t k = 0; k < n_seg; ++k) {
        at = r.offset();
        const std::uint32_t v = r.u32();
        if (v == 0 || v > (1U << 16)) r.error_at(at, s.name + ": segment width out of range");
        segs.push_back(static_cast<int>(v));
      }
      ChannelLayout layout(std::move(segs));
      require(layout.channels() == s.spec.c_in, ErrorKind::Shape, s.name + ": channel layout does not match c_in");
      if (is_transposed(s.kind)) s.spec.validate_transposed();
      const std::size_t lanes = static_cast<std::size_t>(s.spec.taps()) * static_cast<std::size_t>(layout.lanes());
      at = r.offset();
      const std::uint32_t row_words = r.u32();
      if (row_words != lanes / kWordBits) r.error_at(at, s.name + ": row word count does not match layout");
      const std::size_t rows = static_cast<std::size_t>(s.spec.c_out);
      const bool masked = s.kind == StepKind::MaskedConv || s.kind == StepKind::MaskedTConv;
      if (rows * row_words * 8 * (masked ? 2 : 1) > r.remaining()) r.error_at(r.offset(), s.name + ": truncated bit-planes");
      s.weights.kernel_h = s.spec.kernel_h;
      s.weights.kernel_w = s.spec.kernel_w;
      s.weights.in_layout = layout;
      s.weights.pos = detail::read_matrix(r, rows, lanes);
      if (masked) s.weights.neg = detail::read_matrix(r, rows, lanes);
      // pad lanes must be clear and masked planes disjoint
      const auto map = layout.lane_map();
      for (std::size_t row = 0; row < rows; ++row) {
        for (std::size_t lane = 0; lane < lanes; ++lane) {
          const bool pad_lane = map[lane % map.size()] < 0;
          const bool p = s.weights.pos.bit(row, lane);
          const bool n = masked && s.weights.neg->bit(row, lane);
          require(!(pad_lane && (p || n)), ErrorKind::Invariant, s.name + ": bit set in a pad lane");
          require(!(p && n), ErrorKind::Invariant, s.name + ": pos and neg planes overlap");
        }
      }
      for (std::size_t c = 0; c < rows; ++c) {
        const std::int32_t t = r.i32();
        at = r.offset();
        const std::uint8_t code = r.u8();
        if (code > 3) r.error_at(at, s.name + ": unknown threshold code " + std::to_string(code));
        s.threshold.channels.push_back(ChannelThreshold::from_code(t, code));
      }
    }
    m.steps.push_back(std::move(s));
  }
  if (!r.at_end()) r.error("trailing bytes after last layer");
  check_graph(m);
  return m;
}

inline void write_model(const std::string& path, const CompiledModel& m) { write_file(path, serialize_model(m)); }

inline CompiledModel read_model(const std::string& path) { return deserialize_model(read_file(path), path); }

}  // namespace mbu
