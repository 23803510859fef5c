#pragma once

// Bit-packing primitives and XOR/popcount kernels.
//
// Lane order is fixed everywhere: LSB-first inside a 64-bit word, words in
// ascending order inside a 128-lane block, blocks in ascending channel order.
// Bit 1 encodes +1 and bit 0 encodes -1. Lanes past the logical length are
// pad lanes and are always 0, which makes the XOR form of every dot product
// exact without pad correction.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mbu/error.hpp"
#include "mbu/parallel.hpp"

namespace mbu {

inline constexpr int kWordBits = 64;
inline constexpr int kBlockBits = 128;
inline constexpr int kWordsPerBlock = kBlockBits / kWordBits;
inline constexpr int kTile = 8;

constexpr std::size_t words_for(std::size_t n_bits) { return (n_bits + kWordBits - 1) / kWordBits; }
constexpr std::size_t blocks_for(std::size_t n_bits) { return (n_bits + kBlockBits - 1) / kBlockBits; }

/// SWAR popcount; used where no hardware instruction is available and as a
/// cross-check of the intrinsic path.
constexpr int popcount_portable(std::uint64_t x) {
  x = x - ((x >> 1) & 0x5555555555555555ULL);
  x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
  x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0FULL;
  return static_cast<int>((x * 0x0101010101010101ULL) >> 56);
}

inline int popcount64(std::uint64_t x) { return std::popcount(x); }

// ---------------------------------------------------------------------------
// BitPlane

class BitPlane {
 public:
  BitPlane() = default;
  explicit BitPlane(std::size_t n_bits) : n_bits_(n_bits), words_(words_for(n_bits), 0) {}

  /// Adopts raw words; rejects a word count that does not match n_bits or
  /// set bits in pad lanes.
  static BitPlane from_words(std::size_t n_bits, std::vector<std::uint64_t> words) {
    require(words.size() == words_for(n_bits), ErrorKind::Layout,
            "bit plane: expected " + std::to_string(words_for(n_bits)) + " words for " +
                std::to_string(n_bits) + " lanes, got " + std::to_string(words.size()));
    BitPlane p;
    p.n_bits_ = n_bits;
    p.words_ = std::move(words);
    require(p.pads_clear(), ErrorKind::Invariant, "bit plane: pad lanes must be zero");
    return p;
  }

  std::size_t size() const noexcept { return n_bits_; }
  std::size_t word_count() const noexcept { return words_.size(); }
  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }

  bool bit(std::size_t i) const noexcept { return (words_[i / kWordBits] >> (i % kWordBits)) & 1U; }
  void set(std::size_t i, bool v) noexcept {
    const std::uint64_t m = std::uint64_t{1} << (i % kWordBits);
    if (v) {
      words_[i / kWordBits] |= m;
    } else {
      words_[i / kWordBits] &= ~m;
    }
  }

  bool pads_clear() const noexcept {
    const std::size_t rem = n_bits_ % kWordBits;
    if (rem == 0 || words_.empty()) return true;
    return (words_.back() >> rem) == 0;
  }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(popcount64(w));
    return c;
  }

  friend bool operator==(const BitPlane&, const BitPlane&) = default;

 private:
  std::size_t n_bits_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Two parallel planes encoding a ternary weight as pos - neg.
struct MaskedWeightPlanes {
  BitPlane pos;
  BitPlane neg;

  std::size_t size() const noexcept { return pos.size(); }

  void validate() const {
    require(pos.size() == neg.size(), ErrorKind::Layout, "masked planes: pos/neg lane counts differ");
    auto p = pos.words();
    auto n = neg.words();
    for (std::size_t i = 0; i < p.size(); ++i) {
      require((p[i] & n[i]) == 0, ErrorKind::Invariant,
              "masked planes: pos and neg overlap in word " + std::to_string(i));
    }
    require(pos.pads_clear() && neg.pads_clear(), ErrorKind::Invariant, "masked planes: pad lanes must be zero");
  }

  friend bool operator==(const MaskedWeightPlanes&, const MaskedWeightPlanes&) = default;
};

template <typename T>
BitPlane pack_bipolar(std::span<const T> values) {
  BitPlane p(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto v = values[i];
    if (v == T(1)) {
      p.set(i, true);
    } else if (v != T(-1)) {
      fail(ErrorKind::InvalidInput, "pack_bipolar: value at lane " + std::to_string(i) + " is not -1 or +1");
    }
  }
  return p;
}

inline BitPlane pack_bipolar(const std::vector<int>& values) { return pack_bipolar(std::span<const int>(values)); }

inline std::vector<int> unpack_bipolar(const BitPlane& p) {
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p.bit(i) ? 1 : -1;
  return out;
}

template <typename T>
MaskedWeightPlanes pack_ternary(std::span<const T> values) {
  MaskedWeightPlanes w{BitPlane(values.size()), BitPlane(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto v = values[i];
    if (v == T(1)) {
      w.pos.set(i, true);
    } else if (v == T(-1)) {
      w.neg.set(i, true);
    } else if (v != T(0)) {
      fail(ErrorKind::InvalidInput, "pack_ternary: value at lane " + std::to_string(i) + " is not in {-1,0,+1}");
    }
  }
  return w;
}

inline MaskedWeightPlanes pack_ternary(const std::vector<int>& values) {
  return pack_ternary(std::span<const int>(values));
}

inline std::vector<int> unpack_ternary(const MaskedWeightPlanes& w) {
  std::vector<int> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = int(w.pos.bit(i)) - int(w.neg.bit(i));
  return out;
}

namespace detail {

inline void check_true_lanes(const BitPlane& p, std::size_t n, const char* what) {
  require(n <= p.size(), ErrorKind::Layout, std::string(what) + ": lane count exceeds plane size");
  for (std::size_t i = n; i < p.size(); ++i) {
    require(!p.bit(i), ErrorKind::Invariant, std::string(what) + ": lane beyond n must be zero");
  }
}

}  // namespace detail

/// Bipolar dot product over the first n lanes, computed as n - 2*popc(a XOR b).
/// Lanes in [n, size) are treated as pad lanes and must be zero.
inline std::int64_t dot_binary(const BitPlane& a, const BitPlane& b, std::size_t n) {
  require(a.size() == b.size(), ErrorKind::Layout, "dot_binary: operand lane counts differ");
  detail::check_true_lanes(a, n, "dot_binary");
  detail::check_true_lanes(b, n, "dot_binary");
  std::int64_t diff = 0;
  auto aw = a.words();
  auto bw = b.words();
  for (std::size_t i = 0; i < aw.size(); ++i) diff += popcount64(aw[i] ^ bw[i]);
  return static_cast<std::int64_t>(n) - 2 * diff;
}

/// Bipolar x ternary dot product: popc(a XOR neg) - popc(a XOR pos).
inline std::int64_t dot_masked(const BitPlane& a, const MaskedWeightPlanes& w, std::size_t n) {
  require(a.size() == w.size(), ErrorKind::Layout, "dot_masked: operand lane counts differ");
  w.validate();
  detail::check_true_lanes(a, n, "dot_masked");
  detail::check_true_lanes(w.pos, n, "dot_masked");
  detail::check_true_lanes(w.neg, n, "dot_masked");
  std::int64_t acc = 0;
  auto aw = a.words();
  auto pw = w.pos.words();
  auto nw = w.neg.words();
  for (std::size_t i = 0; i < aw.size(); ++i) acc += popcount64(aw[i] ^ nw[i]) - popcount64(aw[i] ^ pw[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Tile kernel

using AccumulatorTile = std::array<std::array<std::int32_t, kTile>, kTile>;

/// 8 rows (A, row-major) or 8 columns (B, column-major) of one 128-lane block.
using BitFragment = std::array<std::array<std::uint64_t, kWordsPerBlock>, kTile>;

/// acc[m][k] += popc(A_row_m XOR B_col_k): one 8x8x128 XOR-popcount MMA.
inline void bit_tile_mma(AccumulatorTile& acc, const BitFragment& a, const BitFragment& b) noexcept {
  for (int m = 0; m < kTile; ++m) {
    const std::uint64_t a0 = a[m][0];
    const std::uint64_t a1 = a[m][1];
    for (int k = 0; k < kTile; ++k) {
      acc[m][k] += popcount64(a0 ^ b[k][0]) + popcount64(a1 ^ b[k][1]);
    }
  }
}

// ---------------------------------------------------------------------------
// BitMatrix and GEMM

/// rows x lanes bit matrix, lanes a multiple of 128, row-major words.
/// Weight operands are stored one output column per row (column-major B).
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t lanes) : rows_(rows), lanes_(lanes), words_(rows * words_for(lanes), 0) {
    require(lanes % kBlockBits == 0, ErrorKind::Layout,
            "bit matrix: lane count " + std::to_string(lanes) + " is not a multiple of 128");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t lanes() const noexcept { return lanes_; }
  std::size_t row_words() const noexcept { return lanes_ / kWordBits; }

  std::span<std::uint64_t> row(std::size_t r) noexcept { return {words_.data() + r * row_words(), row_words()}; }
  std::span<const std::uint64_t> row(std::size_t r) const noexcept {
    return {words_.data() + r * row_words(), row_words()};
  }
  std::span<const std::uint64_t> data() const noexcept { return words_; }
  std::span<std::uint64_t> data() noexcept { return words_; }

  bool bit(std::size_t r, std::size_t lane) const noexcept {
    return (row(r)[lane / kWordBits] >> (lane % kWordBits)) & 1U;
  }
  void set(std::size_t r, std::size_t lane, bool v) noexcept {
    auto& w = row(r)[lane / kWordBits];
    const std::uint64_t m = std::uint64_t{1} << (lane % kWordBits);
    w = v ? (w | m) : (w & ~m);
  }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t lanes_ = 0;
  std::vector<std::uint64_t> words_;
};

namespace detail {

inline void load_fragment(BitFragment& f, const BitMatrix& m, std::size_t row0, std::size_t block) {
  const std::size_t w0 = block * kWordsPerBlock;
  for (int r = 0; r < kTile; ++r) {
    const std::size_t row = row0 + static_cast<std::size_t>(r);
    if (row < m.rows()) {
      auto words = m.row(row);
      f[r][0] = words[w0];
      f[r][1] = words[w0 + 1];
    } else {
      f[r] = {0, 0};
    }
  }
}

}  // namespace detail

/// M x N integer product of bit operands.
///
/// Masked mode (b_neg != nullptr): out = popc(a XOR neg) - popc(a XOR pos),
/// the bipolar x ternary product. Binary mode: out = k_true - 2*popc(a XOR b).
/// Output is row-major M x N.
inline std::vector<std::int32_t> bit_gemm(const BitMatrix& a, const BitMatrix& b_pos, const BitMatrix* b_neg,
                                          std::int32_t k_true, int workers = 1) {
  require(a.lanes() % kBlockBits == 0, ErrorKind::Layout, "bit_gemm: K is not block aligned");
  require(a.lanes() == b_pos.lanes(), ErrorKind::Layout, "bit_gemm: A and B_pos have different K");
  if (b_neg != nullptr) {
    require(b_neg->lanes() == b_pos.lanes() && b_neg->rows() == b_pos.rows(), ErrorKind::Layout,
            "bit_gemm: B_neg layout differs from B_pos");
  }
  const std::size_t M = a.rows();
  const std::size_t N = b_pos.rows();
  const std::size_t blocks = a.lanes() / kBlockBits;
  std::vector<std::int32_t> out(M * N, 0);
  const std::size_t m_tiles = (M + kTile - 1) / kTile;
  const std::size_t n_tiles = (N + kTile - 1) / kTile;

  parallel_for(m_tiles, workers, [&](std::size_t mt) {
    BitFragment fa;
    BitFragment fp;
    BitFragment fn;
    for (std::size_t nt = 0; nt < n_tiles; ++nt) {
      AccumulatorTile acc_pos{};
      AccumulatorTile acc_neg{};
      for (std::size_t kb = 0; kb < blocks; ++kb) {
        detail::load_fragment(fa, a, mt * kTile, kb);
        detail::load_fragment(fp, b_pos, nt * kTile, kb);
        bit_tile_mma(acc_pos, fa, fp);
        if (b_neg != nullptr) {
          detail::load_fragment(fn, *b_neg, nt * kTile, kb);
          bit_tile_mma(acc_neg, fa, fn);
        }
      }
      for (int i = 0; i < kTile; ++i) {
        const std::size_t m = mt * kTile + static_cast<std::size_t>(i);
        if (m >= M) break;
        for (int j = 0; j < kTile; ++j) {
          const std::size_t n = nt * kTile + static_cast<std::size_t>(j);
          if (n >= N) break;
          out[m * N + n] = b_neg != nullptr ? acc_neg[i][j] - acc_pos[i][j] : k_true - 2 * acc_pos[i][j];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Channel layout and BitTensor

/// Logical channels grouped into segments; each segment starts on a fresh
/// 128-lane block. A plain tensor has one segment; concatenation appends.
class ChannelLayout {
 public:
  ChannelLayout() = default;
  explicit ChannelLayout(std::vector<int> segments) {
    for (int s : segments) {
      require(s >= 0, ErrorKind::Shape, "channel layout: negative segment");
      if (s > 0) segments_.push_back(s);
    }
  }
  static ChannelLayout dense(int channels) { return ChannelLayout({channels}); }

  const std::vector<int>& segments() const noexcept { return segments_; }
  int channels() const noexcept { return std::accumulate(segments_.begin(), segments_.end(), 0); }
  int blocks() const noexcept {
    int b = 0;
    for (int s : segments_) b += static_cast<int>(blocks_for(static_cast<std::size_t>(s)));
    return b;
  }
  int lanes() const noexcept { return blocks() * kBlockBits; }

  /// Lane index of logical channel c.
  int lane_of(int c) const {
    int lane0 = 0;
    for (int s : segments_) {
      if (c < s) return lane0 + c;
      c -= s;
      lane0 += static_cast<int>(blocks_for(static_cast<std::size_t>(s))) * kBlockBits;
    }
    fail(ErrorKind::Shape, "channel layout: channel index out of range");
  }

  /// Lane -> logical channel map, -1 for pad/gap lanes.
  std::vector<int> lane_map() const {
    std::vector<int> m(static_cast<std::size_t>(lanes()), -1);
    int lane0 = 0;
    int c0 = 0;
    for (int s : segments_) {
      for (int i = 0; i < s; ++i) m[static_cast<std::size_t>(lane0 + i)] = c0 + i;
      lane0 += static_cast<int>(blocks_for(static_cast<std::size_t>(s))) * kBlockBits;
      c0 += s;
    }
    return m;
  }

  ChannelLayout concat(const ChannelLayout& other) const {
    std::vector<int> s = segments_;
    s.insert(s.end(), other.segments_.begin(), other.segments_.end());
    return ChannelLayout(std::move(s));
  }

  friend bool operator==(const ChannelLayout&, const ChannelLayout&) = default;

 private:
  std::vector<int> segments_;
};

/// N x H x W x C bipolar activations, channels bit-packed per pixel.
class BitTensor {
 public:
  BitTensor() = default;
  BitTensor(int n, int h, int w, ChannelLayout layout)
      : n_(n), h_(h), w_(w), layout_(std::move(layout)),
        data_(static_cast<std::size_t>(n) * h * w * pixel_words(), 0) {
    require(n >= 0 && h >= 0 && w >= 0, ErrorKind::Shape, "bit tensor: negative extent");
  }
  BitTensor(int n, int h, int w, int c) : BitTensor(n, h, w, ChannelLayout::dense(c)) {}

  int n() const noexcept { return n_; }
  int h() const noexcept { return h_; }
  int w() const noexcept { return w_; }
  int c() const noexcept { return layout_.channels(); }
  const ChannelLayout& layout() const noexcept { return layout_; }
  int blocks_per_pixel() const noexcept { return layout_.blocks(); }
  std::size_t pixel_words() const noexcept { return static_cast<std::size_t>(layout_.blocks()) * kWordsPerBlock; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(n_) * h_ * w_; }

  std::size_t pixel_index(int n, int y, int x) const noexcept {
    return (static_cast<std::size_t>(n) * h_ + static_cast<std::size_t>(y)) * w_ + static_cast<std::size_t>(x);
  }
  std::span<std::uint64_t> pixel(int n, int y, int x) noexcept {
    return {data_.data() + pixel_index(n, y, x) * pixel_words(), pixel_words()};
  }
  std::span<const std::uint64_t> pixel(int n, int y, int x) const noexcept {
    return {data_.data() + pixel_index(n, y, x) * pixel_words(), pixel_words()};
  }
  std::span<const std::uint64_t> data() const noexcept { return data_; }
  std::span<std::uint64_t> data() noexcept { return data_; }

  bool lane(int n, int y, int x, int lane) const noexcept {
    return (pixel(n, y, x)[static_cast<std::size_t>(lane / kWordBits)] >> (lane % kWordBits)) & 1U;
  }
  /// Bipolar value of logical channel c.
  int value(int n, int y, int x, int c) const { return lane(n, y, x, layout_.lane_of(c)) ? 1 : -1; }
  void set_lane(int n, int y, int x, int lane, bool v) noexcept {
    auto& w = pixel(n, y, x)[static_cast<std::size_t>(lane / kWordBits)];
    const std::uint64_t m = std::uint64_t{1} << (lane % kWordBits);
    w = v ? (w | m) : (w & ~m);
  }

  /// True when every lane that is not a logical channel is zero.
  bool pads_clear() const {
    const auto map = layout_.lane_map();
    std::vector<std::uint64_t> valid(pixel_words(), 0);
    for (std::size_t l = 0; l < map.size(); ++l) {
      if (map[l] >= 0) valid[l / kWordBits] |= std::uint64_t{1} << (l % kWordBits);
    }
    for (std::size_t p = 0; p < pixels(); ++p) {
      for (std::size_t i = 0; i < valid.size(); ++i) {
        if (data_[p * valid.size() + i] & ~valid[i]) return false;
      }
    }
    return true;
  }

  friend bool operator==(const BitTensor&, const BitTensor&) = default;

 private:
  int n_ = 0, h_ = 0, w_ = 0;
  ChannelLayout layout_;
  std::vector<std::uint64_t> data_;
};

/// Packs a dense NHWC tensor of {-1,+1} values.
template <typename T>
BitTensor pack_tensor(std::span<const T> values, int n, int h, int w, const ChannelLayout& layout) {
  const int c = layout.channels();
  require(values.size() == static_cast<std::size_t>(n) * h * w * c, ErrorKind::Shape,
          "pack_tensor: value count does not match extents");
  BitTensor t(n, h, w, layout);
  const auto map = layout.lane_map();
  std::vector<int> lane_of(static_cast<std::size_t>(c));
  for (std::size_t l = 0; l < map.size(); ++l) {
    if (map[l] >= 0) lane_of[static_cast<std::size_t>(map[l])] = static_cast<int>(l);
  }
  std::size_t i = 0;
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch, ++i) {
          const T v = values[i];
          if (v == T(1)) {
            t.set_lane(b, y, x, lane_of[static_cast<std::size_t>(ch)], true);
          } else if (v != T(-1)) {
            fail(ErrorKind::InvalidInput, "pack_tensor: value is not -1 or +1");
          }
        }
      }
    }
  }
  return t;
}

template <typename T>
BitTensor pack_tensor(std::span<const T> values, int n, int h, int w, int c) {
  return pack_tensor(values, n, h, w, ChannelLayout::dense(c));
}

/// Dense NHWC {-1,+1} values over logical channels.
inline std::vector<std::int8_t> unpack_tensor(const BitTensor& t) {
  const auto map = t.layout().lane_map();
  std::vector<int> lanes;
  for (std::size_t l = 0; l < map.size(); ++l) {
    if (map[l] >= 0) lanes.push_back(static_cast<int>(l));
  }
  std::vector<std::int8_t> out;
  out.reserve(t.pixels() * lanes.size());
  for (int b = 0; b < t.n(); ++b) {
    for (int y = 0; y < t.h(); ++y) {
      for (int x = 0; x < t.w(); ++x) {
        for (int l : lanes) out.push_back(t.lane(b, y, x, l) ? 1 : -1);
      }
    }
  }
  return out;
}

}  // namespace mbu
