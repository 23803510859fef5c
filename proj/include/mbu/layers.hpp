#pragma once

// U-Net layer types lowered onto the bit kernels: im2row convolution,
// parity-split transposed convolution, OR max-pool, block-aligned concat,
// fused batchnorm thresholds, and the full-precision endpoint convolution.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbu/bitcore.hpp"
#include "mbu/error.hpp"
#include "mbu/tensor.hpp"

namespace mbu {

// ---------------------------------------------------------------------------
// Packed convolution weights

/// Per-layer weight planes. One row per output channel; lanes are ordered
/// (ky, kx, input lane) with the input lanes following `in_layout`.
/// `neg` is present only for masked (ternary) layers.
struct ConvWeights {
  int kernel_h = 1;
  int kernel_w = 1;
  ChannelLayout in_layout;
  BitMatrix pos;
  std::optional<BitMatrix> neg;

  bool masked() const noexcept { return neg.has_value(); }
  int c_out() const noexcept { return static_cast<int>(pos.rows()); }
  int taps() const noexcept { return kernel_h * kernel_w; }

  friend bool operator==(const ConvWeights&, const ConvWeights&) = default;
};

/// Packs dense weights [c_out][c_in][kh][kw]. Binary layers accept {-1,+1},
/// masked layers {-1,0,+1}.
inline ConvWeights pack_conv_weights(std::span<const std::int8_t> dense, int c_out, int kernel_h, int kernel_w,
                                     const ChannelLayout& in_layout, bool masked) {
  const int c_in = in_layout.channels();
  require(dense.size() == static_cast<std::size_t>(c_out) * c_in * kernel_h * kernel_w, ErrorKind::Shape,
          "pack_conv_weights: weight count does not match shape");
  const std::size_t in_lanes = static_cast<std::size_t>(in_layout.lanes());
  const std::size_t lanes = static_cast<std::size_t>(kernel_h * kernel_w) * in_lanes;
  ConvWeights w{kernel_h, kernel_w, in_layout, BitMatrix(static_cast<std::size_t>(c_out), lanes), std::nullopt};
  if (masked) w.neg = BitMatrix(static_cast<std::size_t>(c_out), lanes);
  std::vector<int> lane_of(static_cast<std::size_t>(c_in));
  for (int c = 0; c < c_in; ++c) lane_of[static_cast<std::size_t>(c)] = in_layout.lane_of(c);

  std::size_t i = 0;
  for (int o = 0; o < c_out; ++o) {
    for (int c = 0; c < c_in; ++c) {
      for (int ky = 0; ky < kernel_h; ++ky) {
        for (int kx = 0; kx < kernel_w; ++kx, ++i) {
          const std::size_t lane = static_cast<std::size_t>(ky * kernel_w + kx) * in_lanes +
                                   static_cast<std::size_t>(lane_of[static_cast<std::size_t>(c)]);
          const int v = dense[i];
          if (v == 1) {
            w.pos.set(static_cast<std::size_t>(o), lane, true);
          } else if (v == -1) {
            if (masked) {
              w.neg->set(static_cast<std::size_t>(o), lane, true);
            }
          } else if (v == 0 && masked) {
            // zero state: both planes stay 0
          } else {
            fail(ErrorKind::InvalidInput, std::string("pack_conv_weights: value ") + std::to_string(v) +
                                              " not allowed in a " + (masked ? "masked" : "binary") + " layer");
          }
        }
      }
    }
  }
  return w;
}

/// Inverse of pack_conv_weights.
inline std::vector<std::int8_t> unpack_conv_weights(const ConvWeights& w) {
  const int c_in = w.in_layout.channels();
  const std::size_t in_lanes = static_cast<std::size_t>(w.in_layout.lanes());
  std::vector<std::int8_t> out;
  out.reserve(static_cast<std::size_t>(w.c_out()) * c_in * w.taps());
  for (int o = 0; o < w.c_out(); ++o) {
    for (int c = 0; c < c_in; ++c) {
      const std::size_t lane_c = static_cast<std::size_t>(w.in_layout.lane_of(c));
      for (int t = 0; t < w.taps(); ++t) {
        const std::size_t lane = static_cast<std::size_t>(t) * in_lanes + lane_c;
        const bool p = w.pos.bit(static_cast<std::size_t>(o), lane);
        if (w.masked()) {
          out.push_back(static_cast<std::int8_t>(int(p) - int(w.neg->bit(static_cast<std::size_t>(o), lane))));
        } else {
          out.push_back(p ? 1 : -1);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// im2row lowering

struct LoweredInput {
  BitMatrix a;  // one row per output pixel, lanes (ky, kx, input lane)
  int n = 0, h_out = 0, w_out = 0;
  /// Per row: bit t set when kernel tap t fell outside the input.
  std::vector<std::uint64_t> oob_taps;
};

inline LoweredInput lower_conv_to_gemm(const BitTensor& x, const ConvSpec& spec, bool masked_weights) {
  spec.validate();
  require(spec.c_in == x.c(), ErrorKind::Shape,
          "conv: input has " + std::to_string(x.c()) + " channels, spec expects " + std::to_string(spec.c_in));
  require(spec.taps() <= 64, ErrorKind::Unsupported, "conv: kernels with more than 64 taps are not supported");
  if (!masked_weights && spec.padding > 0) {
    require(spec.binary_padding == BinaryPadding::MinusOne, ErrorKind::Unsupported,
            "conv: binary-weight layer cannot represent zero padding");
  }
  const int h_out = spec.out_extent(x.h(), spec.kernel_h);
  const int w_out = spec.out_extent(x.w(), spec.kernel_w);
  require(h_out > 0 && w_out > 0, ErrorKind::Shape, "conv: kernel larger than padded input");

  const std::size_t pw = x.pixel_words();
  const std::size_t rows = static_cast<std::size_t>(x.n()) * h_out * w_out;
  LoweredInput out{BitMatrix(rows, static_cast<std::size_t>(spec.taps()) * pw * kWordBits), x.n(), h_out, w_out,
                   std::vector<std::uint64_t>(rows, 0)};
  std::size_t m = 0;
  for (int b = 0; b < x.n(); ++b) {
    for (int oy = 0; oy < h_out; ++oy) {
      for (int ox = 0; ox < w_out; ++ox, ++m) {
        auto row = out.a.row(m);
        for (int ky = 0; ky < spec.kernel_h; ++ky) {
          const int iy = oy * spec.stride - spec.padding + ky;
          for (int kx = 0; kx < spec.kernel_w; ++kx) {
            const int ix = ox * spec.stride - spec.padding + kx;
            const int t = ky * spec.kernel_w + kx;
            if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) {
              out.oob_taps[m] |= std::uint64_t{1} << t;
              continue;
            }
            auto src = x.pixel(b, iy, ix);
            std::copy(src.begin(), src.end(), row.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * pw));
          }
        }
      }
    }
  }
  return out;
}

namespace detail {

/// Sum of ternary weights per (output channel, tap); used to cancel the -1
/// that an all-zero activation block contributes at out-of-bounds taps.
inline std::vector<std::int32_t> tap_sums(const ConvWeights& w) {
  const std::size_t tap_words = static_cast<std::size_t>(w.in_layout.lanes()) / kWordBits;
  std::vector<std::int32_t> sums(static_cast<std::size_t>(w.c_out()) * w.taps(), 0);
  for (int o = 0; o < w.c_out(); ++o) {
    auto p = w.pos.row(static_cast<std::size_t>(o));
    auto n = w.neg->row(static_cast<std::size_t>(o));
    for (int t = 0; t < w.taps(); ++t) {
      std::int32_t s = 0;
      for (std::size_t i = 0; i < tap_words; ++i) {
        const std::size_t k = static_cast<std::size_t>(t) * tap_words + i;
        s += popcount64(p[k]) - popcount64(n[k]);
      }
      sums[static_cast<std::size_t>(o * w.taps() + t)] = s;
    }
  }
  return sums;
}

inline void check_weights(const BitTensor& x, const ConvWeights& w, const ConvSpec& spec) {
  require(w.kernel_h == spec.kernel_h && w.kernel_w == spec.kernel_w, ErrorKind::Shape,
          "conv: weight kernel does not match layer shape");
  require(w.c_out() == spec.c_out, ErrorKind::Shape, "conv: weight output channels do not match spec");
  require(w.in_layout == x.layout(), ErrorKind::Shape, "conv: weight input layout does not match activation layout");
}

}  // namespace detail

/// Exact integer convolution of bipolar activations with binary or masked
/// weights (output-stationary loop over bit tiles).
inline IntTensor conv_forward(const BitTensor& x, const ConvWeights& w, const ConvSpec& spec, int workers = 1) {
  detail::check_weights(x, w, spec);
  LoweredInput low = lower_conv_to_gemm(x, spec, w.masked());
  const std::int32_t k_true = spec.taps() * spec.c_in;
  std::vector<std::int32_t> acc = bit_gemm(low.a, w.pos, w.neg ? &*w.neg : nullptr, k_true, workers);

  if (w.masked() && spec.padding > 0) {
    const auto sums = detail::tap_sums(w);
    const std::size_t N = static_cast<std::size_t>(spec.c_out);
    for (std::size_t m = 0; m < low.oob_taps.size(); ++m) {
      std::uint64_t mask = low.oob_taps[m];
      while (mask != 0) {
        const int t = std::countr_zero(mask);
        mask &= mask - 1;
        for (std::size_t o = 0; o < N; ++o) acc[m * N + o] += sums[o * static_cast<std::size_t>(w.taps()) + static_cast<std::size_t>(t)];
      }
    }
  }
  IntTensor out(low.n, low.h_out, low.w_out, spec.c_out);
  out.data = std::move(acc);
  return out;
}

/// Non-overlapping transposed convolution (kernel == stride), computed as
/// stride^2 independent 1x1 bit GEMMs, one per output parity.
inline IntTensor transposed_conv_forward(const BitTensor& x, const ConvWeights& w, const ConvSpec& spec,
                                         int workers = 1) {
  spec.validate_transposed();
  detail::check_weights(x, w, spec);
  require(spec.c_in == x.c(), ErrorKind::Shape, "transposed conv: input channel count mismatch");
  const int s = spec.stride;
  const std::size_t pw = x.pixel_words();
  const std::size_t M = x.pixels();
  const std::size_t N = static_cast<std::size_t>(spec.c_out);

  BitMatrix a(M, pw * kWordBits);
  std::copy(x.data().begin(), x.data().end(), a.data().begin());

  IntTensor out(x.n(), x.h() * s, x.w() * s, spec.c_out);
  for (int dy = 0; dy < s; ++dy) {
    for (int dx = 0; dx < s; ++dx) {
      const std::size_t t = static_cast<std::size_t>(dy * s + dx);
      BitMatrix bp(N, pw * kWordBits);
      std::optional<BitMatrix> bn;
      if (w.masked()) bn = BitMatrix(N, pw * kWordBits);
      for (std::size_t o = 0; o < N; ++o) {
        auto src = w.pos.row(o).subspan(t * pw, pw);
        std::copy(src.begin(), src.end(), bp.row(o).begin());
        if (bn) {
          auto srcn = w.neg->row(o).subspan(t * pw, pw);
          std::copy(srcn.begin(), srcn.end(), bn->row(o).begin());
        }
      }
      const auto acc = bit_gemm(a, bp, bn ? &*bn : nullptr, spec.c_in, workers);
      std::size_t m = 0;
      for (int b = 0; b < x.n(); ++b) {
        for (int p = 0; p < x.h(); ++p) {
          for (int q = 0; q < x.w(); ++q, ++m) {
            std::copy_n(acc.begin() + static_cast<std::ptrdiff_t>(m * N), N,
                        out.data.begin() + static_cast<std::ptrdiff_t>(out.index(b, p * s + dy, q * s + dx, 0)));
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholds

/// Folds bias, batchnorm, and sign(.) into one integer comparison per
/// channel. The result agrees with bn_sign(acc + bias, ...) evaluated in
/// double precision for every int32 accumulator.
inline FusedThreshold fuse_bn_sign(const BatchNorm& bn, std::span<const double> bias) {
  const std::size_t C = bn.size();
  bn.validate(C, "fuse_bn_sign");
  require(bias.empty() || bias.size() == C, ErrorKind::Shape, "fuse_bn_sign: bias size mismatch");
  for (double b : bias) require(std::isfinite(b), ErrorKind::InvalidInput, "fuse_bn_sign: non-finite bias");

  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  FusedThreshold out;
  out.channels.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double gamma = bn.gamma[c];
    const double beta = bn.beta[c];
    const double mean = bn.mean[c];
    const double b = bias.empty() ? 0.0 : bias[c];
    const double sigma = std::sqrt(bn.var[c] + bn.eps);
    auto& th = out.channels[c];
    if (gamma == 0.0) {
      th.constant = beta >= 0.0;
      continue;
    }
    auto fires = [&](std::int64_t acc) { return bn_sign(static_cast<double>(acc) + b, gamma, beta, mean, sigma); };
    const double tau = mean - b - beta * sigma / gamma;
    const double tau_clamped = std::clamp(tau, static_cast<double>(lo), static_cast<double>(hi));
    if (gamma > 0.0) {
      // fires(acc) is non-decreasing in acc; find the first firing value.
      std::int64_t t = static_cast<std::int64_t>(std::ceil(tau_clamped));
      while (t > lo && fires(t - 1)) --t;
      while (t <= hi && !fires(t)) ++t;
      if (t > hi) {
        th.constant = false;
      } else if (t == lo && fires(lo)) {
        th.constant = true;
      } else {
        th.t = static_cast<std::int32_t>(t);
        th.dir = ThresholdDir::GE;
      }
    } else {
      // fires(acc) is non-increasing; find the first non-firing value.
      std::int64_t t = static_cast<std::int64_t>(std::floor(tau_clamped)) + 1;
      while (t > lo && !fires(t - 1)) --t;
      while (t <= hi && fires(t)) ++t;
      if (t > hi) {
        th.constant = true;
      } else if (t == lo && !fires(lo)) {
        th.constant = false;
      } else {
        th.t = static_cast<std::int32_t>(t);
        th.dir = ThresholdDir::LT;
      }
    }
  }
  return out;
}

inline BitTensor apply_threshold(const IntTensor& acc, const FusedThreshold& t) {
  require(t.size() == static_cast<std::size_t>(acc.c), ErrorKind::Shape,
          "apply_threshold: " + std::to_string(t.size()) + " thresholds for " + std::to_string(acc.c) + " channels");
  BitTensor out(acc.n, acc.h, acc.w, acc.c);
  const std::size_t C = static_cast<std::size_t>(acc.c);
  const std::size_t pw = out.pixel_words();
  auto words = out.data();
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      if (t.channels[c].fire(acc.data[p * C + c])) words[p * pw + c / kWordBits] |= std::uint64_t{1} << (c % kWordBits);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling and concatenation

/// 2x2 stride-2 max-pool; max over {-1,+1} is OR on the bit encoding.
inline BitTensor maxpool2(const BitTensor& x) {
  require(x.h() % 2 == 0 && x.w() % 2 == 0, ErrorKind::Shape,
          "maxpool2: extents " + std::to_string(x.h()) + "x" + std::to_string(x.w()) + " are not even");
  BitTensor out(x.n(), x.h() / 2, x.w() / 2, x.layout());
  for (int b = 0; b < x.n(); ++b) {
    for (int y = 0; y < out.h(); ++y) {
      for (int xx = 0; xx < out.w(); ++xx) {
        auto dst = out.pixel(b, y, xx);
        auto p00 = x.pixel(b, 2 * y, 2 * xx);
        auto p01 = x.pixel(b, 2 * y, 2 * xx + 1);
        auto p10 = x.pixel(b, 2 * y + 1, 2 * xx);
        auto p11 = x.pixel(b, 2 * y + 1, 2 * xx + 1);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = p00[i] | p01[i] | p10[i] | p11[i];
      }
    }
  }
  return out;
}

/// Channel concatenation; b starts on a fresh 128-lane block.
inline BitTensor concat_channels(const BitTensor& a, const BitTensor& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorKind::Shape,
          "concat: spatial extents differ");
  BitTensor out(a.n(), a.h(), a.w(), a.layout().concat(b.layout()));
  for (int n = 0; n < a.n(); ++n) {
    for (int y = 0; y < a.h(); ++y) {
      for (int x = 0; x < a.w(); ++x) {
        auto dst = out.pixel(n, y, x);
        auto pa = a.pixel(n, y, x);
        auto pb = b.pixel(n, y, x);
        std::copy(pa.begin(), pa.end(), dst.begin());
        std::copy(pb.begin(), pb.end(), dst.begin() + static_cast<std::ptrdiff_t>(pa.size()));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full-precision endpoints

/// Float convolution parameters; weights [c_out][c_in][kh][kw].
struct FloatConvParams {
  std::vector<double> weights;
  std::vector<double> bias;
  std::optional<BatchNorm> bn;  // present when the layer ends in bn + sign

  friend bool operator==(const FloatConvParams&, const FloatConvParams&) = default;
};

/// Direct double-precision convolution with zero padding. Accumulation order
/// is (ky, kx, ci) followed by the bias.
inline FloatTensor float_conv(const FloatTensor& x, std::span<const double> weights, std::span<const double> bias,
                              const ConvSpec& spec) {
  spec.validate();
  require(x.c == spec.c_in, ErrorKind::Shape, "float_conv: input channel count mismatch");
  require(weights.size() == static_cast<std::size_t>(spec.c_out) * spec.c_in * spec.taps(), ErrorKind::Shape,
          "float_conv: weight count mismatch");
  require(bias.empty() || bias.size() == static_cast<std::size_t>(spec.c_out), ErrorKind::Shape,
          "float_conv: bias count mismatch");
  const int h_out = spec.out_extent(x.h, spec.kernel_h);
  const int w_out = spec.out_extent(x.w, spec.kernel_w);
  require(h_out > 0 && w_out > 0, ErrorKind::Shape, "float_conv: kernel larger than padded input");
  FloatTensor out(x.n, h_out, w_out, spec.c_out);
  const int kh = spec.kernel_h;
  const int kw = spec.kernel_w;
  for (int b = 0; b < x.n; ++b) {
    for (int oy = 0; oy < h_out; ++oy) {
      for (int ox = 0; ox < w_out; ++ox) {
        for (int o = 0; o < spec.c_out; ++o) {
          double s = 0.0;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * spec.stride - spec.padding + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * spec.stride - spec.padding + kx;
              if (ix < 0 || ix >= x.w) continue;
              const double* px = &x.data[x.index(b, iy, ix, 0)];
              const std::size_t wbase = static_cast<std::size_t>(o) * spec.c_in * kh * kw +
                                        static_cast<std::size_t>(ky * kw + kx);
              for (int c = 0; c < spec.c_in; ++c) {
                s += px[c] * weights[wbase + static_cast<std::size_t>(c) * kh * kw];
              }
            }
          }
          if (!bias.empty()) s += bias[static_cast<std::size_t>(o)];
          out.at(b, oy, ox, o) = s;
        }
      }
    }
  }
  return out;
}

/// bn + sign over a float pre-activation tensor.
inline BitTensor float_bn_sign(const FloatTensor& pre, const BatchNorm& bn) {
  bn.validate(static_cast<std::size_t>(pre.c), "float_bn_sign");
  BitTensor out(pre.n, pre.h, pre.w, pre.c);
  std::vector<double> sigma(static_cast<std::size_t>(pre.c));
  for (std::size_t c = 0; c < sigma.size(); ++c) sigma[c] = std::sqrt(bn.var[c] + bn.eps);
  auto words = out.data();
  const std::size_t pw = out.pixel_words();
  const std::size_t C = static_cast<std::size_t>(pre.c);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      if (bn_sign(pre.data[p * C + c], bn.gamma[c], bn.beta[c], bn.mean[c], sigma[c])) {
        words[p * pw + c / kWordBits] |= std::uint64_t{1} << (c % kWordBits);
      }
    }
  }
  return out;
}

/// Bipolar activations as a real tensor over logical channels.
inline FloatTensor bits_to_float(const BitTensor& x) {
  FloatTensor out(x.n(), x.h(), x.w(), x.c());
  const auto v = unpack_tensor(x);
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = v[i];
  return out;
}

}  // namespace mbu
