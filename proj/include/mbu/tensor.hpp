#pragma once

// Plain data types shared by the engine, the oracle, and the file formats.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mbu/error.hpp"

namespace mbu {

/// How a binary-weight convolution treats out-of-bounds input positions.
/// Masked-weight convolutions always treat them as a true zero contribution.
enum class BinaryPadding : std::uint8_t {
  Reject = 0,    // padding > 0 is an unsupported configuration
  MinusOne = 1,  // out-of-bounds activations read as -1 (bit 0)
};

struct ConvSpec {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int c_in = 0;
  int c_out = 0;
  BinaryPadding binary_padding = BinaryPadding::MinusOne;

  int taps() const noexcept { return kernel_h * kernel_w; }
  int out_extent(int in, int kernel) const noexcept { return (in + 2 * padding - kernel) / stride + 1; }

  void validate() const {
    require(kernel_h >= 1 && kernel_w >= 1 && stride >= 1, ErrorKind::Shape, "conv spec: kernel and stride must be >= 1");
    require(padding >= 0, ErrorKind::Shape, "conv spec: negative padding");
    require(c_in >= 0 && c_out >= 0, ErrorKind::Shape, "conv spec: negative channel count");
  }

  /// Transposed convolutions are limited to non-overlapping windows.
  void validate_transposed() const {
    validate();
    require(kernel_h == stride && kernel_w == stride, ErrorKind::Unsupported,
            "transposed conv: kernel must equal stride (got kernel " + std::to_string(kernel_h) + "x" +
                std::to_string(kernel_w) + ", stride " + std::to_string(stride) + ")");
    require(padding == 0, ErrorKind::Unsupported, "transposed conv: padding is not supported");
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// N x H x W x C integer pre-activations.
struct IntTensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<std::int32_t> data;

  IntTensor() = default;
  IntTensor(int n_, int h_, int w_, int c_)
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, 0) {}

  std::size_t index(int b, int y, int x, int ch) const noexcept {
    return ((static_cast<std::size_t>(b) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)) * c +
           static_cast<std::size_t>(ch);
  }
  std::int32_t& at(int b, int y, int x, int ch) noexcept { return data[index(b, y, x, ch)]; }
  std::int32_t at(int b, int y, int x, int ch) const noexcept { return data[index(b, y, x, ch)]; }

  friend bool operator==(const IntTensor&, const IntTensor&) = default;
};

/// N x H x W x C real tensor (images, logits).
struct FloatTensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<double> data;

  FloatTensor() = default;
  FloatTensor(int n_, int h_, int w_, int c_, double fill = 0.0)
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}

  std::size_t index(int b, int y, int x, int ch) const noexcept {
    return ((static_cast<std::size_t>(b) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)) * c +
           static_cast<std::size_t>(ch);
  }
  double& at(int b, int y, int x, int ch) noexcept { return data[index(b, y, x, ch)]; }
  double at(int b, int y, int x, int ch) const noexcept { return data[index(b, y, x, ch)]; }

  friend bool operator==(const FloatTensor&, const FloatTensor&) = default;
};

/// Per-channel batchnorm statistics.
struct BatchNorm {
  std::vector<double> gamma, beta, mean, var;
  double eps = 1e-5;

  std::size_t size() const noexcept { return gamma.size(); }

  void validate(std::size_t channels, const std::string& where) const {
    require(gamma.size() == channels && beta.size() == channels && mean.size() == channels && var.size() == channels,
            ErrorKind::Shape, where + ": batchnorm vectors must have one entry per output channel");
    require(std::isfinite(eps) && eps >= 0.0, ErrorKind::InvalidInput, where + ": eps must be finite and >= 0");
    for (std::size_t i = 0; i < channels; ++i) {
      require(std::isfinite(gamma[i]) && std::isfinite(beta[i]) && std::isfinite(mean[i]) && std::isfinite(var[i]),
              ErrorKind::InvalidInput, where + ": non-finite batchnorm parameter");
      require(var[i] >= 0.0, ErrorKind::InvalidInput, where + ": negative variance in channel " + std::to_string(i));
      require(var[i] + eps > 0.0, ErrorKind::InvalidInput, where + ": var + eps must be positive");
    }
  }

  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

/// sign(batchnorm(pre)) with sign(0) = +1, evaluated in double precision.
inline bool bn_sign(double pre, double gamma, double beta, double mean, double sigma) {
  return gamma * (pre - mean) / sigma + beta >= 0.0;
}

enum class ThresholdDir : std::uint8_t { GE = 0, LT = 1 };

/// One output channel of a fused batchnorm + bias + sign.
struct ChannelThreshold {
  std::int32_t t = 0;
  ThresholdDir dir = ThresholdDir::GE;
  std::optional<bool> constant;

  bool fire(std::int32_t acc) const noexcept {
    if (constant) return *constant;
    return dir == ThresholdDir::GE ? acc >= t : acc < t;
  }

  /// File encoding: 0 GE, 1 LT, 2 constant 0, 3 constant 1.
  std::uint8_t code() const noexcept {
    if (constant) return *constant ? 3 : 2;
    return static_cast<std::uint8_t>(dir);
  }
  static ChannelThreshold from_code(std::int32_t t, std::uint8_t code) {
    ChannelThreshold c;
    c.t = t;
    switch (code) {
      case 0: c.dir = ThresholdDir::GE; break;
      case 1: c.dir = ThresholdDir::LT; break;
      case 2: c.constant = false; break;
      case 3: c.constant = true; break;
      default: fail(ErrorKind::Parse, "threshold: unknown direction code " + std::to_string(code));
    }
    return c;
  }

  friend bool operator==(const ChannelThreshold&, const ChannelThreshold&) = default;
};

struct FusedThreshold {
  std::vector<ChannelThreshold> channels;

  std::size_t size() const noexcept { return channels.size(); }
  friend bool operator==(const FusedThreshold&, const FusedThreshold&) = default;
};

}  // namespace mbu
