#pragma once

// Naive dense reference implementations. Nothing here calls into the bit
// kernels or the layer lowering: tensors are plain int32 arrays and every
// layer is written from its sliding-window definition.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbu/error.hpp"
#include "mbu/quantizer.hpp"
#include "mbu/tensor.hpp"
#include "mbu/unet_config.hpp"

namespace mbu::oracle {

/// NHWC integer tensor: activations in {-1,+1}, weights in {-1,0,+1}, or
/// accumulators.
struct DenseTensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<std::int32_t> v;

  DenseTensor() = default;
  DenseTensor(int n_, int h_, int w_, int c_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), c(c_), v(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}

  std::int32_t& at(int b, int y, int x, int ch) {
    return v[((static_cast<std::size_t>(b) * h + y) * w + x) * c + ch];
  }
  std::int32_t at(int b, int y, int x, int ch) const {
    return v[((static_cast<std::size_t>(b) * h + y) * w + x) * c + ch];
  }
  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;
};

enum class OutOfBounds { Zero, MinusOne };

inline void check_bipolar(const DenseTensor& x, const char* what) {
  for (auto e : x.v) require(e == 1 || e == -1, ErrorKind::InvalidInput, std::string(what) + ": activation outside {-1,+1}");
}

inline void check_ternary(std::span<const std::int8_t> w, const char* what) {
  for (auto e : w) require(e >= -1 && e <= 1, ErrorKind::InvalidInput, std::string(what) + ": weight outside {-1,0,+1}");
}

/// Direct convolution, weights [c_out][c_in][kh][kw].
inline DenseTensor ref_conv(const DenseTensor& x, std::span<const std::int8_t> w, int c_out, int kh, int kw,
                            int stride, int pad, OutOfBounds oob) {
  check_bipolar(x, "ref_conv");
  check_ternary(w, "ref_conv");
  require(w.size() == static_cast<std::size_t>(c_out) * x.c * kh * kw, ErrorKind::Shape, "ref_conv: weight size");
  const int ho = (x.h + 2 * pad - kh) / stride + 1;
  const int wo = (x.w + 2 * pad - kw) / stride + 1;
  DenseTensor out(x.n, ho, wo, c_out);
  for (int b = 0; b < x.n; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        for (int o = 0; o < c_out; ++o) {
          std::int32_t s = 0;
          for (int ci = 0; ci < x.c; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                std::int32_t a = 0;
                if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) {
                  a = x.at(b, iy, ix, ci);
                } else if (oob == OutOfBounds::MinusOne) {
                  a = -1;
                }
                s += a * w[((static_cast<std::size_t>(o) * x.c + ci) * kh + ky) * kw + kx];
              }
            }
          }
          out.at(b, oy, ox, o) = s;
        }
      }
    }
  }
  return out;
}

/// Transposed convolution by scatter-accumulate; weights [c_out][c_in][k][k].
inline DenseTensor ref_tconv(const DenseTensor& x, std::span<const std::int8_t> w, int c_out, int k, int stride) {
  check_bipolar(x, "ref_tconv");
  check_ternary(w, "ref_tconv");
  require(w.size() == static_cast<std::size_t>(c_out) * x.c * k * k, ErrorKind::Shape, "ref_tconv: weight size");
  DenseTensor out(x.n, (x.h - 1) * stride + k, (x.w - 1) * stride + k, c_out);
  for (int b = 0; b < x.n; ++b) {
    for (int p = 0; p < x.h; ++p) {
      for (int q = 0; q < x.w; ++q) {
        for (int ci = 0; ci < x.c; ++ci) {
          const std::int32_t a = x.at(b, p, q, ci);
          for (int o = 0; o < c_out; ++o) {
            for (int dy = 0; dy < k; ++dy) {
              for (int dx = 0; dx < k; ++dx) {
                out.at(b, p * stride + dy, q * stride + dx, o) +=
                    a * w[((static_cast<std::size_t>(o) * x.c + ci) * k + dy) * k + dx];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline DenseTensor ref_pool(const DenseTensor& x) {
  check_bipolar(x, "ref_pool");
  DenseTensor out(x.n, x.h / 2, x.w / 2, x.c);
  for (int b = 0; b < x.n; ++b) {
    for (int y = 0; y < out.h; ++y) {
      for (int xx = 0; xx < out.w; ++xx) {
        for (int ch = 0; ch < x.c; ++ch) {
          std::int32_t m = x.at(b, 2 * y, 2 * xx, ch);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.at(b, 2 * y + dy, 2 * xx + dx, ch));
          }
          out.at(b, y, xx, ch) = m;
        }
      }
    }
  }
  return out;
}

/// Integer comparison per channel, mapped to {-1,+1}.
inline DenseTensor ref_threshold(const DenseTensor& acc, const FusedThreshold& t) {
  require(t.channels.size() == static_cast<std::size_t>(acc.c), ErrorKind::Shape, "ref_threshold: channel count");
  DenseTensor out(acc.n, acc.h, acc.w, acc.c);
  for (std::size_t i = 0; i < acc.v.size(); ++i) {
    const auto& th = t.channels[i % static_cast<std::size_t>(acc.c)];
    bool on = false;
    if (th.constant.has_value()) {
      on = *th.constant;
    } else if (th.dir == ThresholdDir::GE) {
      on = acc.v[i] >= th.t;
    } else {
      on = acc.v[i] <= th.t - 1;
    }
    out.v[i] = on ? 1 : -1;
  }
  return out;
}

inline DenseTensor ref_concat(const DenseTensor& a, const DenseTensor& b) {
  DenseTensor out(a.n, a.h, a.w, a.c + b.c);
  for (int n = 0; n < a.n; ++n) {
    for (int y = 0; y < a.h; ++y) {
      for (int x = 0; x < a.w; ++x) {
        for (int c = 0; c < a.c; ++c) out.at(n, y, x, c) = a.at(n, y, x, c);
        for (int c = 0; c < b.c; ++c) out.at(n, y, x, a.c + c) = b.at(n, y, x, c);
      }
    }
  }
  return out;
}

/// Float convolution with zero padding on a real input; accumulation order
/// (ky, kx, ci) then bias.
inline FloatTensor ref_float_conv(const FloatTensor& x, const std::vector<double>& w, const std::vector<double>& bias,
                                  int c_out, int k, int pad) {
  const int ho = x.h + 2 * pad - k + 1;
  const int wo = x.w + 2 * pad - k + 1;
  FloatTensor out(x.n, ho, wo, c_out);
  for (int b = 0; b < x.n; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        for (int o = 0; o < c_out; ++o) {
          double s = 0.0;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy - pad + ky;
              const int ix = ox - pad + kx;
              if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
              for (int ci = 0; ci < x.c; ++ci) {
                s += x.at(b, iy, ix, ci) * w[((static_cast<std::size_t>(o) * x.c + ci) * k + ky) * k + kx];
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

inline DenseTensor ref_bn_sign(const FloatTensor& pre, const BatchNorm& bn) {
  DenseTensor out(pre.n, pre.h, pre.w, pre.c);
  for (std::size_t i = 0; i < pre.data.size(); ++i) {
    const std::size_t c = i % static_cast<std::size_t>(pre.c);
    const double sigma = std::sqrt(bn.var[c] + bn.eps);
    const double y = bn.gamma[c] * (pre.data[i] - bn.mean[c]) / sigma + bn.beta[c];
    out.v[i] = y >= 0.0 ? 1 : -1;
  }
  return out;
}

inline FloatTensor to_real(const DenseTensor& x) {
  FloatTensor out(x.n, x.h, x.w, x.c);
  for (std::size_t i = 0; i < x.v.size(); ++i) out.data[i] = x.v[i];
  return out;
}

struct RefEntry {
  std::string name;
  std::optional<DenseTensor> pre;
  std::optional<DenseTensor> act;
  std::optional<FloatTensor> logits;
};

/// Dense replay of the whole quantized U-Net. Entry names match the
/// executor's step names.
inline std::vector<RefEntry> ref_forward(const QuantizedModel& qm, const FloatTensor& image) {
  const auto& cfg = qm.config;
  const OutOfBounds bin_oob =
      cfg.binary_padding == BinaryPadding::MinusOne ? OutOfBounds::MinusOne : OutOfBounds::Zero;
  std::vector<RefEntry> trace;

  auto bit_conv = [&](const std::string& name, const DenseTensor& x) {
    const auto& q = qm.layer(name);
    const auto& s = q.desc.spec;
    const bool masked = q.desc.state == LayerState::Masked;
    if (!masked && s.padding > 0) {
      require(bin_oob == OutOfBounds::MinusOne, ErrorKind::Unsupported, name + ": binary layer with zero padding");
    }
    DenseTensor acc = q.desc.role == LayerRole::BitTConv
                          ? ref_tconv(x, q.weights, s.c_out, s.kernel_h, s.stride)
                          : ref_conv(x, q.weights, s.c_out, s.kernel_h, s.kernel_w, s.stride, s.padding,
                                     masked ? OutOfBounds::Zero : bin_oob);
    DenseTensor act = ref_threshold(acc, q.threshold);
    trace.push_back({name, acc, act, std::nullopt});
    return act;
  };
  auto record = [&](const std::string& name, const DenseTensor& act) { trace.push_back({name, std::nullopt, act, std::nullopt}); };

  const auto& stem = qm.layer("stem");
  DenseTensor x = ref_bn_sign(ref_float_conv(image, stem.real.weights, stem.real.bias, stem.desc.spec.c_out, 3, 1),
                              *stem.real.bn);
  record("stem", x);
  x = bit_conv("stem2", x);
  std::vector<DenseTensor> skips{x};
  for (int i = 1; i <= 4; ++i) {
    const std::string base = "down-C" + std::to_string(i);
    x = ref_pool(x);
    record(base + "/pool", x);
    x = bit_conv(base + "/conv1", x);
    x = bit_conv(base + "/conv2", x);
    if (i < 4) skips.push_back(x);
  }
  for (int i = 1; i <= 4; ++i) {
    x = bit_conv("up-CT" + std::to_string(i), x);
    x = ref_concat(skips[static_cast<std::size_t>(4 - i)], x);
    record("up-C" + std::to_string(i) + "/concat", x);
    x = bit_conv("up-C" + std::to_string(i) + "/conv1", x);
    x = bit_conv("up-C" + std::to_string(i) + "/conv2", x);
  }
  const auto& head = qm.layer("head");
  FloatTensor logits = ref_float_conv(to_real(x), head.real.weights, head.real.bias, head.desc.spec.c_out, 1, 0);
  trace.push_back({"head", std::nullopt, std::nullopt, logits});
  return trace;
}

}  // namespace mbu::oracle
