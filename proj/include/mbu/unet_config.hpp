#pragma once

// U-Net configuration: the 12 configurable layer labels, the Binary/Masked
// precision map over them, the channel schedule, and the per-convolution
// topology that every other module (quantizer, executor, planner) consumes.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mbu/error.hpp"
#include "mbu/tensor.hpp"

namespace mbu {

inline constexpr int kConfigurableLayers = 12;
inline constexpr int kConfigCount = 1 << kConfigurableLayers;

/// Configurable labels occupy indices 0..11 in tie-break order; the three
/// fixed endpoints follow.
enum class LayerLabel : std::uint8_t {
  DownC1, DownC2, DownC3, DownC4,
  UpCT1, UpCT2, UpCT3, UpCT4,
  UpC1, UpC2, UpC3, UpC4,
  Stem, Stem2, Head,
};

inline constexpr std::array<LayerLabel, kConfigurableLayers> kConfigurableLabels = {
    LayerLabel::DownC1, LayerLabel::DownC2, LayerLabel::DownC3, LayerLabel::DownC4,
    LayerLabel::UpCT1,  LayerLabel::UpCT2,  LayerLabel::UpCT3,  LayerLabel::UpCT4,
    LayerLabel::UpC1,   LayerLabel::UpC2,   LayerLabel::UpC3,   LayerLabel::UpC4,
};

constexpr int label_index(LayerLabel l) noexcept { return static_cast<int>(l); }
constexpr bool is_configurable(LayerLabel l) noexcept { return label_index(l) < kConfigurableLayers; }

inline std::string to_string(LayerLabel l) {
  static constexpr std::array<const char*, 15> names = {
      "down-C1", "down-C2", "down-C3", "down-C4", "up-CT1", "up-CT2", "up-CT3", "up-CT4",
      "up-C1",   "up-C2",   "up-C3",   "up-C4",   "stem",   "stem2",  "head"};
  return names[static_cast<std::size_t>(l)];
}

inline std::optional<LayerLabel> parse_label(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  for (int i = 0; i < 15; ++i) {
    auto l = static_cast<LayerLabel>(i);
    std::string name = to_string(l);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (name == lower) return l;
  }
  return std::nullopt;
}

enum class LayerState : std::uint8_t { Binary = 0, Masked = 1 };

inline const char* to_string(LayerState s) { return s == LayerState::Masked ? "masked" : "binary"; }

/// Binary/Masked state of the 12 configurable layers. Bit i of the config id
/// is label index i; a set bit means Masked.
class PrecisionMap {
 public:
  constexpr PrecisionMap() = default;

  static PrecisionMap from_id(int id) {
    require(id >= 0 && id < kConfigCount, ErrorKind::InvalidInput,
            "config id " + std::to_string(id) + " outside 0..4095");
    PrecisionMap m;
    m.bits_ = static_cast<std::uint16_t>(id);
    return m;
  }
  static constexpr PrecisionMap all(LayerState s) {
    PrecisionMap m;
    m.bits_ = s == LayerState::Masked ? kConfigCount - 1 : 0;
    return m;
  }

  constexpr int id() const noexcept { return bits_; }

  LayerState state(LayerLabel l) const {
    require(is_configurable(l), ErrorKind::InvalidInput, "precision map: " + to_string(l) + " is not configurable");
    return (bits_ >> label_index(l)) & 1U ? LayerState::Masked : LayerState::Binary;
  }
  void set(LayerLabel l, LayerState s) {
    require(is_configurable(l), ErrorKind::InvalidInput, "precision map: " + to_string(l) + " is not configurable");
    const auto bit = static_cast<std::uint16_t>(1U << label_index(l));
    bits_ = s == LayerState::Masked ? static_cast<std::uint16_t>(bits_ | bit) : static_cast<std::uint16_t>(bits_ & ~bit);
  }
  int masked_count() const noexcept { return std::popcount(static_cast<unsigned>(bits_)); }

  friend constexpr bool operator==(PrecisionMap, PrecisionMap) = default;

 private:
  std::uint16_t bits_ = 0;
};

struct UNetConfig {
  int in_channels = 3;
  int out_channels = 1;
  int height = 512;
  int width = 512;
  std::array<int, 4> encoder{64, 128, 256, 512};
  int bottleneck = 512;
  std::array<int, 4> up_transposed{512, 128, 64, 32};
  std::array<int, 4> decoder{256, 128, 64, 64};
  int up_kernel = 2;
  int up_stride = 2;
  PrecisionMap precision;
  LayerState stem2 = LayerState::Masked;
  BinaryPadding binary_padding = BinaryPadding::MinusOne;

  /// Default schedule with every width multiplied by base/64 (rounded, >= 1).
  static UNetConfig scaled(int base, int extent = 512) {
    UNetConfig c;
    auto s = [base](int v) { return std::max(1, (v * base + 32) / 64); };
    for (auto& v : c.encoder) v = s(v);
    for (auto& v : c.up_transposed) v = s(v);
    for (auto& v : c.decoder) v = s(v);
    c.bottleneck = s(c.bottleneck);
    c.height = c.width = extent;
    return c;
  }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Constraint violations; empty when the config is buildable.
inline std::vector<std::string> validate(const UNetConfig& c) {
  std::vector<std::string> issues;
  if (c.height <= 0 || c.width <= 0) {
    issues.push_back("extent: height and width must be positive");
  } else if (c.height % 16 != 0 || c.width % 16 != 0) {
    issues.push_back("extent: " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                     " is not divisible by 16 (four 2x down-samplings)");
  }
  if (c.in_channels <= 0) issues.push_back("schedule: in_channels must be positive");
  if (c.out_channels <= 0) issues.push_back("schedule: out_channels must be positive");
  auto positive = [&](const char* what, auto const& arr) {
    for (int v : arr) {
      if (v <= 0) {
        issues.push_back(std::string("schedule: ") + what + " widths must be positive");
        return;
      }
    }
  };
  positive("encoder", c.encoder);
  positive("up_transposed", c.up_transposed);
  positive("decoder", c.decoder);
  if (c.bottleneck <= 0) issues.push_back("schedule: bottleneck width must be positive");
  if (c.up_kernel != c.up_stride) {
    issues.push_back("unsupported: transposed conv kernel " + std::to_string(c.up_kernel) + " != stride " +
                     std::to_string(c.up_stride) + " (only non-overlapping up-convolution is supported)");
  }
  if (c.up_stride != 2) issues.push_back("unsupported: up-convolution stride must be 2 to mirror 2x2 max-pooling");
  if (c.precision.id() < 0 || c.precision.id() >= kConfigCount) issues.push_back("precision: config id out of range");
  return issues;
}

enum class LayerRole : std::uint8_t { FloatConv, BitConv, BitTConv };

/// One weighted layer of the network, in execution order.
struct ConvLayerDesc {
  std::string name;
  LayerLabel label;
  LayerRole role;
  ConvSpec spec;
  std::vector<int> in_segments;  // channel layout of the input activation
  int in_h = 0, in_w = 0;        // input extent at the configured image size
  bool bn_sign = true;           // followed by batchnorm + sign
  LayerState state = LayerState::Binary;  // bit layers only

  int out_h() const noexcept { return role == LayerRole::BitTConv ? in_h * spec.stride : spec.out_extent(in_h, spec.kernel_h); }
  int out_w() const noexcept { return role == LayerRole::BitTConv ? in_w * spec.stride : spec.out_extent(in_w, spec.kernel_w); }
};

/// Layer list of the quantized U-Net for `c`: float stem conv, stem2, four
/// encoder double convs (each after a max-pool), four decoder stages of
/// transposed conv + concat(skip, up) + double conv, and a float 1x1 head.
inline std::vector<ConvLayerDesc> conv_layers(const UNetConfig& c) {
  auto conv3 = [&](int cin, int cout) {
    ConvSpec s{3, 3, 1, 1, cin, cout, c.binary_padding};
    return s;
  };
  std::vector<ConvLayerDesc> out;
  int h = c.height;
  int w = c.width;
  out.push_back({"stem", LayerLabel::Stem, LayerRole::FloatConv, conv3(c.in_channels, c.encoder[0]), {c.in_channels}, h, w, true, LayerState::Binary});
  out.push_back({"stem2", LayerLabel::Stem2, LayerRole::BitConv, conv3(c.encoder[0], c.encoder[0]), {c.encoder[0]}, h, w, true, c.stem2});

  const std::array<int, 5> chans{c.encoder[0], c.encoder[1], c.encoder[2], c.encoder[3], c.bottleneck};
  for (int i = 0; i < 4; ++i) {
    h /= 2;
    w /= 2;
    const auto label = static_cast<LayerLabel>(label_index(LayerLabel::DownC1) + i);
    const auto st = c.precision.state(label);
    const std::string base = to_string(label);
    out.push_back({base + "/conv1", label, LayerRole::BitConv, conv3(chans[i], chans[i + 1]), {chans[i]}, h, w, true, st});
    out.push_back({base + "/conv2", label, LayerRole::BitConv, conv3(chans[i + 1], chans[i + 1]), {chans[i + 1]}, h, w, true, st});
  }

  int prev = c.bottleneck;
  for (int i = 0; i < 4; ++i) {
    const auto tlabel = static_cast<LayerLabel>(label_index(LayerLabel::UpCT1) + i);
    ConvSpec ts{c.up_kernel, c.up_kernel, c.up_stride, 0, prev, c.up_transposed[i], c.binary_padding};
    out.push_back({to_string(tlabel), tlabel, LayerRole::BitTConv, ts, {prev}, h, w, true, c.precision.state(tlabel)});
    h *= c.up_stride;
    w *= c.up_stride;
    const int skip = chans[3 - i];
    const auto ulabel = static_cast<LayerLabel>(label_index(LayerLabel::UpC1) + i);
    const auto st = c.precision.state(ulabel);
    const std::string base = to_string(ulabel);
    out.push_back({base + "/conv1", ulabel, LayerRole::BitConv, conv3(skip + c.up_transposed[i], c.decoder[i]),
                   {skip, c.up_transposed[i]}, h, w, true, st});
    out.push_back({base + "/conv2", ulabel, LayerRole::BitConv, conv3(c.decoder[i], c.decoder[i]), {c.decoder[i]}, h, w, true, st});
    prev = c.decoder[i];
  }
  ConvSpec hs{1, 1, 1, 0, c.decoder[3], c.out_channels, c.binary_padding};
  out.push_back({"head", LayerLabel::Head, LayerRole::FloatConv, hs, {c.decoder[3]}, h, w, false, LayerState::Binary});
  return out;
}

}  // namespace mbu
