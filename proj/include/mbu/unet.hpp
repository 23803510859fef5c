#pragma once

// Compiled quantized U-Net and its executor.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mbu/bitcore.hpp"
#include "mbu/error.hpp"
#include "mbu/layers.hpp"
#include "mbu/quantizer.hpp"
#include "mbu/tensor.hpp"
#include "mbu/unet_config.hpp"

namespace mbu {

/// Layer kind codes; the numeric values are the model file encoding.
enum class StepKind : std::uint8_t {
  FloatConv = 0,
  BinaryConv = 1,
  MaskedConv = 2,
  BinaryTConv = 3,
  MaskedTConv = 4,
  MaxPool = 5,
  Concat = 6,
};

constexpr bool is_bit_conv(StepKind k) noexcept {
  return k == StepKind::BinaryConv || k == StepKind::MaskedConv || k == StepKind::BinaryTConv ||
         k == StepKind::MaskedTConv;
}
constexpr bool is_transposed(StepKind k) noexcept { return k == StepKind::BinaryTConv || k == StepKind::MaskedTConv; }

inline const char* to_string(StepKind k) {
  switch (k) {
    case StepKind::FloatConv: return "float-conv";
    case StepKind::BinaryConv: return "binary-conv";
    case StepKind::MaskedConv: return "masked-conv";
    case StepKind::BinaryTConv: return "binary-tconv";
    case StepKind::MaskedTConv: return "masked-tconv";
    case StepKind::MaxPool: return "maxpool";
    case StepKind::Concat: return "concat";
  }
  return "?";
}

/// One node of the execution graph. `inputs` index earlier steps; -1 is the
/// input image.
struct Step {
  std::string name;
  StepKind kind = StepKind::MaxPool;
  std::vector<int> inputs;
  ConvSpec spec;
  FloatConvParams real;      // FloatConv
  ConvWeights weights;       // bit convolutions
  FusedThreshold threshold;  // bit convolutions

  friend bool operator==(const Step&, const Step&) = default;
};

struct CompiledModel {
  UNetConfig config;
  std::vector<Step> steps;

  const Step& step(const std::string& name) const {
    for (const auto& s : steps) {
      if (s.name == name) return s;
    }
    fail(ErrorKind::Shape, "model: no step named " + name);
  }
  friend bool operator==(const CompiledModel&, const CompiledModel&) = default;
};

/// Checks graph structure: inputs reference earlier steps, arities match kinds.
inline void check_graph(const CompiledModel& m) {
  require(!m.steps.empty(), ErrorKind::Shape, "model: no steps");
  for (std::size_t i = 0; i < m.steps.size(); ++i) {
    const auto& s = m.steps[i];
    const std::size_t arity = s.kind == StepKind::Concat ? 2 : 1;
    require(s.inputs.size() == arity, ErrorKind::Shape, s.name + ": expected " + std::to_string(arity) + " inputs");
    for (int in : s.inputs) {
      require(in >= -1 && in < static_cast<int>(i), ErrorKind::Shape, s.name + ": input must reference an earlier step");
    }
  }
}

/// Packs a quantized model into the executable step graph.
inline CompiledModel build(const QuantizedModel& qm) {
  CompiledModel m{qm.config, {}};
  auto add = [&](Step s) {
    m.steps.push_back(std::move(s));
    return static_cast<int>(m.steps.size()) - 1;
  };
  auto add_conv = [&](const QuantizedLayer& q, int input) {
    Step s;
    s.name = q.desc.name;
    s.inputs = {input};
    s.spec = q.desc.spec;
    if (q.desc.role == LayerRole::FloatConv) {
      s.kind = StepKind::FloatConv;
      s.real = q.real;
    } else {
      const bool masked = q.masked();
      const bool tconv = q.desc.role == LayerRole::BitTConv;
      s.kind = tconv ? (masked ? StepKind::MaskedTConv : StepKind::BinaryTConv)
                     : (masked ? StepKind::MaskedConv : StepKind::BinaryConv);
      s.weights = pack_conv_weights(q.weights, q.desc.spec.c_out, q.desc.spec.kernel_h, q.desc.spec.kernel_w,
                                    ChannelLayout(q.desc.in_segments), masked);
      s.threshold = q.threshold;
    }
    return add(std::move(s));
  };
  auto pool = [&](const std::string& name, int input) {
    Step s;
    s.name = name;
    s.kind = StepKind::MaxPool;
    s.inputs = {input};
    return add(std::move(s));
  };

  std::array<int, 4> skip{};
  int x = add_conv(qm.layer("stem"), -1);
  x = add_conv(qm.layer("stem2"), x);
  skip[0] = x;
  for (int i = 0; i < 4; ++i) {
    const std::string base = to_string(static_cast<LayerLabel>(label_index(LayerLabel::DownC1) + i));
    x = pool(base + "/pool", x);
    x = add_conv(qm.layer(base + "/conv1"), x);
    x = add_conv(qm.layer(base + "/conv2"), x);
    if (i < 3) skip[static_cast<std::size_t>(i + 1)] = x;
  }
  for (int i = 0; i < 4; ++i) {
    const std::string t = to_string(static_cast<LayerLabel>(label_index(LayerLabel::UpCT1) + i));
    const std::string u = to_string(static_cast<LayerLabel>(label_index(LayerLabel::UpC1) + i));
    x = add_conv(qm.layer(t), x);
    Step cat;
    cat.name = u + "/concat";
    cat.kind = StepKind::Concat;
    cat.inputs = {skip[static_cast<std::size_t>(3 - i)], x};
    x = add(std::move(cat));
    x = add_conv(qm.layer(u + "/conv1"), x);
    x = add_conv(qm.layer(u + "/conv2"), x);
  }
  add_conv(qm.layer("head"), x);
  check_graph(m);
  return m;
}

inline CompiledModel build(const UNetConfig& config, const WeightBundle& bundle) {
  return build(quantize_bundle(bundle, config));
}

// ---------------------------------------------------------------------------
// Forward

struct TraceEntry {
  std::string name;
  StepKind kind;
  std::optional<IntTensor> pre;   // bit convolutions, before thresholding
  std::optional<BitTensor> bits;  // every step producing activations
  std::optional<FloatTensor> real;  // head logits
};

struct ForwardResult {
  FloatTensor logits;
  std::vector<std::uint8_t> mask;  // NHWC like logits; 1 where sigmoid(logit) >= 0.5
};

inline std::vector<std::uint8_t> logits_to_mask(const FloatTensor& logits) {
  std::vector<std::uint8_t> mask(logits.data.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = 1.0 / (1.0 + std::exp(-logits.data[i])) >= 0.5 ? 1 : 0;
  return mask;
}

inline ForwardResult forward(const CompiledModel& model, const FloatTensor& image, int workers = 1,
                             std::vector<TraceEntry>* trace = nullptr) {
  check_graph(model);
  const auto& cfg = model.config;
  require(image.h == cfg.height && image.w == cfg.width && image.c == cfg.in_channels, ErrorKind::Shape,
          "forward: image is " + std::to_string(image.h) + "x" + std::to_string(image.w) + "x" +
              std::to_string(image.c) + ", model expects " + std::to_string(cfg.height) + "x" +
              std::to_string(cfg.width) + "x" + std::to_string(cfg.in_channels));
  using Value = std::variant<FloatTensor, BitTensor>;
  std::vector<Value> values;
  values.reserve(model.steps.size());
  auto input = [&](int idx) -> const Value& {
    static const Value none{};
    return idx < 0 ? none : values[static_cast<std::size_t>(idx)];
  };
  auto bits_of = [&](const Step& s, int idx) -> const BitTensor& {
    const Value& v = input(idx);
    if (const auto* b = std::get_if<BitTensor>(&v)) return *b;
    fail(ErrorKind::Shape, s.name + ": expected a bit activation input");
  };

  for (const auto& s : model.steps) {
    TraceEntry te{s.name, s.kind, std::nullopt, std::nullopt, std::nullopt};
    switch (s.kind) {
      case StepKind::FloatConv: {
        const FloatTensor x = s.inputs[0] < 0 ? image : bits_to_float(bits_of(s, s.inputs[0]));
        FloatTensor y = float_conv(x, s.real.weights, s.real.bias, s.spec);
        if (s.real.bn) {
          BitTensor b = float_bn_sign(y, *s.real.bn);
          if (trace) te.bits = b;
          values.emplace_back(std::move(b));
        } else {
          if (trace) te.real = y;
          values.emplace_back(std::move(y));
        }
        break;
      }
      case StepKind::BinaryConv:
      case StepKind::MaskedConv:
      case StepKind::BinaryTConv:
      case StepKind::MaskedTConv: {
        const BitTensor& x = bits_of(s, s.inputs[0]);
        IntTensor acc = is_transposed(s.kind) ? transposed_conv_forward(x, s.weights, s.spec, workers)
                                              : conv_forward(x, s.weights, s.spec, workers);
        BitTensor b = apply_threshold(acc, s.threshold);
        if (trace) {
          te.pre = std::move(acc);
          te.bits = b;
        }
        values.emplace_back(std::move(b));
        break;
      }
      case StepKind::MaxPool: {
        BitTensor b = maxpool2(bits_of(s, s.inputs[0]));
        if (trace) te.bits = b;
        values.emplace_back(std::move(b));
        break;
      }
      case StepKind::Concat: {
        BitTensor b = concat_channels(bits_of(s, s.inputs[0]), bits_of(s, s.inputs[1]));
        if (trace) te.bits = b;
        values.emplace_back(std::move(b));
        break;
      }
    }
    if (trace) trace->push_back(std::move(te));
  }
  auto* logits = std::get_if<FloatTensor>(&values.back());
  require(logits != nullptr, ErrorKind::Shape, "forward: final step must produce real logits");
  ForwardResult r{std::move(*logits), {}};
  r.mask = logits_to_mask(r.logits);
  return r;
}

/// Zero/+1/-1 fractions of every masked step.
inline SparsityReport sparsity(const CompiledModel& m) {
  SparsityReport r;
  for (const auto& s : m.steps) {
    if (is_bit_conv(s.kind) && s.weights.masked()) r.layers.push_back(sparsity(s.weights, s.name));
  }
  return r;
}

}  // namespace mbu
