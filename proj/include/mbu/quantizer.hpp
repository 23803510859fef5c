#pragma once

// Float weight bundles -> binary / ternary weights and fused thresholds.
//
// A WeightBundle on disk is a directory with a text `manifest` and raw
// little-endian f32 blobs; the grammar is documented in docs/formats.md.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mbu/bitcore.hpp"
#include "mbu/byte_io.hpp"
#include "mbu/error.hpp"
#include "mbu/layers.hpp"
#include "mbu/tensor.hpp"
#include "mbu/unet_config.hpp"

namespace mbu {

inline constexpr double kDefaultTernaryThreshold = 0.7;

enum class WeightKind : std::uint8_t { Conv, TConv };

struct WeightEntry {
  std::string name;
  WeightKind kind = WeightKind::Conv;
  std::array<int, 4> shape{};  // c_out, c_in, kh, kw
  std::vector<double> weights;
  std::vector<double> bias;    // empty or c_out
  std::optional<BatchNorm> bn;
  std::optional<double> ternary_t;  // per-layer override of the ternarization factor

  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3];
  }
  friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

struct WeightBundle {
  std::vector<WeightEntry> entries;

  const WeightEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
  friend bool operator==(const WeightBundle&, const WeightBundle&) = default;
};

// ---------------------------------------------------------------------------
// Per-tensor quantizers

namespace detail {

inline bool already_ternary(std::span<const double> w) {
  return std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0 || v == 1.0 || v == -1.0; });
}

}  // namespace detail

/// {-1,0,+1} values with cut-off t * mean|w|. Tensors already in {-1,0,+1}
/// pass through unchanged.
inline std::vector<std::int8_t> ternary_values(std::span<const double> w, double t = kDefaultTernaryThreshold) {
  require(!w.empty(), ErrorKind::InvalidInput, "ternarize: empty tensor");
  require(std::isfinite(t) && t >= 0.0, ErrorKind::InvalidInput, "ternarize: threshold factor must be >= 0");
  std::vector<std::int8_t> out(w.size(), 0);
  if (detail::already_ternary(w)) {
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<std::int8_t>(w[i]);
    return out;
  }
  double mean_abs = 0.0;
  for (double v : w) {
    require(std::isfinite(v), ErrorKind::InvalidInput, "ternarize: non-finite weight");
    mean_abs += std::abs(v);
  }
  mean_abs /= static_cast<double>(w.size());
  const double delta = t * mean_abs;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > delta) {
      out[i] = 1;
    } else if (w[i] < -delta) {
      out[i] = -1;
    }
  }
  return out;
}

inline MaskedWeightPlanes ternarize(std::span<const double> w, double t = kDefaultTernaryThreshold) {
  const auto v = ternary_values(w, t);
  return pack_ternary(std::span<const std::int8_t>(v));
}

/// sign(w) with sign(0) = +1.
inline std::vector<std::int8_t> binary_values(std::span<const double> w) {
  require(!w.empty(), ErrorKind::InvalidInput, "binarize: empty tensor");
  std::vector<std::int8_t> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    require(!std::isnan(w[i]), ErrorKind::InvalidInput, "binarize: NaN weight");
    out[i] = w[i] >= 0.0 ? 1 : -1;
  }
  return out;
}

inline BitPlane binarize(std::span<const double> w) {
  const auto v = binary_values(w);
  return pack_bipolar(std::span<const std::int8_t>(v));
}

// ---------------------------------------------------------------------------
// Sparsity

struct LayerSparsity {
  std::string name;
  std::size_t lanes = 0;
  double zero = 0.0, pos = 0.0, neg = 0.0;
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;

  double mean_zero() const {
    if (layers.empty()) return 0.0;
    double s = 0.0;
    for (const auto& l : layers) s += l.zero;
    return s / static_cast<double>(layers.size());
  }
};

/// Fractions over the true lanes of a masked plane pair (pads are zero in
/// both planes and so never counted).
inline LayerSparsity sparsity(const MaskedWeightPlanes& w, std::string name = {}) {
  w.validate();
  LayerSparsity s{std::move(name), w.size(), 0, 0, 0};
  if (w.size() == 0) return s;
  const double n = static_cast<double>(w.size());
  const auto p = static_cast<double>(w.pos.count());
  const auto q = static_cast<double>(w.neg.count());
  s.pos = p / n;
  s.neg = q / n;
  s.zero = (n - p - q) / n;
  return s;
}

inline LayerSparsity sparsity(const ConvWeights& w, std::string name = {}) {
  require(w.masked(), ErrorKind::InvalidInput, "sparsity: layer is not masked");
  const std::size_t lanes = static_cast<std::size_t>(w.c_out()) * w.taps() * w.in_layout.channels();
  LayerSparsity s{std::move(name), lanes, 0, 0, 0};
  if (lanes == 0) return s;
  std::size_t p = 0, q = 0;
  for (auto v : w.pos.data()) p += static_cast<std::size_t>(popcount64(v));
  for (auto v : w.neg->data()) q += static_cast<std::size_t>(popcount64(v));
  const double n = static_cast<double>(lanes);
  s.pos = static_cast<double>(p) / n;
  s.neg = static_cast<double>(q) / n;
  s.zero = static_cast<double>(lanes - p - q) / n;
  return s;
}

// ---------------------------------------------------------------------------
// Bundle -> quantized model

/// One layer after quantization, still in dense form. Bit layers carry
/// {-1,0,+1} weights ([c_out][c_in][kh][kw]) and fused thresholds; float
/// layers carry their real parameters.
struct QuantizedLayer {
  ConvLayerDesc desc;
  FloatConvParams real;              // stem / head
  std::vector<std::int8_t> weights;  // bit layers
  FusedThreshold threshold;          // bit layers

  bool masked() const noexcept { return desc.role != LayerRole::FloatConv && desc.state == LayerState::Masked; }
};

struct QuantizedModel {
  UNetConfig config;
  std::vector<QuantizedLayer> layers;

  const QuantizedLayer& layer(const std::string& name) const {
    for (const auto& l : layers) {
      if (l.desc.name == name) return l;
    }
    fail(ErrorKind::Shape, "quantized model: no layer named " + name);
  }
};

inline QuantizedModel quantize_bundle(const WeightBundle& bundle, const UNetConfig& config) {
  const auto issues = validate(config);
  require(issues.empty(), ErrorKind::Unsupported, issues.empty() ? "" : "config: " + issues.front());
  QuantizedModel qm{config, {}};
  for (const auto& desc : conv_layers(config)) {
    const WeightEntry* e = bundle.find(desc.name);
    require(e != nullptr, ErrorKind::Shape, "bundle: missing layer " + desc.name);
    const auto want_kind = desc.role == LayerRole::BitTConv ? WeightKind::TConv : WeightKind::Conv;
    require(e->kind == want_kind, ErrorKind::Shape, desc.name + ": wrong layer kind");
    const std::array<int, 4> want{desc.spec.c_out, desc.spec.c_in, desc.spec.kernel_h, desc.spec.kernel_w};
    require(e->shape == want, ErrorKind::Shape,
            desc.name + ": shape " + std::to_string(e->shape[0]) + "x" + std::to_string(e->shape[1]) + "x" +
                std::to_string(e->shape[2]) + "x" + std::to_string(e->shape[3]) + " does not match expected " +
                std::to_string(want[0]) + "x" + std::to_string(want[1]) + "x" + std::to_string(want[2]) + "x" +
                std::to_string(want[3]));
    require(e->weights.size() == e->weight_count(), ErrorKind::Shape, desc.name + ": weight count mismatch");
    require(e->bias.empty() || e->bias.size() == static_cast<std::size_t>(desc.spec.c_out), ErrorKind::Shape,
            desc.name + ": bias size mismatch");
    if (desc.bn_sign) {
      require(e->bn.has_value(), ErrorKind::Shape, desc.name + ": missing batchnorm parameters");
      e->bn->validate(static_cast<std::size_t>(desc.spec.c_out), desc.name);
    }

    QuantizedLayer q;
    q.desc = desc;
    if (desc.role == LayerRole::FloatConv) {
      q.real.weights = e->weights;
      q.real.bias = e->bias;
      if (desc.bn_sign) q.real.bn = e->bn;
    } else {
      q.weights = desc.state == LayerState::Masked
                      ? ternary_values(e->weights, e->ternary_t.value_or(kDefaultTernaryThreshold))
                      : binary_values(e->weights);
      q.threshold = fuse_bn_sign(*e->bn, e->bias);
    }
    qm.layers.push_back(std::move(q));
  }
  return qm;
}

// ---------------------------------------------------------------------------
// Synthetic bundles

struct SynthOptions {
  double zero_bn_gamma_rate = 0.02;  // fraction of channels with gamma == 0
  double negative_gamma_rate = 0.3;
};

/// Random bundle matching `config`. Weights are f32-representable so that a
/// disk round trip is lossless; batchnorm statistics are centered on the
/// typical accumulator spread so that activations stay mixed.
inline WeightBundle synthesize_bundle(const UNetConfig& config, std::uint64_t seed, const SynthOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  WeightBundle b;
  for (const auto& d : conv_layers(config)) {
    WeightEntry e;
    e.name = d.name;
    e.kind = d.role == LayerRole::BitTConv ? WeightKind::TConv : WeightKind::Conv;
    e.shape = {d.spec.c_out, d.spec.c_in, d.spec.kernel_h, d.spec.kernel_w};
    e.weights.resize(e.weight_count());
    for (auto& w : e.weights) w = f32(normal(rng));
    e.bias.resize(static_cast<std::size_t>(d.spec.c_out));
    for (auto& v : e.bias) v = f32(0.5 * normal(rng));
    if (d.bn_sign) {
      const std::size_t C = static_cast<std::size_t>(d.spec.c_out);
      BatchNorm bn;
      bn.gamma.resize(C);
      bn.beta.resize(C);
      bn.mean.resize(C);
      bn.var.resize(C);
      const double spread = d.role == LayerRole::FloatConv ? std::sqrt(static_cast<double>(d.spec.taps() * d.spec.c_in)) * 0.3
                                                             : std::sqrt(static_cast<double>(d.spec.taps() * d.spec.c_in));
      for (std::size_t c = 0; c < C; ++c) {
        double g = f32(0.2 + unit(rng));
        if (unit(rng) < opt.negative_gamma_rate) g = -g;
        if (unit(rng) < opt.zero_bn_gamma_rate) g = 0.0;
        bn.gamma[c] = g;
        bn.beta[c] = f32(0.5 * normal(rng));
        bn.mean[c] = f32(0.5 * spread * normal(rng));
        bn.var[c] = f32(0.25 + 2.0 * unit(rng));
      }
      bn.eps = 1e-5;
      e.bn = std::move(bn);
    }
    b.entries.push_back(std::move(e));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Bundle directory I/O

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

[[noreturn]] inline void manifest_error(const std::string& path, std::size_t line, std::size_t col,
                                        const std::string& what) {
  fail(ErrorKind::Parse, path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
}

}  // namespace detail

inline void write_bundle(const std::string& dir, const WeightBundle& bundle) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir + ": " + ec.message());
  ByteWriter blob;
  std::ostringstream man;
  man << "# mbu weight bundle v1\n";
  for (const auto& e : bundle.entries) {
    const std::size_t offset = blob.buffer().size();
    for (double v : e.weights) blob.f32(static_cast<float>(v));
    for (double v : e.bias) blob.f32(static_cast<float>(v));
    if (e.bn) {
      for (const auto* vec : {&e.bn->gamma, &e.bn->beta, &e.bn->mean, &e.bn->var}) {
        for (double v : *vec) blob.f32(static_cast<float>(v));
      }
    }
    const std::size_t length = blob.buffer().size() - offset;
    man << "layer name=" << e.name << " kind=" << (e.kind == WeightKind::TConv ? "tconv" : "conv") << " shape="
        << e.shape[0] << "," << e.shape[1] << "," << e.shape[2] << "," << e.shape[3]
        << " dtype=f32 blob=weights.bin offset=" << offset << " length=" << length
        << " bias=" << (e.bias.empty() ? 0 : 1) << " bn=" << (e.bn ? 1 : 0);
    if (e.bn) man << " eps=" << detail::format_double(e.bn->eps);
    if (e.ternary_t) man << " ternary_t=" << detail::format_double(*e.ternary_t);
    man << "\n";
  }
  write_file((std::filesystem::path(dir) / "weights.bin").string(), blob.buffer());
  const std::string text = man.str();
  write_file((std::filesystem::path(dir) / "manifest").string(), std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Parses `dir/manifest` and its blobs. Errors carry line:column positions
/// for the manifest and byte offsets for blobs.
inline WeightBundle read_bundle(const std::string& dir) {
  const std::string man_path = (std::filesystem::path(dir) / "manifest").string();
  std::ifstream in(man_path);
  if (!in) fail(ErrorKind::Io, "cannot open " + man_path);
  std::map<std::string, std::vector<std::uint8_t>> blobs;
  WeightBundle bundle;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;

    // Tokenize, remembering each token's column.
    std::vector<std::pair<std::string, std::size_t>> tokens;
    for (std::size_t i = first; i < line.size();) {
      if (line[i] == ' ' || line[i] == '\t' || line[i] == '\r') {
        ++i;
        continue;
      }
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
      tokens.emplace_back(line.substr(start, i - start), start + 1);
    }
    if (tokens[0].first != "layer") {
      detail::manifest_error(man_path, line_no, tokens[0].second, "expected 'layer', got '" + tokens[0].first + "'");
    }
    std::map<std::string, std::pair<std::string, std::size_t>> kv;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto& [tok, col] = tokens[t];
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) detail::manifest_error(man_path, line_no, col, "expected key=value");
      const std::string key = tok.substr(0, eq);
      if (kv.count(key)) detail::manifest_error(man_path, line_no, col, "duplicate key '" + key + "'");
      kv[key] = {tok.substr(eq + 1), col + eq + 1};
    }
    auto get = [&](const std::string& key) -> const std::pair<std::string, std::size_t>& {
      auto it = kv.find(key);
      if (it == kv.end()) detail::manifest_error(man_path, line_no, tokens[0].second, "missing key '" + key + "'");
      return it->second;
    };
    auto get_u64 = [&](const std::string& key) -> std::uint64_t {
      const auto& [v, col] = get(key);
      std::size_t used = 0;
      unsigned long long r = 0;
      try {
        r = std::stoull(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || v.empty() || v[0] == '-') detail::manifest_error(man_path, line_no, col, "expected unsigned integer for '" + key + "'");
      return r;
    };
    auto get_real = [&](const std::string& key) -> double {
      const auto& [v, col] = get(key);
      std::size_t used = 0;
      double r = 0;
      try {
        r = std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || v.empty()) detail::manifest_error(man_path, line_no, col, "expected real number for '" + key + "'");
      return r;
    };
    for (const auto& [key, val] : kv) {
      static const std::vector<std::string> known = {"name", "kind", "shape", "dtype", "blob", "offset", "length",
                                                     "bias", "bn",   "eps",  "ternary_t"};
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        detail::manifest_error(man_path, line_no, val.second - key.size() - 1, "unknown key '" + key + "'");
      }
    }

    WeightEntry e;
    e.name = get("name").first;
    if (e.name.empty()) detail::manifest_error(man_path, line_no, get("name").second, "empty layer name");
    if (bundle.find(e.name)) detail::manifest_error(man_path, line_no, get("name").second, "duplicate layer '" + e.name + "'");
    const auto& kind = get("kind");
    if (kind.first == "conv") {
      e.kind = WeightKind::Conv;
    } else if (kind.first == "tconv") {
      e.kind = WeightKind::TConv;
    } else {
      detail::manifest_error(man_path, line_no, kind.second, "kind must be conv or tconv");
    }
    const auto& shape = get("shape");
    {
      std::istringstream ss(shape.first);
      std::string part;
      int i = 0;
      while (std::getline(ss, part, ',')) {
        if (i >= 4 || part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
          detail::manifest_error(man_path, line_no, shape.second, "shape must be four positive integers O,I,KH,KW");
        }
        e.shape[static_cast<std::size_t>(i++)] = std::stoi(part);
      }
      if (i != 4 || std::any_of(e.shape.begin(), e.shape.end(), [](int v) { return v <= 0; })) {
        detail::manifest_error(man_path, line_no, shape.second, "shape must be four positive integers O,I,KH,KW");
      }
    }
    const auto& dtype = get("dtype");
    if (dtype.first != "f32") detail::manifest_error(man_path, line_no, dtype.second, "only dtype=f32 is supported");
    const auto& blob_name = get("blob");
    if (blob_name.first.empty() || blob_name.first.find('/') != std::string::npos ||
        blob_name.first.find("..") != std::string::npos) {
      detail::manifest_error(man_path, line_no, blob_name.second, "blob must be a plain file name");
    }
    const std::uint64_t offset = get_u64("offset");
    const std::uint64_t length = get_u64("length");
    const std::uint64_t has_bias = get_u64("bias");
    const std::uint64_t has_bn = get_u64("bn");
    if (has_bias > 1) detail::manifest_error(man_path, line_no, get("bias").second, "bias must be 0 or 1");
    if (has_bn > 1) detail::manifest_error(man_path, line_no, get("bn").second, "bn must be 0 or 1");
    if (kv.count("ternary_t")) e.ternary_t = get_real("ternary_t");

    const std::uint64_t C = static_cast<std::uint64_t>(e.shape[0]);
    const std::uint64_t floats = e.weight_count() + (has_bias ? C : 0) + (has_bn ? 4 * C : 0);
    if (length != 4 * floats) {
      detail::manifest_error(man_path, line_no, get("length").second,
                             "length " + std::to_string(length) + " does not match " + std::to_string(4 * floats) +
                                 " bytes implied by shape/bias/bn");
    }
    auto it = blobs.find(blob_name.first);
    if (it == blobs.end()) {
      it = blobs.emplace(blob_name.first, read_file((std::filesystem::path(dir) / blob_name.first).string())).first;
    }
    const auto& data = it->second;
    if (offset + length > data.size()) {
      detail::manifest_error(man_path, line_no, get("offset").second,
                             "range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                                 ") exceeds blob size " + std::to_string(data.size()));
    }
    std::vector<std::uint8_t> slice(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                    data.begin() + static_cast<std::ptrdiff_t>(offset + length));
    ByteReader r(slice, blob_name.first + "@" + std::to_string(offset));
    auto read_vec = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = static_cast<double>(r.f32());
      return v;
    };
    e.weights = read_vec(e.weight_count());
    if (has_bias) e.bias = read_vec(C);
    if (has_bn) {
      BatchNorm bn;
      bn.gamma = read_vec(C);
      bn.beta = read_vec(C);
      bn.mean = read_vec(C);
      bn.var = read_vec(C);
      bn.eps = kv.count("eps") ? get_real("eps") : 1e-5;
      e.bn = std::move(bn);
    }
    bundle.entries.push_back(std::move(e));
  }
  return bundle;
}

}  // namespace mbu
