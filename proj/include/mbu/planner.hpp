#pragma once

// Cost-aware masking: per-layer operation and parameter accounting, the
// weighted cost score, priority ranking, plan selection, design-space
// enumeration, and marginal-contribution analysis of sweep results.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ranges>
#include <sstream>
#include <string>
#include <vector>

#include "mbu/error.hpp"
#include "mbu/unet_config.hpp"

namespace mbu::planner {

/// How raw counts are mapped to [0, 1] before weighting.
enum class Normalization : std::uint8_t {
  MinMax,       // (x - min) / (max - min) over the 12 configurable layers
  DivideByMax,  // x / max over the 12 configurable layers
};

inline const char* to_string(Normalization n) { return n == Normalization::MinMax ? "min-max" : "divide-by-max"; }

/// Normalization used when none is requested; see docs/planner.md for the
/// comparison that selected it.
inline constexpr Normalization kDefaultNormalization = Normalization::MinMax;

namespace detail {

inline std::vector<ConvLayerDesc> layers_at(const UNetConfig& config, int height, int width) {
  UNetConfig c = config;
  c.height = height;
  c.width = width;
  const auto issues = validate(c);
  require(issues.empty(), ErrorKind::InvalidInput, issues.empty() ? "" : issues.front());
  return conv_layers(c);
}

inline std::int64_t macs(const ConvLayerDesc& d) {
  const auto& s = d.spec;
  const std::int64_t per_pixel = static_cast<std::int64_t>(s.c_in) * s.c_out * s.kernel_h * s.kernel_w;
  if (d.role == LayerRole::BitTConv) {
    // every input pixel scatters one k x k window
    return static_cast<std::int64_t>(d.in_h) * d.in_w * per_pixel;
  }
  return static_cast<std::int64_t>(d.out_h()) * d.out_w() * per_pixel;
}

inline std::int64_t params(const ConvLayerDesc& d) {
  const auto& s = d.spec;
  std::int64_t p = static_cast<std::int64_t>(s.c_out) * s.c_in * s.kernel_h * s.kernel_w;
  p += s.c_out;                     // bias
  if (d.bn_sign) p += 2 * s.c_out;  // batchnorm scale and shift
  return p;
}

}  // namespace detail

/// Multiplications + additions of one labelled layer at the given image
/// extent: 2 per multiply-accumulate. Batchnorm, thresholds, and pooling are
/// not counted.
inline std::int64_t count_ops(const UNetConfig& config, LayerLabel label, int height, int width) {
  std::int64_t ops = 0;
  bool found = false;
  for (const auto& d : detail::layers_at(config, height, width)) {
    if (d.label != label) continue;
    found = true;
    ops += 2 * detail::macs(d);
  }
  require(found, ErrorKind::InvalidInput, "count_ops: unknown label");
  return ops;
}

/// Weights + bias + batchnorm scale/shift of one labelled layer.
inline std::int64_t count_params(const UNetConfig& config, LayerLabel label) {
  std::int64_t p = 0;
  bool found = false;
  for (const auto& d : conv_layers(config)) {
    if (d.label != label) continue;
    found = true;
    p += detail::params(d);
  }
  require(found, ErrorKind::InvalidInput, "count_params: unknown label");
  return p;
}

inline std::int64_t total_params(const UNetConfig& config) {
  std::int64_t p = 0;
  for (const auto& d : conv_layers(config)) p += detail::params(d);
  return p;
}

inline std::int64_t total_ops(const UNetConfig& config, int height, int width) {
  std::int64_t ops = 0;
  for (const auto& d : detail::layers_at(config, height, width)) ops += 2 * detail::macs(d);
  return ops;
}

struct LayerCost {
  LayerLabel label;
  std::int64_t n_op = 0;
  std::int64_t n_param = 0;
  double op_hat = 0.0;
  double param_hat = 0.0;
  double score = 0.0;
  int rank = 0;  // 1-based, ascending score
};

struct CostReport {
  std::vector<LayerCost> layers;  // ascending score
  double w_op = 0.5;
  double w_param = 0.5;
  int height = 0;
  int width = 0;
  Normalization normalization = kDefaultNormalization;

  const LayerCost& at(LayerLabel l) const {
    for (const auto& c : layers) {
      if (c.label == l) return c;
    }
    fail(ErrorKind::InvalidInput, "cost report: no entry for " + to_string(l));
  }
};

/// Scores s = w_op * n_op_hat + (1 - w_op) * n_param_hat over raw counts
/// (one per configurable label, in label order), ranked low to high with
/// label order breaking ties.
inline CostReport rank_costs(const std::vector<std::int64_t>& ops, const std::vector<std::int64_t>& params, double w_op,
                             Normalization norm) {
  require(ops.size() == kConfigurableLayers && params.size() == kConfigurableLayers, ErrorKind::InvalidInput,
          "rank_costs: expected 12 op and parameter counts");
  require(w_op >= 0.0 && w_op <= 1.0, ErrorKind::InvalidInput, "cost_scores: w_op must lie in [0, 1]");
  auto normalize = [norm](const std::vector<std::int64_t>& v) {
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = static_cast<double>(*lo_it);
    const double hi = static_cast<double>(*hi_it);
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = static_cast<double>(v[i]);
      if (norm == Normalization::DivideByMax) {
        out[i] = hi > 0.0 ? x / hi : 0.0;
      } else {
        // all-equal counts carry no ranking signal; map them to 1
        out[i] = hi > lo ? (x - lo) / (hi - lo) : 1.0;
      }
    }
    return out;
  };
  const auto op_hat = normalize(ops);
  const auto param_hat = normalize(params);
  CostReport r;
  r.w_op = w_op;
  r.w_param = 1.0 - w_op;
  r.normalization = norm;
  for (int i = 0; i < kConfigurableLayers; ++i) {
    const auto k = static_cast<std::size_t>(i);
    LayerCost c{kConfigurableLabels[k], ops[k], params[k], op_hat[k], param_hat[k],
                r.w_op * op_hat[k] + r.w_param * param_hat[k], 0};
    r.layers.push_back(c);
  }
  std::stable_sort(r.layers.begin(), r.layers.end(),
                   [](const LayerCost& a, const LayerCost& b) { return a.score < b.score; });
  for (std::size_t i = 0; i < r.layers.size(); ++i) r.layers[i].rank = static_cast<int>(i) + 1;
  return r;
}

inline CostReport cost_scores(const UNetConfig& config, double w_op, int height, int width,
                              Normalization norm = kDefaultNormalization) {
  std::vector<std::int64_t> ops;
  std::vector<std::int64_t> params;
  for (auto l : kConfigurableLabels) {
    ops.push_back(count_ops(config, l, height, width));
    params.push_back(count_params(config, l));
  }
  CostReport r = rank_costs(ops, params, w_op, norm);
  r.height = height;
  r.width = width;
  return r;
}

/// Masks the k lowest-score layers; the rest stay Binary.
inline PrecisionMap select_mask_plan(const CostReport& report, int k) {
  require(k >= 0 && k <= kConfigurableLayers, ErrorKind::InvalidInput, "select_mask_plan: k must lie in [0, 12]");
  require(report.layers.size() == kConfigurableLayers, ErrorKind::InvalidInput, "select_mask_plan: incomplete report");
  PrecisionMap m;
  for (int i = 0; i < k; ++i) m.set(report.layers[static_cast<std::size_t>(i)].label, LayerState::Masked);
  return m;
}

/// Lazily yields every config id in ascending order that satisfies `pred`.
template <typename Pred>
auto enumerate_configs(Pred pred) {
  return std::views::iota(0, kConfigCount) |
         std::views::filter([pred](int id) { return pred(PrecisionMap::from_id(id)); });
}

inline auto enumerate_configs() {
  return enumerate_configs([](PrecisionMap) { return true; });
}

/// Ids with fewer than `max_masked` masked layers.
inline auto enumerate_configs_below(int max_masked) {
  return enumerate_configs([max_masked](PrecisionMap m) { return m.masked_count() < max_masked; });
}

// ---------------------------------------------------------------------------
// Sweep results

struct ResultsTable {
  std::map<int, double> dice;  // config id -> score

  std::optional<double> find(int id) const {
    auto it = dice.find(id);
    return it == dice.end() ? std::nullopt : std::optional<double>(it->second);
  }
};

/// Parses `config_id,dice` CSV text. Errors report line numbers.
inline ResultsTable parse_results_csv(std::istream& in, const std::string& source = "results") {
  ResultsTable t;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  auto error = [&](const std::string& what) { fail(ErrorKind::Parse, source + ":" + std::to_string(line_no) + ": " + what); };
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "config_id,dice") error("expected header 'config_id,dice'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) error("expected two fields");
    const std::string id_s = trim(line.substr(0, comma));
    const std::string d_s = trim(line.substr(comma + 1));
    if (id_s.empty() || id_s.find_first_not_of("0123456789") != std::string::npos) error("config_id must be a decimal integer");
    const long id = std::stol(id_s);
    if (id < 0 || id >= kConfigCount) error("config_id outside 0..4095");
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(d_s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (d_s.empty() || used != d_s.size()) error("dice must be a real number");
    if (!(d >= 0.0 && d <= 1.0)) error("dice must lie in [0, 1]");
    if (!t.dice.emplace(static_cast<int>(id), d).second) error("duplicate config_id " + id_s);
  }
  if (!header) fail(ErrorKind::Parse, source + ": missing header 'config_id,dice'");
  return t;
}

inline ResultsTable read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return parse_results_csv(in, path);
}

struct MarginalGain {
  LayerLabel label;
  std::optional<double> mean_gain;  // undefined when no complete pair exists
  std::size_t pairs = 0;
  std::size_t skipped = 0;  // eligible pairs with exactly one side present
};

/// Mean of score(S + l) - score(S) over configs S with l Binary and fewer
/// than max_masked layers masked in S + l.
inline std::vector<MarginalGain> marginal_contribution(const ResultsTable& results, int max_masked = 5) {
  std::vector<MarginalGain> out;
  for (auto label : kConfigurableLabels) {
    const int bit = 1 << label_index(label);
    MarginalGain g{label, std::nullopt, 0, 0};
    double sum = 0.0;
    for (int id = 0; id < kConfigCount; ++id) {
      if (id & bit) continue;
      const int with = id | bit;
      if (PrecisionMap::from_id(with).masked_count() >= max_masked) continue;
      const auto a = results.find(id);
      const auto b = results.find(with);
      if (a && b) {
        sum += *b - *a;
        ++g.pairs;
      } else if (a || b) {
        ++g.skipped;
      }
    }
    if (g.pairs > 0) g.mean_gain = sum / static_cast<double>(g.pairs);
    out.push_back(g);
  }
  return out;
}

}  // namespace mbu::planner
