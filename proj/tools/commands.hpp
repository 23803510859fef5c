#pragma once

// Subcommand implementations behind the `mbu` executable. Each command
// writes its tables to an ostream so tests can drive it without a process.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mbu/mbu.hpp"

namespace mbu::cli {

/// Exit codes beyond the ErrorKind range.
inline constexpr int kExitUsage = 1;
inline constexpr int kExitVerifyMismatch = 9;
inline constexpr int kExitInternal = 10;

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string text() const {
    std::vector<std::size_t> width(header.size(), 0);
    auto grow = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    grow(header);
    for (const auto& r : rows) grow(r);
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < width.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        // first column left-aligned, numbers right-aligned
        if (i == 0) {
          os << std::left << std::setw(static_cast<int>(width[i])) << cell;
        } else {
          os << "  " << std::right << std::setw(static_cast<int>(width[i])) << cell;
        }
      }
      os << "\n";
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    os << std::string(total > 2 ? total - 2 : 0, '-') << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
  }

  std::string csv() const {
    auto field = [](const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      return q + "\"";
    };
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << field(r[i]);
      os << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

enum class Format { Text, Csv };

struct OutputOptions {
  Format format = Format::Text;
  std::string csv_path;  // additionally write CSV here when set
};

inline void emit(std::ostream& os, const Table& t, const OutputOptions& out) {
  os << (out.format == Format::Csv ? t.csv() : t.text());
  if (!out.csv_path.empty()) {
    const std::string s = t.csv();
    write_file(out.csv_path, std::vector<std::uint8_t>(s.begin(), s.end()));
  }
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Config selection shared by several commands

struct ConfigOptions {
  std::string path;           // config file; default schedule when empty
  std::optional<int> base;    // width multiplier base (64 = default widths)
  std::optional<int> extent;  // square image extent override
};

inline UNetConfig load_config(const ConfigOptions& o) {
  UNetConfig c;
  if (!o.path.empty()) {
    require(!o.base, ErrorKind::InvalidInput, "--base cannot be combined with --config");
    c = read_config(o.path);
  } else if (o.base) {
    require(*o.base >= 1, ErrorKind::InvalidInput, "--base must be >= 1");
    c = UNetConfig::scaled(*o.base);
  }
  if (o.extent) c.height = c.width = *o.extent;
  const auto issues = validate(c);
  require(issues.empty(), ErrorKind::InvalidInput, issues.empty() ? "" : issues.front());
  return c;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeOptions {
  std::string bundle_dir;
  ConfigOptions config;
  std::string out_path;
  OutputOptions out;
};

/// Bundle + config -> MBUN model file; prints the sparsity of masked layers.
inline int cmd_quantize(const QuantizeOptions& o, std::ostream& os) {
  const UNetConfig c = load_config(o.config);
  const auto model = build(quantize_bundle(read_bundle(o.bundle_dir), c));
  write_model(o.out_path, model);
  const auto sp = sparsity(model);
  Table t{{"layer", "lanes", "zero", "plus_one", "minus_one"}, {}};
  for (const auto& l : sp.layers) {
    t.rows.push_back({l.name, std::to_string(l.lanes), fixed(l.zero, 4), fixed(l.pos, 4), fixed(l.neg, 4)});
  }
  if (o.out.format == Format::Text) {
    os << "wrote " << o.out_path << " (config_id " << c.precision.id() << ", " << model.steps.size() << " steps)\n";
  }
  if (!t.rows.empty()) emit(os, t, o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
  std::string model_path;
  std::string image_path;
  std::string mask_path;
  std::string logits_path;  // optional RTEN f64 output
  int threads = 1;
};

inline int cmd_infer(const InferOptions& o, std::ostream& os) {
  const auto model = read_model(o.model_path);
  const auto image = read_image(o.image_path);
  const auto r = forward(model, image, o.threads);
  write_mask(o.mask_path, r.mask, r.logits.h, r.logits.w, r.logits.c);
  if (!o.logits_path.empty()) write_tensor(o.logits_path, to_raw(r.logits));
  std::size_t on = 0;
  for (std::size_t p = 0; p < r.mask.size(); p += static_cast<std::size_t>(r.logits.c)) on += r.mask[p];
  os << "wrote " << o.mask_path << " (" << r.logits.w << "x" << r.logits.h << ", " << on << " foreground pixels)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// profile

struct ProfileOptions {
  ConfigOptions config;
  OutputOptions out;
};

/// Per-layer operation and parameter counts at the configured extent.
inline Table profile_table(const UNetConfig& c) {
  Table t{{"layer", "ops", "params"}, {}};
  for (auto l : kConfigurableLabels) {
    t.rows.push_back({to_string(l), std::to_string(planner::count_ops(c, l, c.height, c.width)),
                      std::to_string(planner::count_params(c, l))});
  }
  for (auto l : {LayerLabel::Stem, LayerLabel::Stem2, LayerLabel::Head}) {
    t.rows.push_back({to_string(l), std::to_string(planner::count_ops(c, l, c.height, c.width)),
                      std::to_string(planner::count_params(c, l))});
  }
  t.rows.push_back({"total", std::to_string(planner::total_ops(c, c.height, c.width)),
                    std::to_string(planner::total_params(c))});
  return t;
}

inline int cmd_profile(const ProfileOptions& o, std::ostream& os) {
  const UNetConfig c = load_config(o.config);
  if (o.out.format == Format::Text) os << "extent " << c.height << "x" << c.width << "\n";
  emit(os, profile_table(c), o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// plan

struct PlanOptions {
  ConfigOptions config;
  double w_op = 0.5;
  int k = 4;
  planner::Normalization normalization = planner::kDefaultNormalization;
  OutputOptions out;
};

struct PlanResult {
  planner::CostReport report;
  PrecisionMap plan;
};

inline Table cost_table(const planner::CostReport& r, const PrecisionMap& plan) {
  Table t{{"rank", "layer", "ops", "params", "ops_norm", "params_norm", "score", "state"}, {}};
  for (const auto& l : r.layers) {
    t.rows.push_back({std::to_string(l.rank), to_string(l.label), std::to_string(l.n_op), std::to_string(l.n_param),
                      fixed(l.op_hat, 4), fixed(l.param_hat, 4), fixed(l.score, 4), to_string(plan.state(l.label))});
  }
  return t;
}

inline PlanResult run_plan(const PlanOptions& o) {
  const UNetConfig c = load_config(o.config);
  auto report = planner::cost_scores(c, o.w_op, c.height, c.width, o.normalization);
  const auto plan = planner::select_mask_plan(report, o.k);
  return {std::move(report), plan};
}

inline int cmd_plan(const PlanOptions& o, std::ostream& os) {
  const auto r = run_plan(o);
  if (o.out.format == Format::Text) {
    os << "w_op " << fixed(r.report.w_op, 3) << ", w_param " << fixed(r.report.w_param, 3) << ", extent "
       << r.report.height << "x" << r.report.width << ", normalization " << planner::to_string(r.report.normalization)
       << "\n";
  }
  emit(os, cost_table(r.report, r.plan), o.out);
  if (o.out.format == Format::Text) {
    os << "plan k=" << o.k << ": config_id " << r.plan.id() << " masked [";
    bool first = true;
    for (const auto& l : r.report.layers) {
      if (r.plan.state(l.label) != LayerState::Masked) continue;
      os << (first ? "" : ", ") << to_string(l.label);
      first = false;
    }
    os << "]\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::string results_path;
  int max_masked = 5;
  OutputOptions out;
};

inline Table marginal_table(const std::vector<planner::MarginalGain>& gains) {
  Table t{{"layer", "mean_gain", "pairs", "skipped"}, {}};
  for (const auto& g : gains) {
    std::ostringstream v;
    if (g.mean_gain) {
      v << std::setprecision(17) << *g.mean_gain;
    } else {
      v << "undefined";
    }
    t.rows.push_back({to_string(g.label), v.str(), std::to_string(g.pairs), std::to_string(g.skipped)});
  }
  return t;
}

inline int cmd_analyze(const AnalyzeOptions& o, std::ostream& os) {
  require(o.max_masked >= 1 && o.max_masked <= kConfigurableLayers + 1, ErrorKind::InvalidInput,
          "--max-masked must lie in 1..13");
  const auto results = planner::read_results_csv(o.results_path);
  if (o.out.format == Format::Text) {
    os << results.dice.size() << " configs, max_masked " << o.max_masked << "\n";
  }
  emit(os, marginal_table(planner::marginal_contribution(results, o.max_masked)), o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
  ConfigOptions config;  // defaults to base 16 at 64x64
  std::uint64_t seed = 1;
  int trials = 50;
  int threads = 1;
  OutputOptions out;
};

inline int cmd_verify(const VerifyOptions& o, std::ostream& os) {
  ConfigOptions co = o.config;
  if (co.path.empty() && !co.base) co.base = 16;
  if (co.path.empty() && !co.extent) co.extent = 64;
  const UNetConfig c = load_config(co);
  const auto rep = verify_random(c, o.seed, o.trials, o.threads);
  Table t{{"trial", "config_id", "seed", "tensors", "result"}, {}};
  for (std::size_t i = 0; i < rep.trials.size(); ++i) {
    const auto& tr = rep.trials[i];
    t.rows.push_back({std::to_string(i), std::to_string(tr.config_id), std::to_string(tr.seed),
                      std::to_string(tr.result.tensors),
                      tr.result.exact() ? "exact" : "MISMATCH " + tr.result.mismatches.front()});
  }
  emit(os, t, o.out);
  if (o.out.format == Format::Text) os << rep.exact() << "/" << rep.trials.size() << " exact\n";
  return rep.all_exact() ? 0 : kExitVerifyMismatch;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string model_path;  // optional: also time full forward passes
  int channels = 256;
  int extent = 64;
  int kernel = 3;
  int reps = 3;
  int threads = 1;
  bool oracle = true;  // the oracle conv takes seconds at the default size
  OutputOptions out;
};

struct BenchRow {
  std::string name;
  double seconds = 0.0;  // best of reps
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double macs = 0.0;

  double seconds(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return r.seconds;
    }
    return 0.0;
  }
  double speedup(const std::string& fast, const std::string& slow) const {
    const double f = seconds(fast);
    return f > 0.0 ? seconds(slow) / f : 0.0;
  }
};

template <typename Fn>
double best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int i = 0; i < std::max(1, reps); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

/// Times one c x c convolution on an extent x extent input through the
/// bit-packed masked and binary paths, the float reference, and the oracle.
inline BenchResult run_conv_bench(const BenchOptions& o) {
  require(o.channels >= 1 && o.extent >= 1 && o.kernel >= 1 && o.reps >= 1, ErrorKind::InvalidInput,
          "bench: channels, extent, kernel, and reps must be >= 1");
  const int c = o.channels;
  const int k = o.kernel;
  const ConvSpec spec{k, k, 1, k / 2, c, c, BinaryPadding::MinusOne};
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int> tern(-1, 1);
  std::bernoulli_distribution coin(0.5);

  std::vector<std::int8_t> act(static_cast<std::size_t>(o.extent) * o.extent * c);
  for (auto& v : act) v = coin(rng) ? 1 : -1;
  std::vector<std::int8_t> wt(static_cast<std::size_t>(c) * c * k * k);
  for (auto& v : wt) v = static_cast<std::int8_t>(tern(rng));
  std::vector<std::int8_t> wb(wt.size());
  for (auto& v : wb) v = coin(rng) ? 1 : -1;

  const BitTensor x = pack_tensor<std::int8_t>(act, 1, o.extent, o.extent, c);
  const auto layout = ChannelLayout::dense(c);
  const auto w_masked = pack_conv_weights(wt, c, k, k, layout, true);
  const auto w_binary = pack_conv_weights(wb, c, k, k, layout, false);
  FloatTensor xf(1, o.extent, o.extent, c);
  for (std::size_t i = 0; i < act.size(); ++i) xf.data[i] = act[i];
  const std::vector<double> wf(wt.begin(), wt.end());

  BenchResult r;
  r.macs = static_cast<double>(o.extent) * o.extent * c * c * k * k;
  r.rows.push_back({"bit masked conv", best_of(o.reps, [&] { (void)conv_forward(x, w_masked, spec, o.threads); })});
  r.rows.push_back({"bit binary conv", best_of(o.reps, [&] { (void)conv_forward(x, w_binary, spec, o.threads); })});
  r.rows.push_back({"float reference conv", best_of(1, [&] { (void)float_conv(xf, wf, {}, spec); })});
  if (o.oracle) {
    oracle::DenseTensor xd(1, o.extent, o.extent, c);
    for (std::size_t i = 0; i < act.size(); ++i) xd.v[i] = act[i];
    r.rows.push_back({"oracle conv", best_of(1, [&] {
                        (void)oracle::ref_conv(xd, wt, c, k, k, 1, k / 2, oracle::OutOfBounds::Zero);
                      })});
  }
  return r;
}

inline int cmd_bench(const BenchOptions& o, std::ostream& os) {
  const auto r = run_conv_bench(o);
  const double float_s = r.seconds("float reference conv");
  Table t{{"path", "ms", "gmac_per_s", "speedup_vs_float"}, {}};
  for (const auto& row : r.rows) {
    t.rows.push_back({row.name, fixed(row.seconds * 1e3, 2), fixed(r.macs / row.seconds / 1e9, 3),
                      fixed(float_s / row.seconds, 2)});
  }
  if (!o.model_path.empty()) {
    const auto model = read_model(o.model_path);
    const FloatTensor image = random_image(model.config, 7);
    const double s = best_of(o.reps, [&] { (void)forward(model, image, o.threads); });
    t.rows.push_back({"model forward", fixed(s * 1e3, 2), "", ""});
  }
  if (o.out.format == Format::Text) {
    os << "conv " << o.channels << "->" << o.channels << ", " << o.kernel << "x" << o.kernel << ", " << o.extent
       << "x" << o.extent << ", threads " << o.threads << ", best of " << o.reps << "\n";
  }
  emit(os, t, o.out);
  if (o.out.format == Format::Text && r.seconds("oracle conv") > 0.0) {
    os << "bit masked vs oracle: " << fixed(r.speedup("bit masked conv", "oracle conv"), 1) << "x\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmdOptions {
  ConfigOptions config;
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string config_out;  // optional: write the config used
};

/// Writes a random weight bundle for the config.
inline int cmd_synth(const SynthCmdOptions& o, std::ostream& os) {
  const UNetConfig c = load_config(o.config);
  const auto b = synthesize_bundle(c, o.seed);
  write_bundle(o.out_dir, b);
  if (!o.config_out.empty()) {
    const std::string s = format_config(c);
    write_file(o.config_out, std::vector<std::uint8_t>(s.begin(), s.end()));
  }
  os << "wrote " << b.entries.size() << " layers to " << o.out_dir << "\n";
  return 0;
}

}  // namespace mbu::cli
