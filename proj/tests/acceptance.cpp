// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "test_support.hpp"

using namespace mbu;
using namespace mbu::test;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<int> bits_of(std::uint32_t v, int n) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = (v >> i) & 1U ? 1 : -1;
  return out;
}

Outcome binary_dot() {
  std::size_t cases = 0;
  for (int n = 1; n <= 12; ++n) {
    const std::uint32_t count = 1U << n;
    std::vector<BitPlane> planes;
    std::vector<std::vector<int>> values;
    for (std::uint32_t v = 0; v < count; ++v) {
      values.push_back(bits_of(v, n));
      planes.push_back(pack_bipolar(values.back()));
    }
    for (std::uint32_t a = 0; a < count; ++a) {
      for (std::uint32_t b = 0; b < count; ++b) {
        if (dot_binary(planes[a], planes[b], static_cast<std::size_t>(n)) != scalar_dot(values[a], values[b])) {
          return {false, "n=" + std::to_string(n) + " a=" + std::to_string(a) + " b=" + std::to_string(b)};
        }
      }
    }
    cases += static_cast<std::size_t>(count) * count;
  }
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 4096);
  for (int i = 0; i < 10000; ++i) {
    const auto n = static_cast<std::size_t>(len(rng));
    const auto a = random_bipolar(n, rng);
    const auto b = random_bipolar(n, rng);
    if (dot_binary(pack_bipolar(a), pack_bipolar(b), n) != scalar_dot(a, b)) {
      return {false, "random case " + std::to_string(i) + " n=" + std::to_string(n)};
    }
  }
  return {true, std::to_string(cases) + " exhaustive pairs (n<=12) + 10000 random (n<=4096)"};
}

Outcome masked_dot() {
  std::size_t cases = 0;
  for (int n = 1; n <= 8; ++n) {
    const std::uint32_t acts = 1U << n;
    std::uint32_t weights = 1;
    for (int i = 0; i < n; ++i) weights *= 3;
    std::vector<BitPlane> ap;
    std::vector<std::vector<int>> av;
    for (std::uint32_t v = 0; v < acts; ++v) {
      av.push_back(bits_of(v, n));
      ap.push_back(pack_bipolar(av.back()));
    }
    for (std::uint32_t w = 0; w < weights; ++w) {
      std::vector<int> wv(static_cast<std::size_t>(n));
      std::uint32_t r = w;
      for (auto& x : wv) {
        x = static_cast<int>(r % 3) - 1;
        r /= 3;
      }
      const auto planes = pack_ternary(wv);
      for (std::uint32_t a = 0; a < acts; ++a) {
        if (dot_masked(ap[a], planes, static_cast<std::size_t>(n)) != scalar_dot(av[a], wv)) {
          return {false, "n=" + std::to_string(n) + " a=" + std::to_string(a) + " w=" + std::to_string(w)};
        }
      }
    }
    cases += static_cast<std::size_t>(acts) * weights;
  }
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(9, 4096);
  for (int i = 0; i < 10000; ++i) {
    const auto n = static_cast<std::size_t>(len(rng));
    const auto a = random_bipolar(n, rng);
    const auto w = random_ternary(n, rng);
    if (dot_masked(pack_bipolar(a), pack_ternary(w), n) != scalar_dot(a, w)) {
      return {false, "random case " + std::to_string(i) + " n=" + std::to_string(n)};
    }
  }
  return {true, std::to_string(cases) + " exhaustive pairs (n<=8) + 10000 random (n<=4096)"};
}

Outcome layer_equivalence() {
  std::mt19937_64 rng(3);
  std::set<int> channels, kernels, strides;
  int transposed = 0, concat = 0, unaligned = 0;
  const int runs = 240;
  for (int i = 0; i < runs; ++i) {
    const auto lc = random_case(rng);
    const auto err = check_layer_case(lc, rng, 1 + i % 3);
    if (!err.empty()) return {false, "case " + std::to_string(i) + ": " + err};
    channels.insert(lc.c_in);
    channels.insert(lc.c_out);
    kernels.insert(lc.kernel);
    strides.insert(lc.stride);
    transposed += lc.transposed;
    concat += lc.segments.size() > 1;
    unaligned += lc.c_in % 128 != 0;
  }
  const bool covered = channels == std::set<int>{64, 128, 192, 256} && kernels == std::set<int>{1, 2, 3} &&
                       strides == std::set<int>{1, 2} && transposed > 0 && concat > 0 && unaligned > 0;
  if (!covered) return {false, "randomized cases did not cover the required shapes"};
  return {true, std::to_string(runs) + " configurations (" + std::to_string(transposed) + " transposed, " +
                    std::to_string(concat) + " concat inputs, " + std::to_string(unaligned) +
                    " with c_in not a multiple of 128)"};
}

Outcome end_to_end() {
  const auto rep = verify_random(UNetConfig::scaled(16, 64), 4, 20);
  std::size_t tensors = 0;
  for (const auto& t : rep.trials) tensors += t.result.tensors;
  if (!rep.all_exact()) {
    for (const auto& t : rep.trials) {
      if (!t.result.exact()) return {false, "config " + std::to_string(t.config_id) + ": " + t.result.mismatches.front()};
    }
  }
  return {true, std::to_string(rep.exact()) + "/" + std::to_string(rep.trials.size()) +
                    " random precision maps exact at base 16, 64x64 (" + std::to_string(tensors) + " tensors)"};
}

Outcome threshold_fusion() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int range = 2304;  // |acc| bound of a 3x3x256 layer
  int negative = 0, zero = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    BatchNorm bn;
    double g = n(rng);
    if (draw % 10 == 0) g = 0.0;
    if (draw % 10 == 1) g = -std::abs(g);
    bn.gamma = {g};
    bn.beta = {n(rng) * 2.0};
    bn.mean = {n(rng) * 600.0};
    bn.var = {u(rng) < 0.05 ? 0.0 : std::abs(n(rng)) * 400.0};
    bn.eps = 1e-5;
    const double bias = n(rng) * 3.0;
    negative += g < 0.0;
    zero += g == 0.0;
    const auto t = fuse_bn_sign(bn, std::vector<double>{bias});
    const double sigma = std::sqrt(bn.var[0] + bn.eps);
    for (int acc = -range; acc <= range; ++acc) {
      const double y = g * ((static_cast<double>(acc) + bias) - bn.mean[0]) / sigma + bn.beta[0];
      if (t.channels[0].fire(acc) != (y >= 0.0)) {
        return {false, "draw " + std::to_string(draw) + " acc " + std::to_string(acc)};
      }
    }
  }
  return {true, "1000 draws (" + std::to_string(negative) + " gamma<0, " + std::to_string(zero) +
                    " gamma=0), every accumulator in [-2304, 2304]"};
}

Outcome cost_ranking() {
  const std::vector<std::pair<LayerLabel, double>> table = {
      {LayerLabel::UpCT4, 0.011}, {LayerLabel::UpCT3, 0.016}, {LayerLabel::UpCT2, 0.037}, {LayerLabel::UpCT1, 0.120},
      {LayerLabel::UpC3, 0.228},  {LayerLabel::DownC1, 0.273}, {LayerLabel::UpC2, 0.286}, {LayerLabel::DownC2, 0.406},
      {LayerLabel::UpC4, 0.512},  {LayerLabel::UpC1, 0.521},  {LayerLabel::DownC4, 0.583}, {LayerLabel::DownC3, 0.625},
  };
  cli::PlanOptions o;
  o.w_op = 0.5;
  o.k = 4;
  auto max_error = [&](planner::Normalization norm) {
    o.normalization = norm;
    const auto r = cli::run_plan(o).report;
    double e = 0.0;
    for (const auto& [label, want] : table) e = std::max(e, std::abs(r.at(label).score - want));
    return e;
  };
  const double err_minmax = max_error(planner::Normalization::MinMax);
  const double err_div = max_error(planner::Normalization::DivideByMax);

  o.normalization = planner::kDefaultNormalization;
  const auto res = cli::run_plan(o);
  const auto& r = res.report;
  const std::array<LayerLabel, 4> order{LayerLabel::UpCT4, LayerLabel::UpCT3, LayerLabel::UpCT2, LayerLabel::UpCT1};
  bool ranks = r.height == 512 && r.width == 512;
  for (std::size_t i = 0; i < 4; ++i) ranks = ranks && r.layers[i].label == order[i];

  // each transposed layer against the mean double-conv layer
  double conv_sum = 0.0;
  int conv_n = 0;
  for (const auto& l : r.layers) {
    const int idx = label_index(l.label);
    if (idx < 4 || idx >= 8) {
      conv_sum += static_cast<double>(l.n_op);
      ++conv_n;
    }
  }
  const double conv_mean = conv_sum / conv_n;
  double lo = 1e300, hi = 0.0;
  for (auto l : order) {
    const double ratio = conv_mean / static_cast<double>(r.at(l).n_op);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  const bool magnitude = lo >= 10.0 && hi <= 100.0;
  const bool scores = (planner::kDefaultNormalization == planner::Normalization::MinMax ? err_minmax : err_div) <= 0.05;

  std::ostringstream d;
  d.precision(4);
  d << "ranks 1-4 " << (ranks ? "up-CT4,up-CT3,up-CT2,up-CT1" : "WRONG") << "; max score error min-max " << err_minmax
    << ", divide-by-max " << err_div << " (using " << planner::to_string(planner::kDefaultNormalization)
    << "); double-conv/up-CT op ratio " << lo << ".." << hi;
  return {ranks && scores && magnitude, d.str()};
}

Outcome parameter_count() {
  const UNetConfig c;
  const auto p = planner::total_params(c);
  std::ostringstream d;
  d << p << " parameters; encoder " << c.encoder[0] << "/" << c.encoder[1] << "/" << c.encoder[2] << "/"
    << c.encoder[3] << ", bottleneck " << c.bottleneck << ", up " << c.up_transposed[0] << "/" << c.up_transposed[1]
    << "/" << c.up_transposed[2] << "/" << c.up_transposed[3] << ", decoder " << c.decoder[0] << "/" << c.decoder[1]
    << "/" << c.decoder[2] << "/" << c.decoder[3];
  return {p >= 14'000'000 && p <= 18'000'000, d.str()};
}

Outcome marginal_analysis() {
  const auto dir = scratch_dir("acceptance_marginal");
  const auto path = (dir / "results.csv").string();
  {
    std::ofstream out(path);
    out << "config_id,dice\n";
    out.precision(17);
    for (int id : planner::enumerate_configs_below(5)) {
      double d = 0.5;
      for (int l = 0; l < 12; ++l) {
        if (id >> l & 1) d += (l + 1) / 256.0;
      }
      out << id << "," << d << "\n";
    }
  }
  cli::AnalyzeOptions o;
  o.results_path = path;
  o.max_masked = 5;
  o.out.format = cli::Format::Csv;
  std::ostringstream os;
  cli::cmd_analyze(o, os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  int recovered = 0;
  for (int l = 0; l < 12; ++l) {
    if (!std::getline(in, line)) break;
    std::istringstream row(line);
    std::string label, gain;
    std::getline(row, label, ',');
    std::getline(row, gain, ',');
    if (label == to_string(kConfigurableLabels[static_cast<std::size_t>(l)]) && std::stod(gain) == (l + 1) / 256.0) {
      ++recovered;
    }
  }
  std::int64_t binomial_sum = 0;
  for (int k = 0; k <= 4; ++k) {
    std::int64_t c = 1;
    for (int i = 1; i <= k; ++i) c = c * (12 - k + i) / i;
    binomial_sum += c;
  }
  const auto enumerated = std::ranges::distance(planner::enumerate_configs_below(5));
  return {recovered == 12 && enumerated == binomial_sum && binomial_sum == 794,
          std::to_string(recovered) + "/12 planted gains recovered exactly; " + std::to_string(enumerated) +
              " configs with fewer than 5 masked (binomial sum " + std::to_string(binomial_sum) + ")"};
}

Outcome throughput() {
  cli::BenchOptions o;
  o.channels = 256;
  o.extent = 64;
  o.kernel = 3;
  o.reps = 3;
  o.threads = 1;
  const auto r = cli::run_conv_bench(o);
  const double vs_float = r.speedup("bit masked conv", "float reference conv");
  const double vs_oracle = r.speedup("bit masked conv", "oracle conv");
  std::ostringstream d;
  d.precision(3);
  d << "masked conv " << r.seconds("bit masked conv") * 1e3 << " ms, float " << r.seconds("float reference conv") * 1e3
    << " ms, oracle " << r.seconds("oracle conv") * 1e3 << " ms; speedup " << vs_float << "x vs float, " << vs_oracle
    << "x vs oracle";
  return {vs_float >= 8.0 && vs_oracle >= 20.0, d.str()};
}

Outcome model_round_trip() {
  const auto dir = scratch_dir("acceptance_models");
  std::mt19937_64 rng(10);
  for (int i = 0; i < 10; ++i) {
    auto c = UNetConfig::scaled(8 + 8 * (i % 3), 32);
    c.precision = PrecisionMap::from_id(static_cast<int>(rng() % kConfigCount));
    c.stem2 = i % 2 ? LayerState::Binary : LayerState::Masked;
    const auto bundle_dir = (dir / ("bundle" + std::to_string(i))).string();
    write_bundle(bundle_dir, synthesize_bundle(c, rng()));
    const auto model = build(quantize_bundle(read_bundle(bundle_dir), c));
    const auto path = (dir / ("m" + std::to_string(i) + ".mbun")).string();
    write_model(path, model);
    const auto back = read_model(path);
    const auto image = random_image(c, rng());
    const auto a = forward(model, image);
    const auto b = forward(back, image);
    if (!(a.logits == b.logits) || a.mask != b.mask || !(back == model)) {
      return {false, "model " + std::to_string(i) + " (config " + std::to_string(c.precision.id()) + ") differs"};
    }
  }
  return {true, "10 random models: logits and masks bit-identical after write/read"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"binary dot product", binary_dot},
      {"masked dot product", masked_dot},
      {"layer kernels vs oracle", layer_equivalence},
      {"end-to-end forward vs oracle", end_to_end},
      {"threshold fusion", threshold_fusion},
      {"cost ranking", cost_ranking},
      {"parameter count", parameter_count},
      {"marginal analysis", marginal_analysis},
      {"bit-path throughput", throughput},
      {"model file round trip", model_round_trip},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
