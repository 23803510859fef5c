#pragma once

// Engine-versus-oracle comparison over whole forward passes.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mbu/oracle.hpp"
#include "mbu/unet.hpp"

namespace mbu {

struct TraceComparison {
  std::size_t tensors = 0;  // tensors compared
  std::vector<std::string> mismatches;

  bool exact() const noexcept { return mismatches.empty(); }
};

/// Compares every pre-threshold accumulator, activation, and the logits.
inline TraceComparison compare_traces(const std::vector<TraceEntry>& engine, const std::vector<oracle::RefEntry>& ref) {
  TraceComparison r;
  if (engine.size() != ref.size()) {
    r.mismatches.push_back("trace length " + std::to_string(engine.size()) + " vs oracle " + std::to_string(ref.size()));
    return r;
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& e = engine[i];
    const auto& o = ref[i];
    if (e.name != o.name) {
      r.mismatches.push_back("step " + std::to_string(i) + ": " + e.name + " vs oracle " + o.name);
      continue;
    }
    if (o.pre) {
      ++r.tensors;
      const bool same = e.pre && e.pre->n == o.pre->n && e.pre->h == o.pre->h && e.pre->w == o.pre->w &&
                        e.pre->c == o.pre->c && e.pre->data == o.pre->v;
      if (!same) r.mismatches.push_back(o.name + ": accumulators differ");
    }
    if (o.act) {
      ++r.tensors;
      bool same = e.bits && e.bits->n() == o.act->n && e.bits->h() == o.act->h && e.bits->w() == o.act->w &&
                  e.bits->c() == o.act->c && e.bits->pads_clear();
      if (same) {
        const auto v = unpack_tensor(*e.bits);
        for (std::size_t k = 0; k < v.size() && same; ++k) same = v[k] == o.act->v[k];
      }
      if (!same) r.mismatches.push_back(o.name + ": activations differ");
    }
    if (o.logits) {
      ++r.tensors;
      if (!e.real || !(*e.real == *o.logits)) r.mismatches.push_back(o.name + ": logits differ");
    }
  }
  return r;
}

/// Random image with 8-bit quantized intensities, as read from a PNM file.
inline FloatTensor random_image(const UNetConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 255);
  FloatTensor img(1, c.height, c.width, c.in_channels);
  for (auto& v : img.data) v = level(rng) / 255.0;
  return img;
}

struct VerifyTrial {
  int config_id = 0;
  std::uint64_t seed = 0;
  TraceComparison result;
};

struct VerifyReport {
  std::vector<VerifyTrial> trials;

  std::size_t exact() const {
    std::size_t n = 0;
    for (const auto& t : trials) n += t.result.exact() ? 1 : 0;
    return n;
  }
  bool all_exact() const { return exact() == trials.size(); }
};

/// Runs `trials` random precision maps with random bundles through both the
/// engine and the oracle.
inline VerifyReport verify_random(const UNetConfig& base, std::uint64_t seed, int trials, int workers = 1) {
  require(trials >= 0, ErrorKind::InvalidInput, "verify: trial count must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> id(0, kConfigCount - 1);
  VerifyReport rep;
  for (int t = 0; t < trials; ++t) {
    UNetConfig c = base;
    c.precision = PrecisionMap::from_id(id(rng));
    const std::uint64_t s = rng();
    const auto qm = quantize_bundle(synthesize_bundle(c, s), c);
    const auto model = build(qm);
    const auto image = random_image(c, s ^ 0x9e3779b97f4a7c15ULL);
    std::vector<TraceEntry> trace;
    forward(model, image, workers, &trace);
    rep.trials.push_back({c.precision.id(), s, compare_traces(trace, oracle::ref_forward(qm, image))});
  }
  return rep;
}

}  // namespace mbu
