// fixtures.hpp - model-level checks shared by the unit tests and acceptance

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nmt8/calibrate.hpp"
#include "nmt8/model.hpp"
#include "nmt8/quant.hpp"
#include "nmt8/toy.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

namespace nmt8::tu {

inline std::vector<std::vector<std::int32_t>> with_eos(std::vector<std::vector<std::int32_t>> v) {
  for (auto& s : v) s.push_back(2);
  return v;
}

// H=8, 2 heads, 2+2 layers, random gammas.
inline Model reference_toy(std::uint64_t seed) {
  const ModelConfig cfg{23, 8, 0, 12, 2, 2, 2, 1, 16};
  Model m = make_toy_model(cfg, seed);
  std::mt19937_64 rng(seed + 7);
  std::uniform_real_distribution<float> g(0.5f, 1.5f);
  for_each_gamma(m, [&](const std::string&, float& v) { v = g(rng); });
  return m;
}

// Largest |engine - reference| over encoder output and all decoder logits.
inline double reference_max_diff(std::uint64_t seed) {
  const Model m = reference_toy(seed);
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> src(3 + rng() % 6), tgt(1 + rng() % 7);
  for (auto& t : src) t = static_cast<std::int32_t>(rng() % m.cfg.vocab);
  for (auto& t : tgt) t = static_cast<std::int32_t>(rng() % m.cfg.vocab);
  RunOptions o;
  const EncoderMemory mem = encode(m, src, o);
  const FTensor logits = decode_full(m, mem, tgt, o);
  const ref::Mat rmem = ref::encode(m, src);
  const ref::Mat rlog = ref::decode(m, rmem, tgt);
  double worst = 0.0;
  for (std::size_t r = 0; r < rmem.size(); ++r) {
    for (std::size_t c = 0; c < rmem[r].size(); ++c) worst = std::max(worst, std::abs(rmem[r][c] - mem.output.at(r, c)));
  }
  for (std::size_t r = 0; r < rlog.size(); ++r) {
    for (std::size_t c = 0; c < rlog[r].size(); ++c) worst = std::max(worst, std::abs(rlog[r][c] - logits.at(r, c)));
  }
  return worst;
}

inline Model calibrated(const Model& f, const BitWidths& bits, std::uint64_t seed, std::size_t samples = 16) {
  const auto calib = with_eos(random_sources(samples, f.cfg.vocab, 3, 12, seed));
  return quantize_model(f, calibrate_model(f, calib, bits, 20), bits);
}

// Stepwise decode_step vs decode_full over the same prefix, largest logit gap.
inline double kv_cache_max_diff(const Model& m, const std::vector<std::int32_t>& src,
                                const std::vector<std::int32_t>& tgt, const RunOptions& o) {
  const EncoderMemory mem = encode(m, src, o);
  const FTensor full = decode_full(m, mem, tgt, o);
  DecodeState st = start_decode(m, mem);
  double worst = 0.0;
  for (std::size_t t = 0; t < tgt.size(); ++t) {
    const FTensor step = decode_step(m, st, tgt[t], o);
    for (std::size_t c = 0; c < step.cols(); ++c) worst = std::max(worst, double(std::abs(step.at(0, c) - full.at(t, c))));
  }
  return worst;
}

// Seeded toy model i of the KV-cache suite: shapes vary with the seed; odd
// seeds are checked in int8 mode, even ones in fp32.
inline double kv_cache_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t heads = 1 + rng() % 4;
  const std::size_t h = heads * (2 + rng() % 4) * 2;
  const ModelConfig cfg{30 + rng() % 40, h, 0, 2 * h, heads, 1 + rng() % 3, 1 + rng() % 3, 1, 24};
  const Model f = make_toy_model(cfg, seed);
  std::vector<std::int32_t> src(2 + rng() % 10), tgt(1 + rng() % 15);
  for (auto& t : src) t = static_cast<std::int32_t>(4 + rng() % (cfg.vocab - 4));
  for (auto& t : tgt) t = static_cast<std::int32_t>(4 + rng() % (cfg.vocab - 4));
  tgt[0] = 1;
  RunOptions o;
  if (seed % 2) {
    o.mode = Mode::kInt8;
    return kv_cache_max_diff(calibrated(f, {8, 8, 8}, seed), src, tgt, o);
  }
  return kv_cache_max_diff(f, src, tgt, o);
}

struct Fidelity {
  double min_cosine = 1.0;
  double agreement = 0.0;
};

// Copy toy model (H=64, 4 heads, FFN 128, 4+2 layers, V=200), calibrated
// on 64 sentences and compared with the f32 engine on 50 others.
inline Fidelity int8_fidelity(std::uint64_t seed) {
  const ModelConfig cfg{200, 64, 0, 128, 4, 4, 2, 1, 64};
  const Model f = make_copy_model(cfg, seed);
  const BitWidths bits{8, 8, 8};
  const auto calib = with_eos(random_sources(64, cfg.vocab, 4, 20, seed + 10));
  const Model q = quantize_model(f, calibrate_model(f, calib, bits, 30), bits);
  Fidelity r;
  std::size_t agree = 0, total = 0;
  RunOptions o8, o32;
  o8.mode = Mode::kInt8;
  for (const auto& s : with_eos(random_sources(50, cfg.vocab, 4, 20, seed + 999))) {
    r.min_cosine = std::min(r.min_cosine, cosine(encode(q, s, o8).output.data(), encode(f, s, o32).output.data()));
    const auto g8 = greedy_decode(q, s, 30, o8);
    const auto g32 = greedy_decode(f, s, 30, o32);
    const std::size_t n = std::max(g8.size(), g32.size());
    for (std::size_t i = 0; i < n; ++i) agree += i < g8.size() && i < g32.size() && g8[i] == g32[i];
    total += n;
  }
  r.agreement = static_cast<double>(agree) / static_cast<double>(total);
  return r;
}

// A random quantized model: random shape, bit triple and activation ranges.
inline Model random_quantized(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  static const int kBits[] = {2, 3, 4, 8};
  const std::size_t heads = 1 + rng() % 3;
  const std::size_t h = heads * (1 + rng() % 4) * 2;
  const ModelConfig cfg{5 + rng() % 30, h, 0, 1 + rng() % 24, heads, 1 + rng() % 2, 1 + rng() % 2, 1, 8 + rng() % 8};
  const BitWidths bits{kBits[rng() % 4], kBits[rng() % 4], kBits[rng() % 4]};
  const Model f = make_toy_model(cfg, seed);
  ScaleTable t;
  t.weights = weight_scales(f, bits);
  std::uniform_real_distribution<float> lo(-4.0f, 0.0f), width(0.1f, 6.0f);
  for (const auto& p : quant_points(cfg)) {
    const float a = lo(rng);
    t.activations[p] = quant_params_from_range(a, a + width(rng), bits.a);
  }
  Model q = quantize_model(f, t, bits);
  std::uniform_real_distribution<float> g(0.5f, 1.5f);
  for_each_gamma(q, [&](const std::string&, float& v) { v = g(rng); });
  return q;
}

inline bool same_bits(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  }
  return true;
}

// Field-by-field comparison, independent of the serializer. Empty when equal,
// else the first differing field.
inline std::string first_difference(Model a, Model b) {
  if (!(a.cfg == b.cfg)) return "cfg";
  if (!(a.bits == b.bits)) return "bits";
  if (!(a.special == b.special)) return "special";
  if (!(a.act == b.act)) return "act";
  std::string diff;
  std::vector<Linear*> lb;
  for_each_linear(b, [&](const std::string&, Linear& l, bool) { lb.push_back(&l); });
  std::size_t i = 0;
  for_each_linear(a, [&](const std::string& name, Linear& l, bool) {
    if (!diff.empty()) return;
    if (i >= lb.size()) {
      diff = name;
      return;
    }
    const Linear& o = *lb[i++];
    if (l.q.has_value() != o.q.has_value() || (l.q && !(*l.q == *o.q)) || !same_bits(l.w.data(), o.w.data())) diff = name;
  });
  std::vector<FTensor*> vb;
  for_each_vector(b, [&](const std::string&, FTensor& v) { vb.push_back(&v); });
  i = 0;
  for_each_vector(a, [&](const std::string& name, FTensor& v) {
    if (diff.empty() && (i >= vb.size() || !same_bits(v.data(), vb[i++]->data()))) diff = name;
  });
  std::vector<float> gb;
  for_each_gamma(b, [&](const std::string&, float& g) { gb.push_back(g); });
  i = 0;
  for_each_gamma(a, [&](const std::string& name, float& g) {
    if (diff.empty() && (i >= gb.size() || std::bit_cast<std::uint32_t>(g) != std::bit_cast<std::uint32_t>(gb[i++]))) diff = name;
  });
  return diff;
}

}  // namespace nmt8::tu
