// toy.hpp - seeded toy models and corpora for tests, benchmarks and demos

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmt8/bpe.hpp"
#include "nmt8/model.hpp"

namespace nmt8 {

struct ToyOptions {
  float embed_std = 1.0f;
  // Sublayer weights ~ N(0, (weight_gain^2) / fan_in).
  float weight_gain = 1.0f;
  float bias_std = 0.02f;
  float ln_std = 0.1f;  // gain ~ 1 + N(0, ln_std^2), bias ~ N(0, ln_std^2)
};

Model make_toy_model(const ModelConfig& cfg, std::uint64_t seed, const ToyOptions& opt = {});

// A toy model that copies its source, on top of random weights at `noise`
// gain. Random weights alone give near-tied logits, so int8 vs f32 token
// agreement would mostly measure tie breaking.
//
// Layout: the first H/2 dims carry positions, the rest token content
// (embeddings live in [H/2, H-2), unit norm). In decoder layer 0 the first
// H/(2d) cross-attention heads match query and key positions, read the
// source content and write it back with gain `alpha`. Dim H-2 is an almost
// constant sine that cancels the LN mean shift in the position match.
struct CopyOptions {
  float beta = 6.0f;   // position match sharpness
  float alpha = 6.0f;  // copy gain
  float noise = 0.2f;
};

Model make_copy_model(const ModelConfig& cfg, std::uint64_t seed, const CopyOptions& opt = {});

// Random sentences over a small synthetic lexicon.
std::vector<std::string> make_toy_corpus(std::size_t sentences, std::uint64_t seed);

// Random token sequences of length [min_len, max_len] over the non-special ids.
std::vector<std::vector<std::int32_t>> random_sources(std::size_t count, std::size_t vocab, std::size_t min_len,
                                                      std::size_t max_len, std::uint64_t seed);

}  // namespace nmt8
