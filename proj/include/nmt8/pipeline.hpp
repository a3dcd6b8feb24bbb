// pipeline.hpp - text in, text out; shared by the CLI and tests

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nmt8/bpe.hpp"
#include "nmt8/model.hpp"

namespace nmt8 {

// BPE ids of one line with EOS appended.
std::vector<std::int32_t> source_ids(const BpeVocab& vocab, std::string_view line);
std::vector<std::vector<std::int32_t>> source_corpus(const BpeVocab& vocab, const std::vector<std::string>& lines);

std::string translate_line(const Model& m, const BpeVocab& vocab, std::string_view line, std::size_t max_len,
                           const RunOptions& opt);

// Buffers planned for one encoder layer over src_len tokens and one decoder
// step with cache_len cached positions.
struct PlanStats {
  std::size_t encoder_i8 = 0, encoder_i32 = 0, encoder_bytes = 0;
  std::size_t decoder_i8 = 0, decoder_i32 = 0, decoder_bytes = 0;
  std::size_t peak_bytes() const { return std::max(encoder_bytes, decoder_bytes); }
};
PlanStats plan_stats(const Model& m, std::size_t src_len, std::size_t cache_len);

struct BenchResult {
  std::vector<double> run_ms;
  double mean_ms = 0, median_ms = 0, min_ms = 0, max_ms = 0, stddev_ms = 0;
  double tokens_per_sec = 0;
};

// Encodes a seeded random source of src_len tokens and decodes exactly
// tgt_len steps (EOS does not stop it), `runs` times.
BenchResult bench_model(const Model& m, std::size_t runs, std::size_t src_len, std::size_t tgt_len,
                        const RunOptions& opt, std::uint64_t seed = 1);

}  // namespace nmt8
