#include "nmt8/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "nmt8/errors.hpp"
#include "nmt8/ops.hpp"
#include "nmt8/toy.hpp"

namespace nmt8 {

std::vector<std::int32_t> source_ids(const BpeVocab& vocab, std::string_view line) {
  auto ids = vocab.encode(line);
  ids.push_back(vocab.special().eos);
  return ids;
}

std::vector<std::vector<std::int32_t>> source_corpus(const BpeVocab& vocab, const std::vector<std::string>& lines) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(source_ids(vocab, l));
  return out;
}

std::string translate_line(const Model& m, const BpeVocab& vocab, std::string_view line, std::size_t max_len,
                           const RunOptions& opt) {
  if (vocab.size() != m.cfg.vocab) throw VocabError("vocabulary size does not match the model");
  const auto out = greedy_decode(m, source_ids(vocab, line), max_len, opt);
  return vocab.decode(out);
}

PlanStats plan_stats(const Model& m, std::size_t src_len, std::size_t cache_len) {
  PlanStats s;
  if (!m.enc.empty()) {
    const MemoryPlan p = plan_memory(fuse(build_encoder_layer_graph(m, 0, src_len).graph));
    s.encoder_i8 = p.count(BufferClass::kByte);
    s.encoder_i32 = p.count(BufferClass::kWord);
    s.encoder_bytes = p.total_bytes();
  }
  if (!m.dec.empty()) {
    const MemoryPlan p =
        plan_memory(fuse(build_decoder_step_graph(m, m.dec.size() - 1, cache_len, src_len).graph));
    s.decoder_i8 = p.count(BufferClass::kByte);
    s.decoder_i32 = p.count(BufferClass::kWord);
    s.decoder_bytes = p.total_bytes();
  }
  return s;
}

BenchResult bench_model(const Model& m, std::size_t runs, std::size_t src_len, std::size_t tgt_len,
                        const RunOptions& opt, std::uint64_t seed) {
  if (runs == 0 || src_len == 0) throw UsageError("bench needs runs >= 1 and a source length >= 1");
  if (tgt_len > m.cfg.max_len) throw UsageError("target length exceeds the model's max_len");
  const auto src = random_sources(1, m.cfg.vocab, src_len, src_len, seed)[0];
  BenchResult r;
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    DecodeState st = start_decode(m, encode(m, src, opt));
    std::int32_t tok = m.special.bos;
    for (std::size_t s = 0; s < tgt_len; ++s) {
      const FTensor logits = decode_step(m, st, tok, opt);
      tok = static_cast<std::int32_t>(argmax_row(logits.row(0)));
    }
    const auto t1 = std::chrono::steady_clock::now();
    r.run_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  auto sorted = r.run_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.min_ms = sorted.front();
  r.max_ms = sorted.back();
  r.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (double v : sorted) r.mean_ms += v;
  r.mean_ms /= static_cast<double>(n);
  if (n > 1) {
    double var = 0;
    for (double v : sorted) var += (v - r.mean_ms) * (v - r.mean_ms);
    r.stddev_ms = std::sqrt(var / static_cast<double>(n - 1));
  }
  r.tokens_per_sec = r.mean_ms > 0 ? static_cast<double>(tgt_len) * 1000.0 / r.mean_ms : 0.0;
  return r;
}

}  // namespace nmt8
