// designspace.hpp - analytic parameter / FLOPs / memory traffic / size estimates
//
// Conventions:
//   FLOPs  one per multiply-add, every GEMM (QK^T and A.V included, output
//          projection per target step); LN, softmax and adds are ignored.
//          The decoder runs incrementally; cross-attention K/V are projected
//          once per sample.
//   MMI/O  weights once per layer application (shared layers count per use,
//          the embedding table once), plus every tensor crossing a fused node
//          boundary once, when written, at its stored width
//          (A bits for quantized tensors, 4 bytes for accumulators and f32).

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nmt8/model.hpp"

namespace nmt8 {

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t no_embed = 0;
  std::uint64_t embed() const { return total - no_embed; }
};

struct CostReport {
  std::uint64_t params_total = 0;
  std::uint64_t params_no_embed = 0;
  std::uint64_t flops = 0;
  std::uint64_t mmio_bytes = 0;
  std::uint64_t size_bytes = 0;
};

ParamCount count_params(const ModelConfig& cfg);
std::uint64_t estimate_flops(const ModelConfig& cfg, std::size_t src_len, std::size_t tgt_len);
std::uint64_t estimate_mmio(const ModelConfig& cfg, std::size_t src_len, std::size_t tgt_len, const BitWidths& bits);
// Bytes of `params` weights, `embed_params` of them at e_bits and the rest at w_bits.
std::uint64_t size_bytes(std::uint64_t params, int w_bits, int e_bits, std::uint64_t embed_params);

CostReport cost_report(const ModelConfig& cfg, std::size_t src_len, std::size_t tgt_len, const BitWidths& bits);

// Named configurations: base, small, tiny, transformer-base, mobilenmt-10mb,
// mobilenmt-20mb.
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace nmt8
