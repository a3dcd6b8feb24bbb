// kernels.hpp - integer attention products and accumulator dequantization
//
// A GEMM leaves int32 accumulators behind. AccMeta carries what is needed to
// turn any accumulator back into a real value (operand params, code sums and
// the layout that maps an output cell to those sums).

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nmt8/gemm.hpp"

namespace nmt8 {

struct AccMeta {
  enum class Layout { kLinear, kScores, kContext };

  Layout layout = Layout::kLinear;
  std::size_t k = 0;
  QuantParams a;
  // One entry, or one per output column for row-wise weights.
  std::vector<QuantParams> b;
  std::vector<std::int32_t> a_sums;
  std::vector<std::int32_t> b_sums;
  // Attention layouts only.
  std::size_t q_rows = 0;
  std::size_t k_rows = 0;
  std::size_t head_dim = 0;

  float value(std::size_t i, std::size_t j, std::int32_t acc) const {
    std::size_t ai = i, bi = j;
    if (layout == Layout::kScores) {
      bi = (i / q_rows) * k_rows + j;
    } else if (layout == Layout::kContext) {
      ai = (j / head_dim) * q_rows + i;
    }
    const QuantParams& bp = b.size() == 1 ? b[0] : b[j];
    return static_cast<float>(affine_value(acc, a, a_sums[ai], bp, b_sums[bi], k));
  }
};

// a (m x k, leading dim lda) against packed weights.
AccMeta linear_u8(const std::uint8_t* a, std::size_t m, std::size_t lda, const QuantParams& a_params,
                  const PackedMatrix& w, std::int32_t* out, int workers);

// Per-head Q_h K_h^T. Output is (heads * lq) x lk, head-major rows.
AccMeta scores_u8(const std::uint8_t* q, std::size_t lq, std::size_t ldq, const QuantParams& q_params,
                  const std::uint8_t* k, std::size_t lk, std::size_t ldk, const QuantParams& k_params,
                  std::size_t heads, std::size_t head_dim, std::int32_t* out, int workers);

// Per-head P_h V_h. p is (heads * lq) x lk; output is lq x (heads * head_dim).
AccMeta context_u8(const std::uint8_t* p, std::size_t lq, std::size_t lk, const QuantParams& p_params,
                   const std::uint8_t* v, std::size_t ldv, const QuantParams& v_params, std::size_t heads,
                   std::size_t head_dim, std::int32_t* out, int workers);

}  // namespace nmt8
