#include "nmt8/kernels.hpp"

#include <algorithm>

namespace nmt8 {

AccMeta linear_u8(const std::uint8_t* a, std::size_t m, std::size_t lda, const QuantParams& a_params,
                  const PackedMatrix& w, std::int32_t* out, int workers) {
  gemm_u8(a, m, w.cols, lda, w, out, workers);
  AccMeta meta;
  meta.layout = AccMeta::Layout::kLinear;
  meta.k = w.cols;
  meta.a = a_params;
  meta.b = w.params;
  meta.a_sums = row_code_sums(a, m, w.cols, lda);
  meta.b_sums = w.row_code_sums;
  return meta;
}

AccMeta scores_u8(const std::uint8_t* q, std::size_t lq, std::size_t ldq, const QuantParams& q_params,
                  const std::uint8_t* k, std::size_t lk, std::size_t ldk, const QuantParams& k_params,
                  std::size_t heads, std::size_t head_dim, std::int32_t* out, int workers) {
  AccMeta meta;
  meta.layout = AccMeta::Layout::kScores;
  meta.k = head_dim;
  meta.a = q_params;
  meta.b = {k_params};
  meta.q_rows = lq;
  meta.k_rows = lk;
  meta.head_dim = head_dim;
  meta.a_sums.resize(heads * lq);
  meta.b_sums.resize(heads * lk);
  for (std::size_t h = 0; h < heads; ++h) {
    const PackedMatrix keys = pack_strided(k + h * head_dim, lk, head_dim, ldk, 1, {k_params});
    gemm_u8(q + h * head_dim, lq, head_dim, ldq, keys, out + h * lq * lk, workers);
    const auto qs = row_code_sums(q + h * head_dim, lq, head_dim, ldq);
    std::copy(qs.begin(), qs.end(), meta.a_sums.begin() + static_cast<std::ptrdiff_t>(h * lq));
    std::copy(keys.row_code_sums.begin(), keys.row_code_sums.end(),
              meta.b_sums.begin() + static_cast<std::ptrdiff_t>(h * lk));
  }
  return meta;
}

AccMeta context_u8(const std::uint8_t* p, std::size_t lq, std::size_t lk, const QuantParams& p_params,
                   const std::uint8_t* v, std::size_t ldv, const QuantParams& v_params, std::size_t heads,
                   std::size_t head_dim, std::int32_t* out, int workers) {
  AccMeta meta;
  meta.layout = AccMeta::Layout::kContext;
  meta.k = lk;
  meta.a = p_params;
  meta.b = {v_params};
  meta.q_rows = lq;
  meta.k_rows = lk;
  meta.head_dim = head_dim;
  meta.a_sums.resize(heads * lq);
  meta.b_sums.resize(heads * head_dim);
  const std::size_t width = heads * head_dim;
  std::vector<std::int32_t> tile(lq * head_dim);
  for (std::size_t h = 0; h < heads; ++h) {
    // V_h^T: row c of the packed matrix is column h*d + c of V.
    const PackedMatrix vt = pack_strided(v + h * head_dim, head_dim, lk, 1, ldv, {v_params});
    const std::uint8_t* ph = p + h * lq * lk;
    gemm_u8(ph, lq, lk, lk, vt, tile.data(), workers);
    for (std::size_t i = 0; i < lq; ++i) {
      std::copy_n(tile.data() + i * head_dim, head_dim, out + i * width + h * head_dim);
    }
    const auto ps = row_code_sums(ph, lq, lk, lk);
    std::copy(ps.begin(), ps.end(), meta.a_sums.begin() + static_cast<std::ptrdiff_t>(h * lq));
    std::copy(vt.row_code_sums.begin(), vt.row_code_sums.end(),
              meta.b_sums.begin() + static_cast<std::ptrdiff_t>(h * head_dim));
  }
  return meta;
}

}  // namespace nmt8
