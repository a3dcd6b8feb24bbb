// gemm.hpp - integer GEMM over 4x4-block packed weights
//
// Weights are stored output-feature-major, so every product here is A * W^T.
// pack() rewrites a code matrix so that each 4x4 block (4 output rows by 4
// reduction columns) becomes 16 contiguous bytes:
//
//   offset(r, c) = ((r/4) * cols_p/4 + c/4) * 16 + (r%4) * 4 + (c%4)
//
// Both dimensions are zero padded to multiples of 4. One 4-row panel is the
// unit of work handed to a worker thread. The kernel multiplies one 16-byte
// weight block against the matching 4 activation codes replicated four times,
// i.e. 16 byte products per step, and accumulates exactly in int32. Results
// do not depend on the worker count.
//
// affine_correct() turns accumulators into real values:
//   real = sa*sw*acc + sa*mw*sum(a) + sw*ma*sum(w) + k*ma*mw

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nmt8/tensor.hpp"

namespace nmt8 {

inline constexpr std::size_t kBlockDim = 4;
inline constexpr std::size_t kBlockBytes = kBlockDim * kBlockDim;

constexpr std::size_t round_up4(std::size_t n) { return (n + kBlockDim - 1) / kBlockDim * kBlockDim; }

constexpr std::size_t packed_offset(std::size_t r, std::size_t c, std::size_t cols_p) {
  return ((r / kBlockDim) * (cols_p / kBlockDim) + c / kBlockDim) * kBlockBytes + (r % kBlockDim) * kBlockDim +
         (c % kBlockDim);
}

struct PackedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t rows_p = 0;
  std::size_t cols_p = 0;
  std::vector<std::uint8_t> codes;
  // Sum of each original row's codes over the unpadded columns.
  std::vector<std::int32_t> row_code_sums;
  // One entry (per-tensor) or one per row (row-wise).
  std::vector<QuantParams> params;

  const QuantParams& row_params(std::size_t r) const { return params.size() == 1 ? params[0] : params[r]; }
};

PackedMatrix pack(const QTensor& w);
// Packs the rows x cols view codes[r * row_stride + c * col_stride]. Used for
// column slices and transposes of activations (per-head K and V^T).
PackedMatrix pack_strided(const std::uint8_t* codes, std::size_t rows, std::size_t cols, std::size_t row_stride,
                          std::size_t col_stride, std::vector<QuantParams> params);
QTensor unpack(const PackedMatrix& w);

std::vector<std::int32_t> row_code_sums(const QTensor& a);
std::vector<std::int32_t> row_code_sums(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda);

// out[i * w.rows + j] = sum_k a[i * lda + k] * w(j, k). `workers` <= 1 runs serially.
void gemm_u8(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda, const PackedMatrix& w,
             std::int32_t* out, int workers = 1);
ATensor gemm_u8(const QTensor& a, const PackedMatrix& w, int workers = 1);

// Serial kernel that walks the packed layout one block at a time. Kept as the
// baseline for tests and benchmarks.
void gemm_u8_reference(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda, const PackedMatrix& w,
                       std::int32_t* out);
ATensor gemm_u8_reference(const QTensor& a, const PackedMatrix& w);

inline double affine_value(std::int32_t acc, const QuantParams& a, std::int32_t a_sum, const QuantParams& w,
                           std::int32_t w_sum, std::size_t k) {
  const double sa = a.scale, ma = a.min_val, sw = w.scale, mw = w.min_val;
  return sa * sw * acc + sa * mw * a_sum + sw * ma * w_sum + static_cast<double>(k) * ma * mw;
}

FTensor affine_correct(const ATensor& acc, const QuantParams& a_params, std::span<const std::int32_t> a_row_code_sums,
                       const PackedMatrix& w);

// Quantizes a GEMM output ahead of the next integer consumer.
QTensor requantize(const FTensor& t, const QuantParams& p);

// Real A * W^T with double accumulation.
void gemm_f32(const float* a, std::size_t m, std::size_t k, std::size_t lda, const float* w, std::size_t n,
              std::size_t ldw, float* out, int workers = 1);
FTensor gemm_f32(const FTensor& a, const FTensor& w, int workers = 1);
FTensor gemm_f32_reference(const FTensor& a, const FTensor& w);

}  // namespace nmt8
