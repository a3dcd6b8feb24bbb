#include "nmt8/gemm.hpp"

#include <algorithm>
#include <string>

#include "nmt8/errors.hpp"
#include "nmt8/quant.hpp"

namespace nmt8 {

namespace {

void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2) throw ShapeError(std::string(what) + " must be rank 2, got " + shape_str(s));
}

// Activation codes expanded so that block b of row i holds a[4b..4b+3] four
// times over: one 16-byte vector lines up with one packed weight block.
std::vector<std::uint8_t> expand_activations(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda,
                                             std::size_t cols_p) {
  const std::size_t blocks = cols_p / kBlockDim;
  std::vector<std::uint8_t> out(m * blocks * kBlockBytes, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::uint8_t* dst = out.data() + i * blocks * kBlockBytes;
    for (std::size_t c = 0; c < k; ++c) {
      const std::uint8_t v = a[i * lda + c];
      std::uint8_t* blk = dst + (c / kBlockDim) * kBlockBytes + c % kBlockDim;
      blk[0] = v;
      blk[4] = v;
      blk[8] = v;
      blk[12] = v;
    }
  }
  return out;
}

template <std::size_t MR>
void micro_tile(const std::uint8_t* ax, std::size_t blocks, const std::uint8_t* panel, std::size_t row0,
                std::size_t n_rows, std::size_t first_out_col, std::size_t n, std::int32_t* out) {
  std::int32_t acc[MR][kBlockBytes] = {};
  const std::size_t a_stride = blocks * kBlockBytes;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::uint8_t* wb = panel + b * kBlockBytes;
    for (std::size_t ii = 0; ii < MR; ++ii) {
      const std::uint8_t* av = ax + ii * a_stride + b * kBlockBytes;
      for (std::size_t l = 0; l < kBlockBytes; ++l) {
        acc[ii][l] += static_cast<std::int32_t>(av[l]) * static_cast<std::int32_t>(wb[l]);
      }
    }
  }
  for (std::size_t ii = 0; ii < MR; ++ii) {
    for (std::size_t r = 0; r < n_rows; ++r) {
      const std::int32_t* lane = acc[ii] + r * kBlockDim;
      out[(row0 + ii) * n + first_out_col + r] = lane[0] + lane[1] + lane[2] + lane[3];
    }
  }
}

}  // namespace

PackedMatrix pack_strided(const std::uint8_t* codes, std::size_t rows, std::size_t cols, std::size_t row_stride,
                          std::size_t col_stride, std::vector<QuantParams> params) {
  if (params.size() != 1 && params.size() != rows) throw ShapeError("packed params need 1 or `rows` entries");
  PackedMatrix p;
  p.rows = rows;
  p.cols = cols;
  p.rows_p = round_up4(rows);
  p.cols_p = round_up4(cols);
  p.codes.assign(p.rows_p * p.cols_p, 0);
  p.row_code_sums.assign(rows, 0);
  p.params = std::move(params);
  for (std::size_t r = 0; r < rows; ++r) {
    std::int32_t sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::uint8_t v = codes[r * row_stride + c * col_stride];
      p.codes[packed_offset(r, c, p.cols_p)] = v;
      sum += v;
    }
    p.row_code_sums[r] = sum;
  }
  return p;
}

PackedMatrix pack(const QTensor& w) {
  require_matrix(w.shape(), "packed weight");
  return pack_strided(w.codes().data(), w.rows(), w.cols(), w.cols(), 1, w.params_list());
}

QTensor unpack(const PackedMatrix& w) {
  std::vector<std::uint8_t> codes(w.rows * w.cols);
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < w.cols; ++c) codes[r * w.cols + c] = w.codes[packed_offset(r, c, w.cols_p)];
  }
  if (w.params.size() == 1) return QTensor(Shape{w.rows, w.cols}, std::move(codes), w.params[0]);
  return QTensor(Shape{w.rows, w.cols}, std::move(codes), w.params);
}

std::vector<std::int32_t> row_code_sums(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda) {
  std::vector<std::int32_t> sums(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::int32_t s = 0;
    for (std::size_t c = 0; c < k; ++c) s += a[i * lda + c];
    sums[i] = s;
  }
  return sums;
}

std::vector<std::int32_t> row_code_sums(const QTensor& a) {
  return row_code_sums(a.codes().data(), a.rows(), a.cols(), a.cols());
}

void gemm_u8(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda, const PackedMatrix& w,
             std::int32_t* out, int workers) {
  if (k != w.cols) {
    throw ShapeError("gemm_u8 inner dimension mismatch: " + std::to_string(k) + " vs " + std::to_string(w.cols));
  }
  const std::size_t n = w.rows;
  if (m == 0 || n == 0) return;
  const std::size_t blocks = w.cols_p / kBlockDim;
  const std::vector<std::uint8_t> ax = expand_activations(a, m, k, lda, w.cols_p);
  const std::size_t a_stride = blocks * kBlockBytes;
  const auto panels = static_cast<std::ptrdiff_t>(w.rows_p / kBlockDim);

#pragma omp parallel for num_threads(workers > 1 ? workers : 1) schedule(static) if (workers > 1)
  for (std::ptrdiff_t p = 0; p < panels; ++p) {
    const std::uint8_t* panel = w.codes.data() + static_cast<std::size_t>(p) * kBlockDim * w.cols_p;
    const std::size_t first = static_cast<std::size_t>(p) * kBlockDim;
    const std::size_t n_rows = std::min(kBlockDim, n - first);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) micro_tile<4>(ax.data() + i * a_stride, blocks, panel, i, n_rows, first, n, out);
    switch (m - i) {
      case 3: micro_tile<3>(ax.data() + i * a_stride, blocks, panel, i, n_rows, first, n, out); break;
      case 2: micro_tile<2>(ax.data() + i * a_stride, blocks, panel, i, n_rows, first, n, out); break;
      case 1: micro_tile<1>(ax.data() + i * a_stride, blocks, panel, i, n_rows, first, n, out); break;
      default: break;
    }
  }
}

ATensor gemm_u8(const QTensor& a, const PackedMatrix& w, int workers) {
  require_matrix(a.shape(), "gemm_u8 activation");
  ATensor out(Shape{a.rows(), w.rows});
  gemm_u8(a.codes().data(), a.rows(), a.cols(), a.cols(), w, out.data.data(), workers);
  return out;
}

void gemm_u8_reference(const std::uint8_t* a, std::size_t m, std::size_t k, std::size_t lda, const PackedMatrix& w,
                       std::int32_t* out) {
  if (k != w.cols) throw ShapeError("gemm_u8 inner dimension mismatch");
  const std::size_t blocks = w.cols_p / kBlockDim;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < w.rows; ++j) {
      std::int32_t acc = 0;
      for (std::size_t b = 0; b < blocks; ++b) {
        const std::uint8_t* blk = w.codes.data() + packed_offset(j, b * kBlockDim, w.cols_p);
        for (std::size_t c = 0; c < kBlockDim; ++c) {
          const std::size_t kk = b * kBlockDim + c;
          if (kk < k) acc += static_cast<std::int32_t>(a[i * lda + kk]) * blk[c];
        }
      }
      out[i * w.rows + j] = acc;
    }
  }
}

ATensor gemm_u8_reference(const QTensor& a, const PackedMatrix& w) {
  require_matrix(a.shape(), "gemm_u8 activation");
  ATensor out(Shape{a.rows(), w.rows});
  gemm_u8_reference(a.codes().data(), a.rows(), a.cols(), a.cols(), w, out.data.data());
  return out;
}

FTensor affine_correct(const ATensor& acc, const QuantParams& a_params, std::span<const std::int32_t> a_row_code_sums,
                       const PackedMatrix& w) {
  if (acc.shape.size() != 2 || acc.cols() != w.rows) throw ShapeError("accumulator shape does not match weights");
  if (a_row_code_sums.size() != acc.rows()) {
    throw ContractError("affine_correct needs one activation code sum per row");
  }
  if (w.row_code_sums.size() != w.rows) throw ContractError("packed weight is missing its row code sums");
  FTensor out(acc.shape);
  for (std::size_t i = 0; i < acc.rows(); ++i) {
    for (std::size_t j = 0; j < acc.cols(); ++j) {
      out.at(i, j) = static_cast<float>(
          affine_value(acc.at(i, j), a_params, a_row_code_sums[i], w.row_params(j), w.row_code_sums[j], w.cols));
    }
  }
  return out;
}

QTensor requantize(const FTensor& t, const QuantParams& p) { return quantize(t, p); }

void gemm_f32(const float* a, std::size_t m, std::size_t k, std::size_t lda, const float* w, std::size_t n,
              std::size_t ldw, float* out, int workers) {
  const auto cols = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for num_threads(workers > 1 ? workers : 1) schedule(static) if (workers > 1)
  for (std::ptrdiff_t jj = 0; jj < cols; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    const float* wr = w + j * ldw;
    for (std::size_t i = 0; i < m; ++i) {
      const float* ar = a + i * lda;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t c = 0;
      for (; c + 4 <= k; c += 4) {
        s0 += static_cast<double>(ar[c]) * wr[c];
        s1 += static_cast<double>(ar[c + 1]) * wr[c + 1];
        s2 += static_cast<double>(ar[c + 2]) * wr[c + 2];
        s3 += static_cast<double>(ar[c + 3]) * wr[c + 3];
      }
      for (; c < k; ++c) s0 += static_cast<double>(ar[c]) * wr[c];
      out[i * n + j] = static_cast<float>((s0 + s1) + (s2 + s3));
    }
  }
}

FTensor gemm_f32(const FTensor& a, const FTensor& w, int workers) {
  if (a.cols() != w.cols()) {
    throw ShapeError("gemm_f32 inner dimension mismatch: " + shape_str(a.shape()) + " vs " + shape_str(w.shape()));
  }
  FTensor out(Shape{a.rows(), w.rows()});
  gemm_f32(a.data().data(), a.rows(), a.cols(), a.cols(), w.data().data(), w.rows(), w.cols(), out.data().data(),
           workers);
  return out;
}

FTensor gemm_f32_reference(const FTensor& a, const FTensor& w) {
  if (a.cols() != w.cols()) throw ShapeError("gemm_f32 inner dimension mismatch");
  FTensor out(Shape{a.rows(), w.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double s = 0;
      for (std::size_t c = 0; c < a.cols(); ++c) s += static_cast<double>(a.at(i, c)) * w.at(j, c);
      out.at(i, j) = static_cast<float>(s);
    }
  }
  return out;
}

}  // namespace nmt8
