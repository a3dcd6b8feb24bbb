// ops.hpp - the fine-grained operators that sit between two GEMMs
//
// Every operator has a row kernel; the tensor-level functions and the graph
// executor (fused or not) both go through the same row kernels so they agree
// bit for bit.

#pragma once

#include <cstddef>
#include <limits>
#include <span>

#include "nmt8/tensor.hpp"

namespace nmt8 {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr std::size_t kAllColumns = std::numeric_limits<std::size_t>::max();

// (x - mean) / sqrt(var + eps) * gain + bias, population variance.
void layer_norm_row(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                    std::span<float> out);

// In-place softmax of row * scale over the first `valid` entries; the rest
// are set to zero (masked).
void softmax_row(std::span<float> row, float scale = 1.0f, std::size_t valid = kAllColumns);

// out = y + gamma * x, x being the residual branch.
inline void residual_row(std::span<const float> x, std::span<const float> y, float gamma, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i] + gamma * x[i];
}

inline void relu_row(std::span<float> row) {
  for (float& v : row) v = v > 0.0f ? v : 0.0f;
}

inline void bias_add_row(std::span<float> row, std::span<const float> bias) {
  for (std::size_t i = 0; i < row.size(); ++i) row[i] += bias[i];
}

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax_row(std::span<const float> row);

FTensor layer_norm(const FTensor& x, const FTensor& gain, const FTensor& bias);
FTensor softmax_rows(const FTensor& x);
FTensor residual_combine(const FTensor& x, const FTensor& y, float gamma);
FTensor relu(FTensor x);
FTensor bias_add(FTensor x, const FTensor& bias);

}  // namespace nmt8
